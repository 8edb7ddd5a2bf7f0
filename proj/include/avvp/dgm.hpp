#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avvp/param_store.hpp"
#include "avvp/tensor.hpp"

namespace avvp::dgm {

// Which terms feed the imbalance ratio: correct-class score sums, mean-score
// discrepancies between correct and wrong classes, or both.
enum class ImbalanceMode { score, discrepancy, fusion };

const char* imbalance_mode_name(ImbalanceMode m);
ImbalanceMode imbalance_mode_from_name(const std::string& s);

enum class ModulationScope { owned, encoders_only };

struct ImbalanceReport {
  double omega_v_minus_a = 1.0;
  double omega_a_minus_v = 1.0;
  double mu_a = 1.0;
  double mu_v = 1.0;
  double score_sum_a = 0.0;
  double score_sum_v = 0.0;
  double disc_sum_a = 0.0;
  double disc_sum_v = 0.0;
  bool degenerate = false;  // nonpositive ratio terms; omega forced to 1
};

struct OptimizerConfig {
  double learning_rate = 5e-4;
  double gamma = 0.1;
  ImbalanceMode mode = ImbalanceMode::fusion;
  bool noise_enabled = false;
  double lr_decay_factor = 0.25;
  std::size_t lr_decay_every = 6;  // epochs
  std::size_t epochs = 25;
  bool use_adam = false;  // modulates the raw gradient before moment accumulation
  ModulationScope scope = ModulationScope::owned;
  bool force_omega_one = false;

  void validate() const;
};

// Attention-weighted temporal pooling of one modality's snippet
// probabilities: softmax over that modality's T raw scores only.
// p is N x T x C, a is N x T x 1; result N x C in (0,1).
Tensor modality_video_scores(const Tensor& p, const Tensor& a);

// Per video: mean score over positive classes minus mean over negative
// classes (0 when a video has no negative class). Throws LabelingError on an
// all-zero label row.
std::vector<double> discrepancy_term(const Tensor& s, const Tensor& labels);

// Relative optimization progress visual-vs-audio over the batch. The
// denominator is guarded at 1e-8 and omega is clipped to [1e-3, 1e3];
// nonpositive numerator or denominator marks the batch degenerate and forces
// omega to 1. omega_a_minus_v is the reciprocal of omega_v_minus_a.
ImbalanceReport compute_omega(const Tensor& s_a, const Tensor& s_v, const Tensor& labels,
                              ImbalanceMode mode);

// Balance coefficients: the dominant side gets 1 - tanh(gamma * omega), the
// other stays 1. Returns (mu_a, mu_v), both in (0,1].
std::pair<double, double> compute_mu(double omega_v_minus_a, double gamma);

// I.i.d. zero-mean Gaussian tensor with variance (mu^2 + 1) * sigma2.
Tensor noise_sample(const Shape& shape, double mu, double sigma2, std::mt19937_64& rng);

// Modulated descent: audio-owned gradients scaled by mu_a, visual-owned by
// mu_v, shared left untouched; optional generalization noise on modulated
// tensors; gradients zeroed after the update. The plain step is the same
// update with both coefficients fixed at 1 and no imbalance machinery.
class DgmOptimizer {
 public:
  explicit DgmOptimizer(OptimizerConfig cfg);

  const OptimizerConfig& config() const { return cfg_; }
  double lr_for_epoch(std::size_t epoch) const;

  // compute_omega + compute_mu with instrumentation counters and the
  // force_omega_one switch applied.
  ImbalanceReport measure(const Tensor& s_a, const Tensor& s_v, const Tensor& labels);

  void step(ParameterStore& params, const ImbalanceReport& report, double lr,
            std::mt19937_64& rng);
  void step_plain(ParameterStore& params, double lr);

  std::uint64_t omega_calls() const { return omega_calls_; }
  std::uint64_t mu_calls() const { return mu_calls_; }

 private:
  void apply(ParameterStore& params, const ImbalanceReport& report, double lr,
             std::mt19937_64* rng, bool modulated);

  OptimizerConfig cfg_;
  std::uint64_t omega_calls_ = 0;
  std::uint64_t mu_calls_ = 0;
  // Adam state, keyed by parameter position in the store.
  std::vector<std::vector<double>> adam_m_, adam_v_;
  std::uint64_t adam_t_ = 0;
};

}  // namespace avvp::dgm
