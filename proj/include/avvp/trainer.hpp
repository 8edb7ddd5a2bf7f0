#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avvp/dgm.hpp"
#include "avvp/metrics.hpp"
#include "avvp/model.hpp"
#include "avvp/synth.hpp"

namespace avvp {

// Everything that determines a run. A saved RunConfig reproduces its run
// byte-for-byte under the same build.
struct RunConfig {
  std::string dataset_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  PipelineMode mode = PipelineMode::msdu;
  std::optional<dgm::ImbalanceMode> dgm_mode = dgm::ImbalanceMode::fusion;  // nullopt = off
  double gamma = 0.1;
  bool noise = false;
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  double learning_rate = 5e-4;
  double lr_decay_factor = 0.25;
  std::size_t lr_decay_every = 6;
  std::size_t hidden_dim = 64;
  bool adam = false;
  dgm::ModulationScope scope = dgm::ModulationScope::owned;
  bool force_omega_one = false;
  AggregationKind aggregation = AggregationKind::attentive;
  // Weight of the per-modality measurement-branch losses in the msdu
  // objective; the logged per-modality losses are the unweighted values.
  double aux_weight = 0.25;
  metrics::EvalOptions eval;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);  // missing fields keep defaults

  ModelConfig model_config(const synth::Dataset& ds) const;
  dgm::OptimizerConfig optimizer_config() const;
};

struct ImbalanceRow {
  std::size_t epoch = 0, batch = 0;
  dgm::ImbalanceReport report;
};

struct EpochImbalance {
  std::size_t epoch = 0, batches = 0, degenerate_batches = 0;
  double mean_omega_v_minus_a = 1.0, mean_mu_a = 1.0, mean_mu_v = 1.0;
};

struct RunReport {
  nlohmann::json config_echo;
  std::vector<double> loss_a, loss_v, loss_total;  // one entry per epoch
  std::vector<EpochImbalance> imbalance;
  metrics::MetricsReport val_metrics, test_metrics;
  double final_loss_gap = 0.0;  // last-epoch |loss_a - loss_v|
  bool confounded_modality_losses = false;
  std::uint64_t omega_calls = 0, mu_calls = 0;
  std::size_t start_epoch = 0, epochs_run = 0;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOutput {
  RunReport report;
  ParameterStore params;
  std::vector<ImbalanceRow> imbalance_rows;
};

// Runs the full loop (forward -> loss -> backward -> [measure+modulate] ->
// step with the decayed learning rate) and evaluates val/test at the end.
// resume_checkpoint restores parameters and continues the schedule at the
// stored epoch. Aborts with NumericError naming the offending batch if the
// loss goes non-finite.
TrainOutput train_run(const RunConfig& rc, const synth::Dataset& train, const synth::Dataset& val,
                      const synth::Dataset& test, std::ostream* log = nullptr,
                      const std::string& resume_checkpoint = "");

// Writes run_report.json, losses.csv, imbalance.csv, metrics.json and
// model.ckpt into out_dir.
void write_run_artifacts(const std::filesystem::path& out_dir, const RunConfig& rc,
                         const TrainOutput& out);

// Snippet predictions of the fused branch, binarized at the eval threshold.
std::pair<LabelArray, LabelArray> predict_labels(AvvpModel& model, const synth::Dataset& ds,
                                                 std::size_t batch_size, double threshold);

metrics::MetricsReport evaluate_dataset(AvvpModel& model, const synth::Dataset& ds,
                                        std::size_t batch_size, const metrics::EvalOptions& opts);

// Loads a checkpoint (parameters + model config metadata), validates it
// against the dataset dims, and scores the requested split deterministically.
metrics::MetricsReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                                           const synth::Dataset& ds,
                                           const metrics::EvalOptions& opts,
                                           std::size_t batch_size = 64);

struct AblationSpec {
  std::vector<std::string> arms = {"baseline", "dgm", "dgm_msdu"};
  std::vector<double> gammas = {0.1};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  RunConfig base;
};

struct AblationRow {
  std::string arm;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // or the error message
  metrics::MetricsReport test;
  double final_loss_gap = 0.0;
};

// Arms: baseline (traditional, DGM off), dgm (traditional + DGM),
// msdu (msdu pipeline, DGM off), dgm_msdu (msdu + DGM). Failures are
// recorded per cell and the grid continues.
RunConfig arm_config(const RunConfig& base, const std::string& arm, double gamma,
                     std::uint64_t seed);
std::vector<AblationRow> run_ablation(const AblationSpec& spec, const synth::Dataset& train,
                                      const synth::Dataset& val, const synth::Dataset& test,
                                      std::ostream* log = nullptr);

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_ablation_summary_csv(const std::filesystem::path& path,
                                const std::vector<AblationRow>& rows);

// Fixed-format float used in every CSV so identical doubles render
// identically across runs.
std::string csv_num(double v);

}  // namespace avvp
