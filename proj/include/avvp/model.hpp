#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>

#include "avvp/labels.hpp"
#include "avvp/param_store.hpp"
#include "avvp/tape.hpp"

namespace avvp {

enum class PipelineMode { traditional, msdu };
enum class AggregationKind { attentive, mean_pool };

const char* pipeline_name(PipelineMode m);
PipelineMode pipeline_from_name(const std::string& s);

struct ModelConfig {
  std::size_t d_audio = 128;
  std::size_t d_visual = 128;
  std::size_t d_hidden = 512;
  std::size_t num_classes = 25;
  PipelineMode mode = PipelineMode::msdu;
  std::size_t attention_heads = 1;  // single-head scaled dot-product only
  std::size_t encoder_depth = 2;    // two-layer snippet MLP only
  AggregationKind aggregation = AggregationKind::attentive;

  void validate() const;
};

// One weakly-labeled batch: per-snippet features plus multi-hot video labels.
// Snippet ground truth (evaluation only) is carried as non-owning pointers.
struct VideoBatch {
  Tensor audio;   // N x T x Da
  Tensor visual;  // N x T x Dv
  Tensor labels;  // N x C, entries in {0,1}
  const LabelArray* truth_audio = nullptr;
  const LabelArray* truth_visual = nullptr;

  std::size_t n() const { return audio.shape[0]; }
  std::size_t t() const { return audio.shape[1]; }
  std::size_t c() const { return labels.shape[1]; }
};

// Value snapshots of every intermediate of one forward pass. MSDU fields are
// populated only in msdu mode.
struct ForwardCache {
  Tensor e_a, e_v;
  Tensor f_a, f_v;
  Tensor p_a, p_v;  // N x T x C snippet probabilities (fused heads)
  Tensor a_a, a_v;  // N x T x 1 attention scores (fused heads)
  Tensor p_video;   // N x C
  std::optional<Tensor> p_ms_a, p_ms_v, a_ms_a, a_ms_v;
  std::optional<Tensor> s_ms_a, s_ms_v;  // N x C per-modality video scores
};

enum class HeadSet { fused, msdu };

// Two-branch weakly-supervised parser. The traditional pipeline runs
// encoders -> cross-attention -> shared decision heads -> attentive MMIL
// pooling; msdu mode adds pre-fusion modality-separated decision heads
// (measurement branch) and gives the fused branch modality-specific heads.
class AvvpModel {
 public:
  AvvpModel(ModelConfig cfg, std::uint64_t seed);
  AvvpModel(ModelConfig cfg, ParameterStore params);  // e.g. from a checkpoint

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  struct Forward {
    Val e_a, e_v;
    Val f_a, f_v;
    Val p_a, p_v, a_a, a_v;
    Val p_video;
    Val p_ms_a, p_ms_v, a_ms_a, a_ms_v;  // valid iff has_msdu
    Val s_ms_a, s_ms_v;
    bool has_msdu = false;
  };

  Forward forward(Tape& tape, const VideoBatch& batch);
  ForwardCache cache_from(const Tape& tape, const Forward& fw) const;

  // Pipeline stages, exposed for targeted tests.
  std::pair<Val, Val> encode(Tape& tape, Val audio, Val visual);
  std::pair<Val, Val> cross_attend(Tape& tape, Val e_a, Val e_v);
  struct Heads {
    Val p_a, p_v, a_a, a_v;
  };
  Heads decision_heads(Tape& tape, Val x_a, Val x_v, HeadSet set);

  // Joint softmax over modality x time, then attention-weighted pooling of
  // snippet probabilities. Scores are raw; normalization happens here.
  static Val aggregate_video(Tape& tape, Val p_a, Val p_v, Val a_a, Val a_v,
                             AggregationKind kind = AggregationKind::attentive);

  // Single-modality video-level score: softmax over that modality's T scores.
  static Val modality_score(Tape& tape, Val p, Val a);

 private:
  Val bind(Tape& tape, const std::string& name);
  Val encode_one(Tape& tape, Val x, const std::string& prefix);
  Val attend(Tape& tape, Val q_in, Val kv_in, Val wq, Val wk, Val wv);
  std::pair<Val, Val> head_pair(Tape& tape, Val x, const std::string& prefix);
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  ParameterStore params_;
  std::unordered_map<std::string, Val> bound_;  // per-forward bind cache
};

// Eq.-style weak supervision objective: clamped binary cross-entropy of the
// video-level prediction against the multi-hot label, averaged over N*C.
Val mmil_loss(Tape& tape, Val p_video, const Tensor& labels);

// Same formula on plain tensors (logging paths, no gradient).
double bce_value(const Tensor& p, const Tensor& labels);

// Closed-form gradient of the unaveraged loss w.r.t. video-level logits:
// sigmoid(z) - Y.
Tensor analytic_logit_grad(const Tensor& z, const Tensor& labels);

}  // namespace avvp
