#include "avvp/model.hpp"

#include <cmath>
#include <random>

namespace avvp {

namespace {
constexpr double kLogitClamp = 16.0;  // keeps every log term in the loss finite
constexpr double kProbEps = 1e-7;
// Decision heads start near-uninformative so early imbalance readings track
// learning progress instead of the raw feature-scale asymmetry between
// modalities.
constexpr double kHeadInitScale = 0.1;
}  // namespace

const char* pipeline_name(PipelineMode m) {
  return m == PipelineMode::traditional ? "traditional" : "msdu";
}

PipelineMode pipeline_from_name(const std::string& s) {
  if (s == "traditional") return PipelineMode::traditional;
  if (s == "msdu") return PipelineMode::msdu;
  throw ConfigError("unknown pipeline mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_audio == 0 || d_visual == 0 || d_hidden == 0 || num_classes == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (attention_heads != 1) throw ConfigError("only single-head attention is supported");
  if (encoder_depth != 2) throw ConfigError("only two-layer encoders are supported");
}

AvvpModel::AvvpModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init_params(seed);
}

AvvpModel::AvvpModel(ModelConfig cfg, ParameterStore params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

void AvvpModel::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto weight = [&](const std::string& name, Group g, std::size_t in, std::size_t out,
                    double scale = 1.0) {
    Tensor& t = params_.add(name, g, {in, out});
    const double bound = scale / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.values) v = u(rng);
  };
  auto bias = [&](const std::string& name, Group g, std::size_t dim) {
    params_.add(name, g, {dim});  // zeros
  };
  const std::size_t D = cfg_.d_hidden, C = cfg_.num_classes;

  weight("enc_a.w1", Group::audio, cfg_.d_audio, D);
  bias("enc_a.b1", Group::audio, D);
  weight("enc_a.w2", Group::audio, D, D);
  bias("enc_a.b2", Group::audio, D);
  weight("enc_v.w1", Group::visual, cfg_.d_visual, D);
  bias("enc_v.b1", Group::visual, D);
  weight("enc_v.w2", Group::visual, D, D);
  bias("enc_v.b2", Group::visual, D);

  if (cfg_.mode == PipelineMode::msdu) {
    for (const char* m : {"a", "v"}) {
      const Group g = m[0] == 'a' ? Group::audio : Group::visual;
      const std::string p = std::string("msdu_") + m;
      weight(p + ".cls_w", g, D, C, kHeadInitScale);
      bias(p + ".cls_b", g, C);
      weight(p + ".atn_w", g, D, 1, kHeadInitScale);
      bias(p + ".atn_b", g, 1);
    }
  }

  for (const char* n : {"self_q", "self_k", "self_v", "cross_q", "cross_k", "cross_v"}) {
    weight(std::string("xatt.") + n, Group::shared, D, D);
  }

  auto head = [&](const std::string& p) {
    weight(p + ".cls_w", Group::shared, D, C, kHeadInitScale);
    bias(p + ".cls_b", Group::shared, C);
    weight(p + ".atn_w", Group::shared, D, 1, kHeadInitScale);
    bias(p + ".atn_b", Group::shared, 1);
  };
  if (cfg_.mode == PipelineMode::traditional) {
    head("head");  // one classifier/attention pair shared across modalities
  } else {
    head("head_a");
    head("head_v");
  }
}

Val AvvpModel::bind(Tape& tape, const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Val v = tape.param(params_.at(name));
  bound_.emplace(name, v);
  return v;
}

Val AvvpModel::encode_one(Tape& tape, Val x, const std::string& prefix) {
  const Shape& s = tape.value(x).shape;
  const std::size_t N = s[0], T = s[1], Din = s[2];
  Val flat = tape.reshape(x, {N * T, Din});
  Val h = tape.relu(tape.linear(flat, bind(tape, prefix + ".w1"), bind(tape, prefix + ".b1")));
  Val e = tape.linear(h, bind(tape, prefix + ".w2"), bind(tape, prefix + ".b2"));
  return tape.reshape(e, {N, T, cfg_.d_hidden});
}

std::pair<Val, Val> AvvpModel::encode(Tape& tape, Val audio, Val visual) {
  const Shape& sa = tape.value(audio).shape;
  const Shape& sv = tape.value(visual).shape;
  if (sa.size() != 3 || sa[2] != cfg_.d_audio) {
    throw DimensionError("encode: audio shape " + shape_str(sa) + " does not match input dim " +
                         std::to_string(cfg_.d_audio));
  }
  if (sv.size() != 3 || sv[2] != cfg_.d_visual) {
    throw DimensionError("encode: visual shape " + shape_str(sv) + " does not match input dim " +
                         std::to_string(cfg_.d_visual));
  }
  return {encode_one(tape, audio, "enc_a"), encode_one(tape, visual, "enc_v")};
}

Val AvvpModel::attend(Tape& tape, Val q_in, Val kv_in, Val wq, Val wk, Val wv) {
  const Shape& s = tape.value(q_in).shape;
  const std::size_t N = s[0], T = s[1], D = s[2];
  const std::size_t Tk = tape.value(kv_in).shape[1];
  auto project = [&](Val x, Val w, std::size_t Tx) {
    return tape.reshape(tape.matmul(tape.reshape(x, {N * Tx, D}), w), {N, Tx, D});
  };
  Val q = project(q_in, wq, T);
  Val k = project(kv_in, wk, Tk);
  Val v = project(kv_in, wv, Tk);
  Val scores = tape.affine(tape.matmul(q, tape.transpose(k, {0, 2, 1})),
                           1.0 / std::sqrt(static_cast<double>(D)), 0.0);
  Val att = tape.softmax(scores, {2});
  return tape.matmul(att, v);
}

std::pair<Val, Val> AvvpModel::cross_attend(Tape& tape, Val e_a, Val e_v) {
  const Shape& sa = tape.value(e_a).shape;
  const Shape& sv = tape.value(e_v).shape;
  if (sa.size() != 3 || sv.size() != 3 || sa[2] != cfg_.d_hidden || sv[2] != cfg_.d_hidden ||
      sa[0] != sv[0]) {
    throw DimensionError("cross_attend: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sv));
  }
  Val sq = bind(tape, "xatt.self_q"), sk = bind(tape, "xatt.self_k"), sv_ = bind(tape, "xatt.self_v");
  Val cq = bind(tape, "xatt.cross_q"), ck = bind(tape, "xatt.cross_k"), cv = bind(tape, "xatt.cross_v");
  Val f_a = tape.add(e_a, tape.add(attend(tape, e_a, e_a, sq, sk, sv_),
                                   attend(tape, e_a, e_v, cq, ck, cv)));
  Val f_v = tape.add(e_v, tape.add(attend(tape, e_v, e_v, sq, sk, sv_),
                                   attend(tape, e_v, e_a, cq, ck, cv)));
  return {f_a, f_v};
}

std::pair<Val, Val> AvvpModel::head_pair(Tape& tape, Val x, const std::string& prefix) {
  const Shape& s = tape.value(x).shape;
  const std::size_t N = s[0], T = s[1], D = s[2];
  Val flat = tape.reshape(x, {N * T, D});
  Val logits = tape.clamp(tape.linear(flat, bind(tape, prefix + ".cls_w"), bind(tape, prefix + ".cls_b")),
                          -kLogitClamp, kLogitClamp);
  Val p = tape.reshape(tape.sigmoid(logits), {N, T, cfg_.num_classes});
  Val a_logit = tape.linear(flat, bind(tape, prefix + ".atn_w"), bind(tape, prefix + ".atn_b"));
  Val a = tape.reshape(tape.sigmoid(a_logit), {N, T, 1});
  return {p, a};
}

AvvpModel::Heads AvvpModel::decision_heads(Tape& tape, Val x_a, Val x_v, HeadSet set) {
  Heads out;
  if (set == HeadSet::msdu) {
    if (cfg_.mode != PipelineMode::msdu) {
      throw ConfigError("msdu decision heads requested on a traditional-mode model");
    }
    std::tie(out.p_a, out.a_a) = head_pair(tape, x_a, "msdu_a");
    std::tie(out.p_v, out.a_v) = head_pair(tape, x_v, "msdu_v");
  } else if (cfg_.mode == PipelineMode::traditional) {
    std::tie(out.p_a, out.a_a) = head_pair(tape, x_a, "head");
    std::tie(out.p_v, out.a_v) = head_pair(tape, x_v, "head");
  } else {
    std::tie(out.p_a, out.a_a) = head_pair(tape, x_a, "head_a");
    std::tie(out.p_v, out.a_v) = head_pair(tape, x_v, "head_v");
  }
  return out;
}

Val AvvpModel::aggregate_video(Tape& tape, Val p_a, Val p_v, Val a_a, Val a_v,
                               AggregationKind kind) {
  const Shape& spa = tape.value(p_a).shape;
  const Shape& spv = tape.value(p_v).shape;
  const Shape& saa = tape.value(a_a).shape;
  const Shape& sav = tape.value(a_v).shape;
  if (spa.size() != 3 || spv != spa || saa.size() != 3 || sav != saa || saa[2] != 1 ||
      saa[0] != spa[0] || saa[1] != spa[1]) {
    throw DimensionError("aggregate_video: incompatible shapes p=" + shape_str(spa) +
                         " a=" + shape_str(saa));
  }
  Val p_cat = tape.concat({p_a, p_v}, 1);  // N x 2T x C
  if (kind == AggregationKind::mean_pool) return tape.mean(p_cat, {1}, false);
  Val a_cat = tape.concat({a_a, a_v}, 1);  // N x 2T x 1
  Val w = tape.softmax(a_cat, {1});
  return tape.sum(tape.mul(w, p_cat), {1}, false);
}

Val AvvpModel::modality_score(Tape& tape, Val p, Val a) {
  Val w = tape.softmax(a, {1});
  return tape.sum(tape.mul(w, p), {1}, false);
}

AvvpModel::Forward AvvpModel::forward(Tape& tape, const VideoBatch& batch) {
  bound_.clear();
  Val a_in = tape.input(batch.audio);
  Val v_in = tape.input(batch.visual);
  Forward fw;
  std::tie(fw.e_a, fw.e_v) = encode(tape, a_in, v_in);
  if (cfg_.mode == PipelineMode::msdu) {
    Heads ms = decision_heads(tape, fw.e_a, fw.e_v, HeadSet::msdu);
    fw.p_ms_a = ms.p_a;
    fw.p_ms_v = ms.p_v;
    fw.a_ms_a = ms.a_a;
    fw.a_ms_v = ms.a_v;
    fw.s_ms_a = modality_score(tape, ms.p_a, ms.a_a);
    fw.s_ms_v = modality_score(tape, ms.p_v, ms.a_v);
    fw.has_msdu = true;
  }
  std::tie(fw.f_a, fw.f_v) = cross_attend(tape, fw.e_a, fw.e_v);
  Heads fused = decision_heads(tape, fw.f_a, fw.f_v, HeadSet::fused);
  fw.p_a = fused.p_a;
  fw.p_v = fused.p_v;
  fw.a_a = fused.a_a;
  fw.a_v = fused.a_v;
  fw.p_video = aggregate_video(tape, fw.p_a, fw.p_v, fw.a_a, fw.a_v, cfg_.aggregation);
  bound_.clear();
  return fw;
}

ForwardCache AvvpModel::cache_from(const Tape& tape, const Forward& fw) const {
  ForwardCache c;
  c.e_a = tape.value(fw.e_a);
  c.e_v = tape.value(fw.e_v);
  c.f_a = tape.value(fw.f_a);
  c.f_v = tape.value(fw.f_v);
  c.p_a = tape.value(fw.p_a);
  c.p_v = tape.value(fw.p_v);
  c.a_a = tape.value(fw.a_a);
  c.a_v = tape.value(fw.a_v);
  c.p_video = tape.value(fw.p_video);
  if (fw.has_msdu) {
    c.p_ms_a = tape.value(fw.p_ms_a);
    c.p_ms_v = tape.value(fw.p_ms_v);
    c.a_ms_a = tape.value(fw.a_ms_a);
    c.a_ms_v = tape.value(fw.a_ms_v);
    c.s_ms_a = tape.value(fw.s_ms_a);
    c.s_ms_v = tape.value(fw.s_ms_v);
  }
  return c;
}

Val mmil_loss(Tape& tape, Val p_video, const Tensor& labels) {
  const Shape& sp = tape.value(p_video).shape;
  if (sp.size() != 2 || labels.shape != sp) {
    throw DimensionError("mmil_loss: prediction shape " + shape_str(sp) +
                         " does not match labels " + shape_str(labels.shape));
  }
  Tensor one_minus(labels.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) one_minus.values[i] = 1.0 - labels.values[i];
  Val y = tape.input(labels);
  Val ny = tape.input(std::move(one_minus));
  Val pc = tape.clamp(p_video, kProbEps, 1.0 - kProbEps);
  Val pos = tape.mul(y, tape.log(pc));
  Val neg = tape.mul(ny, tape.log(tape.affine(pc, -1.0, 1.0)));
  return tape.affine(tape.mean_all(tape.add(pos, neg)), -1.0, 0.0);
}

double bce_value(const Tensor& p, const Tensor& labels) {
  if (p.shape != labels.shape) {
    throw DimensionError("bce_value: shape mismatch " + shape_str(p.shape) + " vs " +
                         shape_str(labels.shape));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::min(std::max(p.values[i], kProbEps), 1.0 - kProbEps);
    acc += labels.values[i] * std::log(pc) + (1.0 - labels.values[i]) * std::log(1.0 - pc);
  }
  return -acc / static_cast<double>(p.size());
}

Tensor analytic_logit_grad(const Tensor& z, const Tensor& labels) {
  if (z.shape != labels.shape) {
    throw DimensionError("analytic_logit_grad: shape mismatch " + shape_str(z.shape) + " vs " +
                         shape_str(labels.shape));
  }
  Tensor g(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i) {
    g.values[i] = 1.0 / (1.0 + std::exp(-z.values[i])) - labels.values[i];
  }
  return g;
}

}  // namespace avvp
