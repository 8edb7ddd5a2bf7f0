#include "avvp/dgm.hpp"

#include <algorithm>
#include <cmath>

namespace avvp::dgm {

namespace {
constexpr double kDenGuard = 1e-8;
constexpr double kOmegaLo = 1e-3;
constexpr double kOmegaHi = 1e3;
constexpr double kMuFloor = 1e-300;  // keeps mu > 0 under double saturation of tanh

// 1 - tanh(x) == 2 / (1 + exp(2x)); the direct form collapses to 0 for x > ~19.
double one_minus_tanh(double x) {
  if (x > 354.0) return kMuFloor;
  return std::max(2.0 / (1.0 + std::exp(2.0 * x)), kMuFloor);
}
}  // namespace

const char* imbalance_mode_name(ImbalanceMode m) {
  switch (m) {
    case ImbalanceMode::score: return "score";
    case ImbalanceMode::discrepancy: return "discrepancy";
    case ImbalanceMode::fusion: return "fusion";
  }
  return "?";
}

ImbalanceMode imbalance_mode_from_name(const std::string& s) {
  if (s == "score") return ImbalanceMode::score;
  if (s == "discrepancy") return ImbalanceMode::discrepancy;
  if (s == "fusion") return ImbalanceMode::fusion;
  throw ConfigError("unknown imbalance mode '" + s + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(lr_decay_factor > 0.0) || lr_decay_every == 0) throw ConfigError("invalid lr schedule");
  if (epochs == 0) throw ConfigError("epochs must be positive");
}

Tensor modality_video_scores(const Tensor& p, const Tensor& a) {
  if (p.rank() != 3 || a.rank() != 3 || a.shape[2] != 1 || a.shape[0] != p.shape[0] ||
      a.shape[1] != p.shape[1]) {
    throw ConfigError("modality_video_scores: missing or mismatched branch outputs, p=" +
                      shape_str(p.shape) + " a=" + shape_str(a.shape));
  }
  const std::size_t N = p.shape[0], T = p.shape[1], C = p.shape[2];
  Tensor s({N, C});
  std::vector<double> w(T);
  for (std::size_t n = 0; n < N; ++n) {
    double mx = a.at3(n, 0, 0);
    for (std::size_t t = 1; t < T; ++t) mx = std::max(mx, a.at3(n, t, 0));
    double z = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      w[t] = std::exp(a.at3(n, t, 0) - mx);
      z += w[t];
    }
    for (std::size_t t = 0; t < T; ++t) w[t] /= z;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) s.at2(n, c) += w[t] * p.at3(n, t, c);
    }
  }
  return s;
}

std::vector<double> discrepancy_term(const Tensor& s, const Tensor& labels) {
  if (s.rank() != 2 || s.shape != labels.shape) {
    throw DimensionError("discrepancy_term: shape mismatch " + shape_str(s.shape) + " vs " +
                         shape_str(labels.shape));
  }
  const std::size_t N = s.shape[0], C = s.shape[1];
  std::vector<double> out(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    double pos = 0.0, neg = 0.0;
    std::size_t npos = 0, nneg = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (labels.at2(n, c) != 0.0) {
        pos += s.at2(n, c);
        ++npos;
      } else {
        neg += s.at2(n, c);
        ++nneg;
      }
    }
    if (npos == 0) {
      throw LabelingError("discrepancy_term: video " + std::to_string(n) +
                          " has no positive label");
    }
    out[n] = pos / static_cast<double>(npos) - (nneg ? neg / static_cast<double>(nneg) : 0.0);
  }
  return out;
}

ImbalanceReport compute_omega(const Tensor& s_a, const Tensor& s_v, const Tensor& labels,
                              ImbalanceMode mode) {
  if (s_a.shape != s_v.shape || s_a.shape != labels.shape || s_a.rank() != 2) {
    throw DimensionError("compute_omega: shape mismatch a=" + shape_str(s_a.shape) +
                         " v=" + shape_str(s_v.shape) + " y=" + shape_str(labels.shape));
  }
  if (s_a.shape[0] == 0) throw UsageError("compute_omega: empty batch");

  ImbalanceReport r;
  for (std::size_t i = 0; i < s_a.size(); ++i) {
    r.score_sum_a += s_a.values[i] * labels.values[i];
    r.score_sum_v += s_v.values[i] * labels.values[i];
  }
  if (mode != ImbalanceMode::score) {
    for (double d : discrepancy_term(s_a, labels)) r.disc_sum_a += d;
    for (double d : discrepancy_term(s_v, labels)) r.disc_sum_v += d;
  }

  double num = 0.0, den = 0.0;
  switch (mode) {
    case ImbalanceMode::score:
      num = r.score_sum_v;
      den = r.score_sum_a;
      break;
    case ImbalanceMode::discrepancy:
      num = r.disc_sum_v;
      den = r.disc_sum_a;
      break;
    case ImbalanceMode::fusion:
      num = r.score_sum_v + r.disc_sum_v;
      den = r.score_sum_a + r.disc_sum_a;
      break;
  }
  if (num <= 0.0 || den <= 0.0) {
    r.degenerate = true;  // caller logs the degenerate-batch warning
    r.omega_v_minus_a = 1.0;
    r.omega_a_minus_v = 1.0;
    return r;
  }
  den = std::max(den, kDenGuard);
  r.omega_v_minus_a = std::clamp(num / den, kOmegaLo, kOmegaHi);
  r.omega_a_minus_v = 1.0 / r.omega_v_minus_a;
  return r;
}

std::pair<double, double> compute_mu(double omega_v_minus_a, double gamma) {
  if (!(omega_v_minus_a > 0.0)) throw UsageError("compute_mu: omega must be positive");
  if (!(gamma > 0.0)) throw UsageError("compute_mu: gamma must be positive");
  const double omega_a_minus_v = 1.0 / omega_v_minus_a;
  const double mu_v = omega_v_minus_a > 1.0 ? one_minus_tanh(gamma * omega_v_minus_a) : 1.0;
  const double mu_a = omega_a_minus_v > 1.0 ? one_minus_tanh(gamma * omega_a_minus_v) : 1.0;
  return {mu_a, mu_v};
}

Tensor noise_sample(const Shape& shape, double mu, double sigma2, std::mt19937_64& rng) {
  if (sigma2 < 0.0) throw UsageError("noise_sample: variance must be nonnegative");
  Tensor out(shape);
  if (sigma2 == 0.0) return out;
  const double sd = std::sqrt((mu * mu + 1.0) * sigma2);
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : out.values) v = n(rng);
  return out;
}

DgmOptimizer::DgmOptimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

double DgmOptimizer::lr_for_epoch(std::size_t epoch) const {
  return cfg_.learning_rate * std::pow(cfg_.lr_decay_factor,
                                       static_cast<double>(epoch / cfg_.lr_decay_every));
}

ImbalanceReport DgmOptimizer::measure(const Tensor& s_a, const Tensor& s_v, const Tensor& labels) {
  ++omega_calls_;
  ImbalanceReport r = compute_omega(s_a, s_v, labels, cfg_.mode);
  if (cfg_.force_omega_one) {
    r.omega_v_minus_a = 1.0;
    r.omega_a_minus_v = 1.0;
  }
  ++mu_calls_;
  std::tie(r.mu_a, r.mu_v) = compute_mu(r.omega_v_minus_a, cfg_.gamma);
  return r;
}

namespace {
double element_variance(const std::vector<double>& g) {
  if (g.empty()) return 0.0;
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - mean) * (v - mean);
  return var / static_cast<double>(g.size());
}

bool is_encoder(const std::string& name) { return name.rfind("enc_", 0) == 0; }
}  // namespace

void DgmOptimizer::apply(ParameterStore& params, const ImbalanceReport& report, double lr,
                         std::mt19937_64* rng, bool modulated) {
  const bool adam = cfg_.use_adam;
  if (adam && adam_m_.empty()) {
    adam_m_.resize(params.size());
    adam_v_.resize(params.size());
  }
  if (adam) ++adam_t_;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = adam ? 1.0 - std::pow(b1, static_cast<double>(adam_t_)) : 1.0;
  const double bc2 = adam ? 1.0 - std::pow(b2, static_cast<double>(adam_t_)) : 1.0;

  std::size_t pi = 0;
  for (auto& e : params.entries()) {
    Tensor& t = e.tensor;
    if (!t.has_grad()) {
      throw UsageError("step: parameter '" + e.name + "' has no gradient; run backward first");
    }
    double mu = 1.0;
    bool in_scope = false;
    if (modulated && e.group != Group::shared) {
      in_scope = cfg_.scope == ModulationScope::owned || is_encoder(e.name);
      if (in_scope) mu = e.group == Group::audio ? report.mu_a : report.mu_v;
    }
    std::vector<double> g_eff(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) g_eff[i] = mu * t.grad[i];
    if (modulated && in_scope && cfg_.noise_enabled && rng) {
      const double sigma2 = element_variance(t.grad);
      Tensor eps_t = noise_sample(t.shape, mu, sigma2, *rng);
      for (std::size_t i = 0; i < t.size(); ++i) g_eff[i] += eps_t.values[i];
    }
    if (adam) {
      auto& m = adam_m_[pi];
      auto& v = adam_v_[pi];
      if (m.empty()) {
        m.assign(t.size(), 0.0);
        v.assign(t.size(), 0.0);
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g_eff[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g_eff[i] * g_eff[i];
        t.values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) t.values[i] -= lr * g_eff[i];
    }
    t.zero_grad();
    ++pi;
  }
}

void DgmOptimizer::step(ParameterStore& params, const ImbalanceReport& report, double lr,
                        std::mt19937_64& rng) {
  apply(params, report, lr, &rng, true);
}

void DgmOptimizer::step_plain(ParameterStore& params, double lr) {
  static const ImbalanceReport kUnit;
  apply(params, kUnit, lr, nullptr, false);
}

}  // namespace avvp::dgm
