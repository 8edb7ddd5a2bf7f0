#include "avvp/synth.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"

namespace avvp::synth {

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t idx) {
  // splitmix64 over (seed, stream, idx)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1) + idx * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct EventSpec {
  std::size_t cls, start, end;
  bool on_audio, on_visual;
};

}  // namespace

void SynthConfig::validate() const {
  if (videos == 0 || snippets == 0 || classes == 0 || d_audio == 0 || d_visual == 0) {
    throw ConfigError("synth: counts and dims must be positive");
  }
  if (dominance < 0.0 || dominance > 1.0) throw ConfigError("synth: dominance must be in [0,1]");
  if (!(event_density > 0.0)) throw ConfigError("synth: event density must be positive");
  if (noise_scale < 0.0) throw ConfigError("synth: noise scale must be nonnegative");
}

LabelArray Dataset::truth_audio_visual() const {
  LabelArray av(truth_audio.n, truth_audio.t, truth_audio.c);
  for (std::size_t i = 0; i < av.v.size(); ++i) av.v[i] = truth_audio.v[i] & truth_visual.v[i];
  return av;
}

VideoBatch Dataset::make_batch(const std::vector<std::size_t>& indices) const {
  const std::size_t T = cfg.snippets, Da = cfg.d_audio, Dv = cfg.d_visual, C = cfg.classes;
  VideoBatch b;
  b.audio = Tensor({indices.size(), T, Da});
  b.visual = Tensor({indices.size(), T, Dv});
  b.labels = Tensor({indices.size(), C});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t n = indices[i];
    std::copy_n(audio.data() + n * T * Da, T * Da, b.audio.values.data() + i * T * Da);
    std::copy_n(visual.data() + n * T * Dv, T * Dv, b.visual.values.data() + i * T * Dv);
    for (std::size_t c = 0; c < C; ++c) b.labels.at2(i, c) = label(n, c);
  }
  return b;
}

VideoBatch Dataset::full_batch() const {
  std::vector<std::size_t> idx(num_videos());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(idx);
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t N = cfg.videos, T = cfg.snippets, C = cfg.classes;
  const std::size_t Da = cfg.d_audio, Dv = cfg.d_visual;

  Dataset ds;
  ds.cfg = cfg;
  ds.audio.assign(N * T * Da, 0.0);
  ds.visual.assign(N * T * Dv, 0.0);
  ds.video_labels.assign(N * C, 0);
  ds.truth_audio = LabelArray(N, T, C);
  ds.truth_visual = LabelArray(N, T, C);

  // Unit-norm class prototypes, one per modality.
  std::mt19937_64 proto_rng(mix_seed(cfg.seed, 0, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto make_protos = [&](std::size_t dim) {
    std::vector<double> p(C * dim);
    for (std::size_t c = 0; c < C; ++c) {
      double norm2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        p[c * dim + d] = gauss(proto_rng);
        norm2 += p[c * dim + d] * p[c * dim + d];
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t d = 0; d < dim; ++d) p[c * dim + d] *= inv;
    }
    return p;
  };
  const std::vector<double> proto_a = make_protos(Da);
  const std::vector<double> proto_v = make_protos(Dv);

  const double amp_a = 1.0 + cfg.dominance;
  const double amp_v = 1.0 - cfg.dominance;
  const std::size_t max_len = std::max<std::size_t>(2, T / 2);

  std::size_t saturated = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 1, n));
    std::poisson_distribution<std::size_t> pois(cfg.event_density);
    const std::size_t events = std::max<std::size_t>(1, pois(rng));

    std::uniform_int_distribution<std::size_t> cls_d(0, C - 1);
    std::uniform_int_distribution<std::size_t> len_d(std::min<std::size_t>(2, T), std::min(max_len, T));
    std::uniform_real_distribution<double> vis_d(0.0, 1.0);
    std::vector<EventSpec> specs;
    for (std::size_t e = 0; e < events; ++e) {
      EventSpec s;
      s.cls = cls_d(rng);
      const std::size_t len = len_d(rng);
      std::uniform_int_distribution<std::size_t> start_d(0, T - len);
      s.start = start_d(rng);
      s.end = s.start + len - 1;
      const double u = vis_d(rng);
      s.on_audio = u < 0.75;        // audio-only 0.25, visual-only 0.25, both 0.50
      s.on_visual = u >= 0.25;
      specs.push_back(s);
    }
    for (const auto& s : specs) {
      for (std::size_t t = s.start; t <= s.end; ++t) {
        if (s.on_audio) ds.truth_audio.at(n, t, s.cls) = 1;
        if (s.on_visual) ds.truth_visual.at(n, t, s.cls) = 1;
      }
      ds.video_labels[n * C + s.cls] = 1;
    }

    // Features: sum of active class prototypes (per modality) plus noise.
    for (std::size_t t = 0; t < T; ++t) {
      double* xa = ds.audio.data() + (n * T + t) * Da;
      double* xv = ds.visual.data() + (n * T + t) * Dv;
      for (std::size_t c = 0; c < C; ++c) {
        if (ds.truth_audio.at(n, t, c)) {
          for (std::size_t d = 0; d < Da; ++d) xa[d] += amp_a * proto_a[c * Da + d];
        }
        if (ds.truth_visual.at(n, t, c)) {
          for (std::size_t d = 0; d < Dv; ++d) xv[d] += amp_v * proto_v[c * Dv + d];
        }
      }
      for (std::size_t d = 0; d < Da; ++d) xa[d] = quantize_f32(xa[d] + cfg.noise_scale * gauss(rng));
      for (std::size_t d = 0; d < Dv; ++d) xv[d] = quantize_f32(xv[d] + cfg.noise_scale * gauss(rng));
    }

    bool all_on = true;
    for (std::size_t c = 0; c < C; ++c) all_on = all_on && ds.video_labels[n * C + c];
    saturated += all_on;
  }
  if (saturated == N) {
    throw GenerationError("event density " + std::to_string(cfg.event_density) +
                          " saturates every video label; no weak supervision signal remains");
  }
  return ds;
}

std::array<Dataset, 3> split(const Dataset& ds, const std::array<double, 3>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw UsageError("split: fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("split: fractions must sum to 1");

  const std::size_t N = ds.num_videos();
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(ds.cfg.seed, 2, 0));
  std::shuffle(order.begin(), order.end(), rng);

  std::array<Dataset, 3> out;
  std::size_t begin = 0;
  double cum = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    cum += fractions[s];
    const std::size_t end =
        s == 2 ? N : static_cast<std::size_t>(std::llround(cum * static_cast<double>(N)));
    if (end <= begin) throw UsageError("split: fraction " + std::to_string(fractions[s]) +
                                       " yields an empty split");
    const std::size_t M = end - begin;
    Dataset& d = out[s];
    d.cfg = ds.cfg;
    d.cfg.videos = M;
    const std::size_t T = ds.cfg.snippets, C = ds.cfg.classes;
    const std::size_t Da = ds.cfg.d_audio, Dv = ds.cfg.d_visual;
    d.audio.resize(M * T * Da);
    d.visual.resize(M * T * Dv);
    d.video_labels.resize(M * C);
    d.truth_audio = LabelArray(M, T, C);
    d.truth_visual = LabelArray(M, T, C);
    for (std::size_t i = 0; i < M; ++i) {
      const std::size_t n = order[begin + i];
      std::copy_n(ds.audio.data() + n * T * Da, T * Da, d.audio.data() + i * T * Da);
      std::copy_n(ds.visual.data() + n * T * Dv, T * Dv, d.visual.data() + i * T * Dv);
      std::copy_n(ds.video_labels.data() + n * C, C, d.video_labels.data() + i * C);
      std::copy_n(ds.truth_audio.v.data() + n * T * C, T * C, d.truth_audio.v.data() + i * T * C);
      std::copy_n(ds.truth_visual.v.data() + n * T * C, T * C, d.truth_visual.v.data() + i * T * C);
    }
    begin = end;
  }
  return out;
}

void save(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t T = ds.cfg.snippets, C = ds.cfg.classes;
  const std::size_t Da = ds.cfg.d_audio, Dv = ds.cfg.d_visual;
  const std::size_t audio_block = T * Da * sizeof(float);
  const std::size_t visual_block = T * Dv * sizeof(float);

  nlohmann::json manifest = {
      {"format", 1},
      {"videos", ds.num_videos()},
      {"snippets", T},
      {"classes", C},
      {"d_audio", Da},
      {"d_visual", Dv},
      {"seed", ds.cfg.seed},
      {"dominance", ds.cfg.dominance},
      {"noise_scale", ds.cfg.noise_scale},
      {"event_density", ds.cfg.event_density},
      {"layout",
       {{"order", "video_major"},
        {"audio_block_bytes", audio_block},
        {"visual_block_bytes", visual_block},
        {"video_stride_bytes", audio_block + visual_block},
        {"total_bytes", ds.num_videos() * (audio_block + visual_block)}}},
  };
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
    f << manifest.dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "features.bin", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "features.bin").string());
    std::vector<float> buf;
    for (std::size_t n = 0; n < ds.num_videos(); ++n) {
      buf.assign(T * Da + T * Dv, 0.0f);
      for (std::size_t i = 0; i < T * Da; ++i) buf[i] = static_cast<float>(ds.audio[n * T * Da + i]);
      for (std::size_t i = 0; i < T * Dv; ++i) {
        buf[T * Da + i] = static_cast<float>(ds.visual[n * T * Dv + i]);
      }
      f.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("short write to " + (dir / "features.bin").string());
  }
  {
    auto labels3d = [&](const LabelArray& la) {
      nlohmann::json arr = nlohmann::json::array();
      for (std::size_t n = 0; n < la.n; ++n) {
        nlohmann::json vn = nlohmann::json::array();
        for (std::size_t t = 0; t < la.t; ++t) {
          nlohmann::json vt = nlohmann::json::array();
          for (std::size_t c = 0; c < la.c; ++c) vt.push_back(static_cast<int>(la.at(n, t, c)));
          vn.push_back(std::move(vt));
        }
        arr.push_back(std::move(vn));
      }
      return arr;
    };
    nlohmann::json labels;
    nlohmann::json vl = nlohmann::json::array();
    for (std::size_t n = 0; n < ds.num_videos(); ++n) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < C; ++c) row.push_back(static_cast<int>(ds.label(n, c)));
      vl.push_back(std::move(row));
    }
    labels["video_labels"] = std::move(vl);
    labels["snippet_audio"] = labels3d(ds.truth_audio);
    labels["snippet_visual"] = labels3d(ds.truth_visual);
    std::ofstream f(dir / "labels.json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "labels.json").string());
    f << labels.dump() << "\n";
  }
}

Dataset load(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("missing manifest: " + (dir / "manifest.json").string());
    try {
      manifest = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("manifest parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
  }
  Dataset ds;
  ds.cfg.videos = manifest.at("videos").get<std::size_t>();
  ds.cfg.snippets = manifest.at("snippets").get<std::size_t>();
  ds.cfg.classes = manifest.at("classes").get<std::size_t>();
  ds.cfg.d_audio = manifest.at("d_audio").get<std::size_t>();
  ds.cfg.d_visual = manifest.at("d_visual").get<std::size_t>();
  ds.cfg.seed = manifest.at("seed").get<std::uint64_t>();
  ds.cfg.dominance = manifest.at("dominance").get<double>();
  ds.cfg.noise_scale = manifest.at("noise_scale").get<double>();
  ds.cfg.event_density = manifest.at("event_density").get<double>();
  ds.cfg.validate();
  const std::size_t N = ds.cfg.videos, T = ds.cfg.snippets, C = ds.cfg.classes;
  const std::size_t Da = ds.cfg.d_audio, Dv = ds.cfg.d_visual;

  const std::size_t expected_bytes = N * (T * Da + T * Dv) * sizeof(float);
  const std::size_t declared = manifest.at("layout").at("total_bytes").get<std::size_t>();
  if (declared != expected_bytes) {
    throw IoError("manifest declares " + std::to_string(declared) + " feature bytes but shapes need " +
                  std::to_string(expected_bytes));
  }
  {
    std::error_code ec;
    const auto actual = std::filesystem::file_size(dir / "features.bin", ec);
    if (ec) throw IoError("missing features: " + (dir / "features.bin").string());
    if (actual != expected_bytes) {
      throw IoError("features.bin holds " + std::to_string(actual) + " bytes, manifest shapes need " +
                    std::to_string(expected_bytes) + " (payload truncated or corrupt at byte " +
                    std::to_string(std::min<std::size_t>(actual, expected_bytes)) + ")");
    }
    std::ifstream f(dir / "features.bin", std::ios::binary);
    std::vector<float> buf(T * Da + T * Dv);
    ds.audio.resize(N * T * Da);
    ds.visual.resize(N * T * Dv);
    for (std::size_t n = 0; n < N; ++n) {
      if (!f.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
        throw IoError("features.bin truncated at byte " +
                      std::to_string(n * buf.size() * sizeof(float)));
      }
      for (std::size_t i = 0; i < T * Da; ++i) ds.audio[n * T * Da + i] = buf[i];
      for (std::size_t i = 0; i < T * Dv; ++i) ds.visual[n * T * Dv + i] = buf[T * Da + i];
    }
  }
  {
    std::ifstream f(dir / "labels.json");
    if (!f) throw IoError("missing labels: " + (dir / "labels.json").string());
    nlohmann::json labels;
    try {
      labels = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("labels parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    auto read3d = [&](const nlohmann::json& arr, LabelArray& la) {
      la = LabelArray(N, T, C);
      if (arr.size() != N) throw IoError("labels: expected " + std::to_string(N) + " videos");
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t c = 0; c < C; ++c) {
            la.at(n, t, c) = arr.at(n).at(t).at(c).get<int>() != 0;
          }
        }
      }
    };
    read3d(labels.at("snippet_audio"), ds.truth_audio);
    read3d(labels.at("snippet_visual"), ds.truth_visual);
    ds.video_labels.assign(N * C, 0);
    const auto& vl = labels.at("video_labels");
    if (vl.size() != N) throw IoError("labels: video_labels row count mismatch");
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        ds.video_labels[n * C + c] = vl.at(n).at(c).get<int>() != 0;
      }
    }
  }
  // Weak labels must equal the temporal OR of the snippet truth.
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      std::uint8_t any = 0;
      for (std::size_t t = 0; t < T; ++t) {
        any |= static_cast<std::uint8_t>(ds.truth_audio.at(n, t, c) | ds.truth_visual.at(n, t, c));
      }
      if (any != ds.label(n, c)) {
        throw IoError("labels: video " + std::to_string(n) + " class " + std::to_string(c) +
                      " video label disagrees with snippet truth");
      }
    }
  }
  return ds;
}

}  // namespace avvp::synth
