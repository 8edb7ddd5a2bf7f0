#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "avvp/labels.hpp"
#include "avvp/model.hpp"

namespace avvp::synth {

struct SynthConfig {
  std::size_t videos = 2000;
  std::size_t snippets = 10;  // T
  std::size_t classes = 8;    // C
  std::size_t d_audio = 32;
  std::size_t d_visual = 32;
  double dominance = 0.0;   // delta in [0,1]: audio amplitude 1+delta, visual 1-delta
  double noise_scale = 1.0;
  double event_density = 1.7;  // expected events per video (at least one is placed)
  std::uint64_t seed = 0;

  void validate() const;
};

// Weakly-labeled two-modality event videos. Features are quantized to f32 at
// generation time so the on-disk format round-trips bit-exactly.
struct Dataset {
  SynthConfig cfg;                        // echo; cfg.videos == num_videos()
  std::vector<double> audio;              // N*T*Da, video-major then snippet-major
  std::vector<double> visual;             // N*T*Dv
  std::vector<std::uint8_t> video_labels; // N*C multi-hot
  LabelArray truth_audio;                 // N x T x C
  LabelArray truth_visual;

  std::size_t num_videos() const { return cfg.videos; }
  std::uint8_t label(std::size_t n, std::size_t c) const { return video_labels[n * cfg.classes + c]; }

  // Derived audio-visual truth: elementwise AND of the two streams.
  LabelArray truth_audio_visual() const;

  VideoBatch make_batch(const std::vector<std::size_t>& indices) const;
  VideoBatch full_batch() const;
};

Dataset generate(const SynthConfig& cfg);

// Seed-deterministic disjoint partition; fractions must sum to 1 and every
// split must be nonempty.
std::array<Dataset, 3> split(const Dataset& ds, const std::array<double, 3>& fractions);

// Dataset directory: manifest.json + features.bin (little-endian f32) +
// labels.json. load(save(d)) reproduces d bit-exactly.
void save(const Dataset& ds, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

}  // namespace avvp::synth
