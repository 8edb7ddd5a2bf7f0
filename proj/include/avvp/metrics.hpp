#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "avvp/labels.hpp"
#include "avvp/tensor.hpp"

namespace avvp::metrics {

enum class Modality : std::uint8_t { A, V, AV };

const char* modality_name(Modality m);

// One contiguous run of positive snippets of a single category.
struct EventInstance {
  Modality modality;
  std::size_t category;
  std::size_t start;  // inclusive
  std::size_t end;    // inclusive

  bool operator==(const EventInstance& o) const {
    return modality == o.modality && category == o.category && start == o.start && end == o.end;
  }
};

struct F1Counts {
  long long tp = 0, fp = 0, fn = 0;
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

enum class Averaging { micro, macro };

struct EvalOptions {
  double threshold = 0.5;  // snippet decision threshold (>= convention)
  double min_iou = 0.5;
  Averaging averaging = Averaging::micro;
};

// Segment-level A/V/AV F-scores plus Type@AV (mean of the three) and
// Event@AV (pooled audio+visual counts), at both granularities.
struct MetricsReport {
  double segment_a = 0, segment_v = 0, segment_av = 0, segment_type_at_av = 0,
         segment_event_at_av = 0;
  double event_a = 0, event_v = 0, event_av = 0, event_type_at_av = 0, event_event_at_av = 0;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

LabelArray binarize(const Tensor& p, double threshold);

double segment_f1(const LabelArray& pred, const LabelArray& truth);
F1Counts segment_counts(const LabelArray& pred, const LabelArray& truth);

// Maximal runs of consecutive positive snippets per class over one video's
// T x C block, ordered by class then start.
std::vector<EventInstance> extract_events(const std::uint8_t* tc, std::size_t T, std::size_t C,
                                          Modality m);
std::vector<EventInstance> extract_events(const LabelArray& la, std::size_t video, Modality m);

// Greedy one-to-one matching in descending IoU order (ties by pred then truth
// position); a pair matches iff same class and temporal IoU >= min_iou.
F1Counts event_counts(const std::vector<EventInstance>& pred,
                      const std::vector<EventInstance>& truth, double min_iou);
double event_f1(const std::vector<EventInstance>& pred, const std::vector<EventInstance>& truth,
                double min_iou);

LabelArray audiovisual_truth(const LabelArray& a, const LabelArray& v);

MetricsReport full_report(const LabelArray& pred_a, const LabelArray& pred_v,
                          const LabelArray& truth_a, const LabelArray& truth_v,
                          const EvalOptions& opts = {});

}  // namespace avvp::metrics
