#pragma once

// Independent brute-force reference implementations used only by tests.
// Written before the production metrics module and kept free of any code
// shared with it: events are found by exhaustive interval enumeration and
// matching works off an explicit candidate-pair list.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "avvp/labels.hpp"

namespace oracle {

struct Counts {
  long long tp = 0, fp = 0, fn = 0;
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;  // nothing to find, nothing predicted
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
};

inline Counts segment_counts(const avvp::LabelArray& pred, const avvp::LabelArray& truth) {
  Counts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0, t = truth.v[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

struct Event {
  std::size_t cls, start, end;  // inclusive snippet indices
  bool operator==(const Event& o) const { return cls == o.cls && start == o.start && end == o.end; }
};

// An interval [s,e] is an event iff every snippet inside is positive and both
// neighbours (when they exist) are negative. Checked exhaustively.
inline std::vector<Event> extract_events(const std::vector<std::uint8_t>& tc, std::size_t T,
                                         std::size_t C) {
  std::vector<Event> out;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < T; ++s) {
      for (std::size_t e = s; e < T; ++e) {
        bool inside = true;
        for (std::size_t t = s; t <= e && inside; ++t) inside = tc[t * C + c] != 0;
        if (!inside) continue;
        const bool left_open = s == 0 || tc[(s - 1) * C + c] == 0;
        const bool right_open = e == T - 1 || tc[(e + 1) * C + c] == 0;
        if (left_open && right_open) out.push_back({c, s, e});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Event& a, const Event& b) {
    return a.cls != b.cls ? a.cls < b.cls : a.start < b.start;
  });
  return out;
}

inline double interval_iou(const Event& a, const Event& b) {
  const long long lo = static_cast<long long>(std::max(a.start, b.start));
  const long long hi = static_cast<long long>(std::min(a.end, b.end));
  const long long inter = std::max(0ll, hi - lo + 1);
  const long long uni = static_cast<long long>(a.end - a.start + 1) +
                        static_cast<long long>(b.end - b.start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Greedy one-to-one matching per class in descending IoU order; ties broken
// by (pred index, truth index). A pair is a candidate iff same class and
// IoU >= min_iou.
inline Counts event_counts(const std::vector<Event>& pred, const std::vector<Event>& truth,
                           double min_iou) {
  struct Cand {
    double iou;
    std::size_t pi, ti;
  };
  std::vector<Cand> cands;
  for (std::size_t pi = 0; pi < pred.size(); ++pi) {
    for (std::size_t ti = 0; ti < truth.size(); ++ti) {
      if (pred[pi].cls != truth[ti].cls) continue;
      const double iou = interval_iou(pred[pi], truth[ti]);
      if (iou >= min_iou) cands.push_back({iou, pi, ti});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.ti < b.ti;
  });
  std::vector<bool> pused(pred.size(), false), tused(truth.size(), false);
  Counts c;
  for (const auto& cand : cands) {
    if (pused[cand.pi] || tused[cand.ti]) continue;
    pused[cand.pi] = true;
    tused[cand.ti] = true;
    ++c.tp;
  }
  c.fp = static_cast<long long>(std::count(pused.begin(), pused.end(), false));
  c.fn = static_cast<long long>(std::count(tused.begin(), tused.end(), false));
  return c;
}

inline std::vector<std::uint8_t> video_slice(const avvp::LabelArray& la, std::size_t n) {
  return std::vector<std::uint8_t>(la.v.begin() + static_cast<long>(n * la.t * la.c),
                                   la.v.begin() + static_cast<long>((n + 1) * la.t * la.c));
}

}  // namespace oracle
