#include "avvp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace avvp::metrics {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::A: return "A";
    case Modality::V: return "V";
    case Modality::AV: return "AV";
  }
  return "?";
}

LabelArray binarize(const Tensor& p, double threshold) {
  if (p.rank() != 3) throw DimensionError("binarize: expected N x T x C, got " + shape_str(p.shape));
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("binarize: threshold must be in (0,1)");
  LabelArray out(p.shape[0], p.shape[1], p.shape[2]);
  for (std::size_t i = 0; i < p.size(); ++i) out.v[i] = p.values[i] >= threshold ? 1 : 0;
  return out;
}

F1Counts segment_counts(const LabelArray& pred, const LabelArray& truth) {
  if (!pred.same_shape(truth)) {
    throw DimensionError("segment_f1: prediction and truth shapes differ");
  }
  F1Counts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0, t = truth.v[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

double segment_f1(const LabelArray& pred, const LabelArray& truth) {
  return segment_counts(pred, truth).f1();
}

std::vector<EventInstance> extract_events(const std::uint8_t* tc, std::size_t T, std::size_t C,
                                          Modality m) {
  std::vector<EventInstance> out;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t t = 0;
    while (t < T) {
      if (tc[t * C + c]) {
        std::size_t e = t;
        while (e + 1 < T && tc[(e + 1) * C + c]) ++e;
        out.push_back({m, c, t, e});
        t = e + 1;
      } else {
        ++t;
      }
    }
  }
  return out;
}

std::vector<EventInstance> extract_events(const LabelArray& la, std::size_t video, Modality m) {
  return extract_events(la.v.data() + video * la.t * la.c, la.t, la.c, m);
}

namespace {
double interval_iou(const EventInstance& a, const EventInstance& b) {
  const long long lo = static_cast<long long>(std::max(a.start, b.start));
  const long long hi = static_cast<long long>(std::min(a.end, b.end));
  const long long inter = std::max(0ll, hi - lo + 1);
  const long long uni = static_cast<long long>(a.end - a.start + 1) +
                        static_cast<long long>(b.end - b.start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}
}  // namespace

F1Counts event_counts(const std::vector<EventInstance>& pred,
                      const std::vector<EventInstance>& truth, double min_iou) {
  if (!(min_iou > 0.0 && min_iou <= 1.0)) throw UsageError("event_f1: min_iou must be in (0,1]");
  struct Cand {
    double iou;
    std::size_t pi, ti;
  };
  std::vector<Cand> cands;
  for (std::size_t pi = 0; pi < pred.size(); ++pi) {
    for (std::size_t ti = 0; ti < truth.size(); ++ti) {
      if (pred[pi].category != truth[ti].category || pred[pi].modality != truth[ti].modality) {
        continue;
      }
      const double iou = interval_iou(pred[pi], truth[ti]);
      if (iou >= min_iou) cands.push_back({iou, pi, ti});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.ti < b.ti;
  });
  std::vector<bool> pused(pred.size(), false), tused(truth.size(), false);
  F1Counts c;
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

double event_f1(const std::vector<EventInstance>& pred, const std::vector<EventInstance>& truth,
                double min_iou) {
  return event_counts(pred, truth, min_iou).f1();
}

LabelArray audiovisual_truth(const LabelArray& a, const LabelArray& v) {
  if (!a.same_shape(v)) throw DimensionError("audiovisual_truth: shape mismatch");
  LabelArray out(a.n, a.t, a.c);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] & v.v[i];
  return out;
}

namespace {

struct StreamScores {
  double segment = 0, event = 0;
  F1Counts seg_counts, ev_counts;  // micro totals (also reused for pooling)
};

// Per-stream scoring: micro pools counts over videos, macro averages
// per-video F-scores.
struct Scorer {
  const EvalOptions& opts;

  double finish(const std::vector<double>& per_video, const F1Counts& total) const {
    if (opts.averaging == Averaging::micro) return total.f1();
    double acc = 0.0;
    for (double f : per_video) acc += f;
    return per_video.empty() ? 1.0 : acc / static_cast<double>(per_video.size());
  }
};

}  // namespace

MetricsReport full_report(const LabelArray& pred_a, const LabelArray& pred_v,
                          const LabelArray& truth_a, const LabelArray& truth_v,
                          const EvalOptions& opts) {
  if (!pred_a.same_shape(pred_v) || !pred_a.same_shape(truth_a) || !pred_a.same_shape(truth_v)) {
    throw DimensionError("full_report: stream shapes differ");
  }
  const std::size_t N = pred_a.n;
  const LabelArray pred_av = audiovisual_truth(pred_a, pred_v);
  const LabelArray truth_av = audiovisual_truth(truth_a, truth_v);

  const LabelArray* preds[3] = {&pred_a, &pred_v, &pred_av};
  const LabelArray* truths[3] = {&truth_a, &truth_v, &truth_av};
  const Modality mods[3] = {Modality::A, Modality::V, Modality::AV};

  Scorer scorer{opts};
  double seg[3], ev[3];
  F1Counts seg_total[3], ev_total[3];
  std::vector<double> seg_pv[3], ev_pv[3];
  // Event@AV pools the audio and visual streams (not the AV stream).
  F1Counts pool_seg_total, pool_ev_total;
  std::vector<double> pool_seg_pv(N, 0.0), pool_ev_pv(N, 0.0);
  std::vector<F1Counts> pool_seg_video(N), pool_ev_video(N);

  for (int s = 0; s < 3; ++s) {
    seg_pv[s].resize(N);
    ev_pv[s].resize(N);
    for (std::size_t n = 0; n < N; ++n) {
      LabelArray pv(1, pred_a.t, pred_a.c), tv(1, pred_a.t, pred_a.c);
      std::copy_n(preds[s]->v.data() + n * pv.t * pv.c, pv.t * pv.c, pv.v.data());
      std::copy_n(truths[s]->v.data() + n * tv.t * tv.c, tv.t * tv.c, tv.v.data());
      const F1Counts sc = segment_counts(pv, tv);
      const auto pe = extract_events(*preds[s], n, mods[s]);
      const auto te = extract_events(*truths[s], n, mods[s]);
      const F1Counts ec = event_counts(pe, te, opts.min_iou);
      seg_total[s] += sc;
      ev_total[s] += ec;
      seg_pv[s][n] = sc.f1();
      ev_pv[s][n] = ec.f1();
      if (s < 2) {
        pool_seg_video[n] += sc;
        pool_ev_video[n] += ec;
      }
    }
    seg[s] = scorer.finish(seg_pv[s], seg_total[s]);
    ev[s] = scorer.finish(ev_pv[s], ev_total[s]);
  }
  for (std::size_t n = 0; n < N; ++n) {
    pool_seg_total += pool_seg_video[n];
    pool_ev_total += pool_ev_video[n];
    pool_seg_pv[n] = pool_seg_video[n].f1();
    pool_ev_pv[n] = pool_ev_video[n].f1();
  }

  MetricsReport r;
  r.segment_a = seg[0];
  r.segment_v = seg[1];
  r.segment_av = seg[2];
  r.segment_type_at_av = (seg[0] + seg[1] + seg[2]) / 3.0;
  r.segment_event_at_av = scorer.finish(pool_seg_pv, pool_seg_total);
  r.event_a = ev[0];
  r.event_v = ev[1];
  r.event_av = ev[2];
  r.event_type_at_av = (ev[0] + ev[1] + ev[2]) / 3.0;
  r.event_event_at_av = scorer.finish(pool_ev_pv, pool_ev_total);
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"segment_a", segment_a},
          {"segment_v", segment_v},
          {"segment_av", segment_av},
          {"segment_type_at_av", segment_type_at_av},
          {"segment_event_at_av", segment_event_at_av},
          {"event_a", event_a},
          {"event_v", event_v},
          {"event_av", event_av},
          {"event_type_at_av", event_type_at_av},
          {"event_event_at_av", event_event_at_av}};
}

std::string MetricsReport::csv_header() {
  return "segment_a,segment_v,segment_av,segment_type_at_av,segment_event_at_av,"
         "event_a,event_v,event_av,event_type_at_av,event_event_at_av";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << segment_a << ',' << segment_v << ',' << segment_av << ',' << segment_type_at_av << ','
     << segment_event_at_av << ',' << event_a << ',' << event_v << ',' << event_av << ','
     << event_type_at_av << ',' << event_event_at_av;
  return os.str();
}

}  // namespace avvp::metrics
