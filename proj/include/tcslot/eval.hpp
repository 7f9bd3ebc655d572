#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tcslot/heatmap.hpp"

namespace tcslot::eval {

using heatmap::Detection;
using heatmap::Point2;

/// Axis-aligned box in pixel-inclusive coordinates: [x1, x2] spans x2 - x1 + 1 pixels.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double area() const { return (x2 - x1 + 1.0) * (y2 - y1 + 1.0); }
};

inline constexpr double kBoxHalfSide = 10.0;  // 21 x 21 evaluation box
inline constexpr double kIouThreshold = 0.75;

inline Box keypoint_to_box(const Point2& p) {
  return {p.x - kBoxHalfSide, p.y - kBoxHalfSide, p.x + kBoxHalfSide, p.y + kBoxHalfSide};
}

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1) + 1.0;
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1) + 1.0;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct Match {
  int pred = -1;
  int gt = -1;
  double iou = 0.0;
};

struct MatchResult {
  int tp = 0, fp = 0, fn = 0;
  std::vector<Match> matches;
  std::vector<bool> pred_is_tp;  // indexed like the input predictions
};

/// Greedy matching: predictions in descending score (ties: lower index first) each
/// take the unmatched ground truth of highest IoU, if that IoU reaches the threshold.
inline MatchResult match_predictions(const std::vector<Detection>& preds, const std::vector<Point2>& gts,
                                     double iou_threshold = kIouThreshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("match_predictions: threshold must be in (0, 1]");
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return preds[a].score > preds[b].score; });

  MatchResult r;
  r.pred_is_tp.assign(preds.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  for (int pi : order) {
    const Box pb = keypoint_to_box({preds[pi].x, preds[pi].y});
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      const double v = iou(pb, keypoint_to_box(gts[g]));
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      gt_used[best] = true;
      r.pred_is_tp[pi] = true;
      r.matches.push_back({pi, best, best_iou});
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = static_cast<int>(gts.size()) - r.tp;
  return r;
}

inline double precision(int tp, int fp) { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
inline double recall(int tp, int fn) { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }

inline double f1_score(int tp, int fp, int fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ConfigError("f1_score: negative count");
  const double p = precision(tp, fp), r = recall(tp, fn);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

struct ScoredDetection {
  double score = 0.0;
  bool tp = false;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// PR curve with one point per distinct score, from the highest score down.
/// Detections sharing a score enter together.
inline std::vector<PrPoint> pr_curve(std::vector<ScoredDetection> dets, int num_gts) {
  if (num_gts <= 0) throw DataError("pr_curve: no ground truth");
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<PrPoint> curve;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < dets.size();) {
    const double s = dets[i].score;
    for (; i < dets.size() && dets[i].score == s; ++i) (dets[i].tp ? tp : fp) += 1;
    curve.push_back({s, precision(tp, fp), static_cast<double>(tp) / num_gts});
  }
  return curve;
}

/// Area under the step PR curve: AP = Σ_j (R_j - R_{j-1}) P_j over descending
/// score thresholds, R_0 = 0. Precision is taken at each threshold as is, with no
/// envelope or 11-point resampling.
inline double average_precision(const std::vector<ScoredDetection>& dets, int num_gts) {
  if (num_gts <= 0) throw DataError("average_precision: undefined without ground truth");
  double ap = 0.0, prev_r = 0.0;
  for (const auto& p : pr_curve(dets, num_gts)) {
    ap += (p.recall - prev_r) * p.precision;
    prev_r = p.recall;
  }
  return ap;
}

struct Histogram {
  double bin_width = 5.0;
  std::vector<int> counts;  // bin i covers [i * w, (i + 1) * w)

  int total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

  double fraction_below(double limit) const {
    const int t = total();
    if (t == 0) return 0.0;
    int n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if ((i + 1) * bin_width <= limit + 1e-12) n += counts[i];
    }
    return static_cast<double>(n) / t;
  }
};

inline Histogram distance_histogram(const std::vector<double>& distances, double bin_width = 5.0) {
  Histogram h;
  h.bin_width = bin_width;
  for (double d : distances) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw NumericError("distance_histogram: invalid distance");
    const auto bin = static_cast<std::size_t>(std::floor(d / bin_width));
    if (h.counts.size() <= bin) h.counts.resize(bin + 1, 0);
    ++h.counts[bin];
  }
  return h;
}

/// Distance pairing used for the histogram: predictions in descending score each
/// take the nearest unpaired ground truth, no IoU gate. With one ground truth per
/// image this is the top-1 prediction's error.
inline std::vector<double> paired_distances(const std::vector<Detection>& preds, const std::vector<Point2>& gts) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return preds[a].score > preds[b].score; });
  std::vector<bool> used(gts.size(), false);
  std::vector<double> out;
  for (int pi : order) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double d = std::hypot(preds[pi].x - gts[g].x, preds[pi].y - gts[g].y);
      if (best < 0 || d < best_d) {
        best = static_cast<int>(g);
        best_d = d;
      }
    }
    if (best < 0) break;
    used[best] = true;
    out.push_back(best_d);
  }
  return out;
}

struct ImageResult {
  std::string patient;
  int slice = 0;
  std::string condition;
  std::vector<Detection> preds;
  std::vector<Point2> gts;
};

struct EvalConfig {
  double iou_threshold = kIouThreshold;
  double score_threshold = 0.3;  // operating point for precision / recall / F1
  double bin_width = 5.0;
};

struct EvalResult {
  double ap75 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
  int num_images = 0;
  int num_gts = 0;
  Histogram histogram;
  std::vector<PrPoint> pr;

  double fraction_within(double px) const { return histogram.fraction_below(px); }
};

inline void to_json(nlohmann::json& j, const PrPoint& p) {
  j = {{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}};
}
inline void from_json(const nlohmann::json& j, PrPoint& p) {
  p.threshold = j.at("threshold").get<double>();
  p.precision = j.at("precision").get<double>();
  p.recall = j.at("recall").get<double>();
}

inline void to_json(nlohmann::json& j, const EvalResult& r) {
  j = {{"ap75", r.ap75},
       {"precision", r.precision},
       {"recall", r.recall},
       {"f1", r.f1},
       {"tp", r.tp},
       {"fp", r.fp},
       {"fn", r.fn},
       {"num_images", r.num_images},
       {"num_gts", r.num_gts},
       {"histogram", {{"bin_width", r.histogram.bin_width}, {"counts", r.histogram.counts}}},
       {"pr_curve", r.pr}};
}

inline void from_json(const nlohmann::json& j, EvalResult& r) {
  r.ap75 = j.at("ap75").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.tp = j.at("tp").get<int>();
  r.fp = j.at("fp").get<int>();
  r.fn = j.at("fn").get<int>();
  r.num_images = j.at("num_images").get<int>();
  r.num_gts = j.at("num_gts").get<int>();
  r.histogram.bin_width = j.at("histogram").at("bin_width").get<double>();
  r.histogram.counts = j.at("histogram").at("counts").get<std::vector<int>>();
  r.pr = j.at("pr_curve").get<std::vector<PrPoint>>();
}

inline bool operator==(const EvalResult& a, const EvalResult& b) { return nlohmann::json(a) == nlohmann::json(b); }

/// Per-slice evaluation over a set of images: AP at the IoU threshold from all
/// detections, P/R/F1 at the score operating point, distance histogram from the
/// distance pairing.
inline EvalResult evaluate(const std::vector<ImageResult>& images, const EvalConfig& cfg = {}) {
  EvalResult r;
  r.num_images = static_cast<int>(images.size());
  r.histogram.bin_width = cfg.bin_width;
  std::vector<ScoredDetection> scored;
  std::vector<double> distances;
  for (const auto& img : images) {
    r.num_gts += static_cast<int>(img.gts.size());
    const auto m = match_predictions(img.preds, img.gts, cfg.iou_threshold);
    for (std::size_t i = 0; i < img.preds.size(); ++i) scored.push_back({img.preds[i].score, m.pred_is_tp[i]});

    std::vector<Detection> kept;
    for (const auto& d : img.preds) {
      if (d.score >= cfg.score_threshold) kept.push_back(d);
    }
    const auto mk = match_predictions(kept, img.gts, cfg.iou_threshold);
    r.tp += mk.tp;
    r.fp += mk.fp;
    r.fn += mk.fn;
    const auto d = paired_distances(img.preds, img.gts);
    distances.insert(distances.end(), d.begin(), d.end());
  }
  if (r.num_gts > 0) {
    r.ap75 = average_precision(scored, r.num_gts);
    r.pr = pr_curve(scored, r.num_gts);
  }
  r.precision = precision(r.tp, r.fp);
  r.recall = recall(r.tp, r.fn);
  r.f1 = f1_score(r.tp, r.fp, r.fn);
  r.histogram = distance_histogram(distances, cfg.bin_width);
  return r;
}

}  // namespace tcslot::eval
