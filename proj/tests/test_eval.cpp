#include <gtest/gtest.h>

#include <random>

#include "tcslot/eval.hpp"

using namespace tcslot;
using eval::ScoredDetection;
using heatmap::Detection;

namespace {

// Each true positive adds 1/G recall at its own score threshold; the precision
// there counts every detection with a score at least as high.
double ap_oracle(const std::vector<ScoredDetection>& d, int num_gts) {
  double ap = 0.0;
  for (const auto& a : d) {
    if (!a.tp) continue;
    int kept = 0, tp = 0;
    for (const auto& b : d) {
      if (b.score >= a.score) {
        ++kept;
        tp += b.tp ? 1 : 0;
      }
    }
    ap += static_cast<double>(tp) / kept / num_gts;
  }
  return ap;
}

std::vector<ScoredDetection> random_dets(std::mt19937_64& rng, int n, int max_tp) {
  std::uniform_int_distribution<int> score(0, 6);  // coarse scores force ties
  std::bernoulli_distribution coin(0.5);
  std::vector<ScoredDetection> d;
  int tps = 0;
  for (int i = 0; i < n; ++i) {
    const bool tp = coin(rng) && tps < max_tp;
    tps += tp ? 1 : 0;
    d.push_back({score(rng) / 6.0, tp});
  }
  return d;
}

}  // namespace

TEST(Eval, KeypointBox) {
  const auto b = eval::keypoint_to_box({50, 50});
  EXPECT_EQ(b.x1, 40);
  EXPECT_EQ(b.y1, 40);
  EXPECT_EQ(b.x2, 60);
  EXPECT_EQ(b.y2, 60);
  EXPECT_EQ(b.area(), 441);
  EXPECT_EQ(eval::keypoint_to_box({3.3, -7.1}).area(), 441);
  EXPECT_DOUBLE_EQ(eval::iou(b, b), 1.0);
}

TEST(Eval, IouArithmetic) {
  const auto a = eval::keypoint_to_box({50, 50});
  EXPECT_NEAR(eval::iou(a, eval::keypoint_to_box({51, 50})), 420.0 / 462.0, 1e-15);
  EXPECT_NEAR(eval::iou(a, eval::keypoint_to_box({54, 54})), 289.0 / (2 * 441 - 289), 1e-15);
  EXPECT_EQ(eval::iou(a, eval::keypoint_to_box({80, 50})), 0.0);
}

TEST(Eval, MatchExactAndShifted) {
  const std::vector<heatmap::Point2> gts{{20, 20}, {60, 40}};
  auto r = eval::match_predictions({{20, 20, 0.9}, {60, 40, 0.8}}, gts);
  EXPECT_EQ(r.tp, 2);
  EXPECT_EQ(r.fp, 0);
  EXPECT_EQ(r.fn, 0);
  r = eval::match_predictions({{21, 20, 0.9}}, {{20, 20}});
  EXPECT_EQ(r.tp, 1);
  r = eval::match_predictions({{24, 24, 0.9}}, {{20, 20}});
  EXPECT_EQ(r.tp, 0);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 1);
  EXPECT_THROW(eval::match_predictions({}, gts, 0.0), ConfigError);
  EXPECT_THROW(eval::match_predictions({}, gts, 1.5), ConfigError);
}

TEST(Eval, GreedyOrderAndTieBreak) {
  // Both predictions overlap the single gt; the higher score wins.
  auto r = eval::match_predictions({{21, 20, 0.4}, {20, 20, 0.6}}, {{20, 20}});
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].pred, 1);
  EXPECT_TRUE(r.pred_is_tp[1]);
  EXPECT_FALSE(r.pred_is_tp[0]);
  // Equal scores: the lower index goes first even if it overlaps less.
  r = eval::match_predictions({{21, 20, 0.5}, {20, 20, 0.5}}, {{20, 20}});
  EXPECT_EQ(r.matches[0].pred, 0);
  // A gt is matched at most once.
  r = eval::match_predictions({{20, 20, 0.9}, {20, 20, 0.8}, {20, 20, 0.7}}, {{20, 20}});
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 2);
}

TEST(Eval, F1) {
  EXPECT_EQ(eval::f1_score(10, 0, 0), 1.0);
  EXPECT_EQ(eval::f1_score(0, 3, 4), 0.0);
  EXPECT_EQ(eval::f1_score(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(eval::f1_score(5, 5, 5), 0.5);
  EXPECT_DOUBLE_EQ(eval::precision(3, 1), 0.75);
  EXPECT_DOUBLE_EQ(eval::recall(3, 5), 3.0 / 8.0);
  EXPECT_THROW(eval::f1_score(-1, 0, 0), ConfigError);
}

TEST(Eval, ApTrivialCases) {
  EXPECT_EQ(eval::average_precision({{0.9, true}, {0.8, true}, {0.7, true}}, 3), 1.0);
  EXPECT_EQ(eval::average_precision({}, 3), 0.0);
  EXPECT_EQ(eval::average_precision({{0.9, false}}, 1), 0.0);
  EXPECT_THROW(eval::average_precision({{0.9, true}}, 0), DataError);
  // Three detections, two gts: TP, FP, TP.
  EXPECT_NEAR(eval::average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2), 0.5 * 1.0 + 0.5 * 2.0 / 3.0,
              1e-15);
}

TEST(Eval, ApMatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 12;
    const int gts = 1 + trial % 7;
    const auto d = random_dets(rng, n, gts);
    EXPECT_NEAR(eval::average_precision(d, gts), ap_oracle(d, gts), 1e-12) << "trial " << trial;
  }
}

TEST(Eval, ApInvariantUnderMonotoneScoreMaps) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto d = random_dets(rng, 10, 5);
    const double ap = eval::average_precision(d, 5);
    auto m = d;
    for (auto& x : m) x.score = std::exp(3 * x.score) - 7;
    EXPECT_NEAR(eval::average_precision(m, 5), ap, 1e-12);
    double lowest = 1e9;
    for (const auto& x : d) lowest = std::min(lowest, x.score);
    d.push_back({lowest - 1, false});
    EXPECT_LE(eval::average_precision(d, 5), ap + 1e-15);
  }
}

TEST(Eval, PrCurveMonotoneInRecall) {
  std::mt19937_64 rng(13);
  const auto c = eval::pr_curve(random_dets(rng, 30, 10), 10);
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_GE(c[i].recall, c[i - 1].recall);
    EXPECT_LT(c[i].threshold, c[i - 1].threshold);
  }
}

TEST(Eval, Histogram) {
  const auto h = eval::distance_histogram({0.0, 0.0, 7.1, 4.99, 10.0});
  EXPECT_EQ(h.counts, (std::vector<int>{3, 1, 1}));
  EXPECT_DOUBLE_EQ(h.fraction_below(10.0), 0.8);
  EXPECT_EQ(eval::distance_histogram({}).total(), 0);
  EXPECT_EQ(eval::distance_histogram({}).fraction_below(10.0), 0.0);
  EXPECT_THROW(eval::distance_histogram({-1.0}), NumericError);
}

TEST(Eval, PairedDistancesIgnoreIou) {
  const auto d = eval::paired_distances({{40, 20, 0.2}, {23, 24, 0.9}}, {{20, 20}});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0], 5.0);
}

TEST(Eval, EvaluateEndToEnd) {
  std::vector<eval::ImageResult> imgs{
      {"p0", 9, "left", {{20, 20, 0.9}, {50, 50, 0.1}}, {{20, 20}}},
      {"p1", 9, "right", {{27, 20, 0.8}}, {{20, 20}}},
      {"p2", 10, "middle", {}, {{30, 30}}},
  };
  const auto r = eval::evaluate(imgs);
  EXPECT_EQ(r.num_images, 3);
  EXPECT_EQ(r.num_gts, 3);
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 2);
  // Ranked: TP (0.9), FP (0.8), FP (0.1) over 3 gts.
  EXPECT_NEAR(r.ap75, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.histogram.counts, (std::vector<int>{1, 1}));
  EXPECT_DOUBLE_EQ(r.fraction_within(10.0), 1.0);
  for (double v : {r.ap75, r.precision, r.recall, r.f1}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const eval::EvalResult back = nlohmann::json(r).get<eval::EvalResult>();
  EXPECT_EQ(back, r);
  EXPECT_EQ(eval::evaluate(imgs), r);
}

TEST(Eval, EmptyEvaluation) {
  const auto r = eval::evaluate({});
  EXPECT_EQ(r.ap75, 0.0);
  EXPECT_TRUE(r.pr.empty());
  EXPECT_EQ(r.histogram.total(), 0);
}
