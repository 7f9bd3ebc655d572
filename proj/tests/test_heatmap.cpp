#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "tcslot/heatmap.hpp"

using namespace tcslot;
using namespace tcslot::heatmap;

TEST(Heatmap, SigmaFromRadius) { EXPECT_DOUBLE_EQ(sigma_from_radius(12.0, 4), 1.0); }

TEST(Heatmap, CellAndOffset) {
  EXPECT_EQ(keypoint_cell({10.0, 3.9}, 4), (Cell{2, 0}));
  const auto o = offset_target({10.0, 3.9}, 4);
  EXPECT_DOUBLE_EQ(o.x, 0.5);
  EXPECT_NEAR(o.y, 0.975, 1e-15);
  const auto z = offset_target({8.0, 0.0}, 4);
  EXPECT_EQ(z.x, 0.0);
  EXPECT_EQ(z.y, 0.0);
}

TEST(Heatmap, PeakIsOneAtCellAndGaussianElsewhere) {
  const double sigma = 1.3;
  const auto t = render_heatmap({{21.0, 14.0}}, 32, 32, 4, sigma);
  ASSERT_EQ(t.heatmap.shape(), (Shape{8, 8}));
  EXPECT_EQ(t.heatmap.at(3, 5), 1.0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const double d2 = (x - 5.0) * (x - 5.0) + (y - 3.0) * (y - 3.0);
      EXPECT_NEAR(t.heatmap.at(y, x), std::exp(-d2 / (2 * sigma * sigma)), 1e-15);
      EXPECT_LE(t.heatmap.at(y, x), 1.0);
      EXPECT_GE(t.heatmap.at(y, x), 0.0);
    }
  }
}

TEST(Heatmap, OverlapsTakeMaximum) {
  const auto a = render_heatmap({{4.0, 4.0}}, 32, 32, 4, 1.5);
  const auto b = render_heatmap({{12.0, 4.0}}, 32, 32, 4, 1.5);
  const auto ab = render_heatmap({{4.0, 4.0}, {12.0, 4.0}}, 32, 32, 4, 1.5);
  for (std::size_t i = 0; i < ab.heatmap.size(); ++i) EXPECT_EQ(ab.heatmap[i], std::max(a.heatmap[i], b.heatmap[i]));
}

TEST(Heatmap, InvalidInputs) {
  EXPECT_THROW(render_heatmap({{40.0, 1.0}}, 32, 32, 4, 1.0), DataError);
  EXPECT_THROW(render_heatmap({{-0.5, 1.0}}, 32, 32, 4, 1.0), DataError);
  EXPECT_THROW(render_heatmap({{1.0, 1.0}}, 30, 32, 4, 1.0), ConfigError);
  EXPECT_THROW(render_heatmap({{1.0, 1.0}}, 32, 32, 4, 0.0), ConfigError);
  EXPECT_THROW(render_heatmap({{1.0, 1.0}}, 32, 32, 0, 1.0), ConfigError);
}

TEST(Heatmap, EmptyCenterSetGivesZeroMap) {
  const auto t = render_heatmap({}, 16, 16, 4, 1.0);
  for (double v : t.heatmap.values()) EXPECT_EQ(v, 0.0);
  const auto d = decode_predictions(t.heatmap, offset_map(t), 4, 0.1, 10);
  EXPECT_TRUE(d.empty());
}

TEST(Heatmap, RoundTripRecoversRandomCenterSets) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 5;
    std::vector<Point2> centers;
    std::set<std::pair<int, int>> cells;
    while (static_cast<int>(centers.size()) < n) {
      const Point2 p{64.0 * u(rng), 64.0 * u(rng)};
      const auto c = keypoint_cell(p, 4);
      if (cells.insert({c.x, c.y}).second) centers.push_back(p);
    }
    const auto t = render_heatmap(centers, 64, 64, 4, 0.5 + 2.0 * u(rng));
    auto dets = decode_predictions(t.heatmap, offset_map(t), 4, 0.5, 100);
    ASSERT_EQ(dets.size(), centers.size());
    for (const auto& c : centers) {
      const bool found = std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
        return std::abs(d.x - c.x) < 1e-9 && std::abs(d.y - c.y) < 1e-9 && d.score == 1.0;
      });
      EXPECT_TRUE(found) << "center (" << c.x << ", " << c.y << ") lost in trial " << trial;
    }
  }
}

TEST(Heatmap, DecodeOrdersByScoreAndCaps) {
  Tensor<double> hm(Shape{1, 4, 4}, 0.0);
  hm.at(0, 0, 0) = 0.4;
  hm.at(0, 3, 3) = 0.9;
  hm.at(0, 0, 3) = 0.6;
  Tensor<double> off(Shape{2, 4, 4}, 0.25);
  auto d = decode_predictions(hm, off, 4, 0.1, 10);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d[0].score, 0.9);
  EXPECT_DOUBLE_EQ(d[0].x, 13.0);
  EXPECT_DOUBLE_EQ(d[1].score, 0.6);
  EXPECT_DOUBLE_EQ(d[2].score, 0.4);
  EXPECT_EQ(decode_predictions(hm, off, 4, 0.1, 2).size(), 2u);
  EXPECT_EQ(decode_predictions(hm, off, 4, 0.5, 10).size(), 2u);
}

TEST(Heatmap, DecodeRejectsNonPeaksAndBadShapes) {
  Tensor<double> hm(Shape{3, 3}, 0.5);
  hm.at(1, 1) = 0.8;
  Tensor<double> off(Shape{2, 3, 3}, 0.0);
  EXPECT_EQ(decode_predictions(hm, off, 4, 0.1, 10).size(), 1u);
  EXPECT_THROW(decode_predictions(hm, Tensor<double>(Shape{2, 3, 4}), 4, 0.1, 10), ShapeError);
  hm.at(0, 0) = std::nan("");
  EXPECT_THROW(decode_predictions(hm, off, 4, 0.1, 10), NumericError);
}
