#include <gtest/gtest.h>

#include <random>

#include "tcslot/heatmap.hpp"
#include "tcslot/loss.hpp"
#include "test_util.hpp"

using namespace tcslot;
using tcslot::testing::grad_check;
using V = Var<double>;
using Vs = std::vector<V>;

namespace {

double focal_oracle(const Tensor<double>& p, const Tensor<double>& gt) {
  double pos = 0, neg = 0;
  int npos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (gt[i] == 1.0) {
      pos += (1 - p[i]) * (1 - p[i]) * std::log(p[i]);
      ++npos;
    } else {
      const double w = (1 - gt[i]) * (1 - gt[i]) * (1 - gt[i]) * (1 - gt[i]);
      neg += w * p[i] * p[i] * std::log(1 - p[i]);
    }
  }
  return -(pos + neg) / std::max(npos, 1);
}

Tensor<double> random_probs(Shape s, std::mt19937_64& rng) { return random_uniform<double>(std::move(s), 0.05, 0.95, rng); }

Tensor<double> heatmap_gt(std::mt19937_64& rng, int n = 4) {
  std::uniform_real_distribution<double> u(0.0, 16.0);
  return heatmap::render_heatmap({{u(rng), u(rng)}}, 16, 16, 4, 0.8).heatmap.reshaped(Shape{n, n});
}

}  // namespace

TEST(FocalLoss, MatchesExplicitLoop) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto gt = heatmap_gt(rng);
    const auto p = random_probs({4, 4}, rng);
    EXPECT_NEAR(loss::focal_heatmap_loss(V::constant(p), gt).item(), focal_oracle(p, gt), 1e-12);
  }
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto gt = heatmap_gt(rng);
    const auto r = grad_check([&](const Vs& v) { return loss::focal_heatmap_loss(v[0], gt); }, {random_probs({4, 4}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(FocalLoss, NoPositivesIsUnnormalizedAndPerfectIsSmall) {
  Tensor<double> gt(Shape{2, 2}, 0.0);
  Tensor<double> p(Shape{2, 2}, 0.5);
  EXPECT_NEAR(loss::focal_heatmap_loss(V::constant(p), gt).item(), -4 * 0.25 * std::log(0.5), 1e-12);
  gt.at(0, 0) = 1.0;
  Tensor<double> q(Shape{2, 2}, 1e-4);
  q.at(0, 0) = 1 - 1e-4;
  EXPECT_LT(loss::focal_heatmap_loss(V::constant(q), gt).item(), 1e-6);
  EXPECT_THROW(loss::focal_heatmap_loss(V::constant(Tensor<double>(Shape{3})), gt), ShapeError);
}

TEST(Slopes, ConstantSlopeIsNeutral) {
  for (double c : {0.01, 0.3, 1.0, 7.5}) {
    const auto t = loss::normalize_slopes(std::vector<double>{c, c, c}, std::vector<double>{0.2, 3.0, 1.1});
    for (double v : t) EXPECT_EQ(v, 1.0);
  }
}

TEST(Slopes, WorkedExample) {
  const auto t = loss::normalize_slopes(std::vector<double>{0.1, 0.9}, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(t[0], 0.2, 1e-15);
  EXPECT_NEAR(t[1], 1.8, 1e-15);
}

TEST(Slopes, SumPreservedAndScaleInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 16;
    std::vector<double> tau(n), l(n);
    for (int i = 0; i < n; ++i) {
      tau[i] = 1.2 * u(rng) + 1e-3;
      l[i] = 5 * u(rng) + 1e-3;
    }
    const auto th = loss::normalize_slopes(tau, l);
    const double sum_l = std::accumulate(l.begin(), l.end(), 0.0);
    EXPECT_LT(std::abs(loss::sal_loss(l, th) - sum_l) / sum_l, 1e-12);
    std::vector<double> scaled(tau);
    for (auto& t : scaled) t *= 3.7;
    const auto th2 = loss::normalize_slopes(scaled, l);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(th2[i], th[i], 1e-12);
  }
}

TEST(Slopes, MonotoneInTauForEqualLosses) {
  const auto t = loss::normalize_slopes(std::vector<double>{0.05, 0.2, 0.4, 1.1}, std::vector<double>(4, 2.0));
  for (int i = 1; i < 4; ++i) EXPECT_GT(t[i], t[i - 1]);
}

TEST(Slopes, ZeroMassFallsBackToOnes) {
  const auto a = loss::normalize_slopes(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(a, (std::vector<double>{1.0, 1.0}));
  const auto b = loss::normalize_slopes(std::vector<double>{0.3, 0.5}, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(b, (std::vector<double>{1.0, 1.0}));
}

TEST(Slopes, Errors) {
  EXPECT_THROW(loss::normalize_slopes(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
  EXPECT_THROW(loss::normalize_slopes(std::vector<double>{}, std::vector<double>{}), DataError);
  EXPECT_THROW(loss::normalize_slopes(std::vector<double>{-1.0}, std::vector<double>{1.0}), NumericError);
  EXPECT_THROW(loss::normalize_slopes(std::vector<double>{std::nan("")}, std::vector<double>{1.0}), NumericError);
}

TEST(Slopes, ReduceTaus) {
  EXPECT_EQ(loss::reduce_taus({0.1, 0.7, 0.3}, loss::TauReduce::kMax), 0.7);
  EXPECT_NEAR(loss::reduce_taus({0.1, 0.7, 0.4}, loss::TauReduce::kMean), 0.4, 1e-15);
}

TEST(SalLoss, UnitWeightsGiveUnweightedSum) {
  const std::vector<double> l{0.5, 1.5, 2.0};
  EXPECT_DOUBLE_EQ(loss::sal_loss(l, std::vector<double>(3, 1.0)), 4.0);
  Vs vs;
  for (double x : l) vs.push_back(V::constant(Tensor<double>::scalar(x)));
  EXPECT_DOUBLE_EQ(loss::sal_loss(vs, std::vector<double>(3, 1.0)).item(), 4.0);
}

TEST(OffsetLoss, ValueAndGradient) {
  std::mt19937_64 rng(4);
  const auto gt = random_uniform<double>(Shape{3, 2}, 0.0, 1.0, rng);
  const auto pred = random_uniform<double>(Shape{3, 2}, -1.0, 2.0, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) oracle += std::abs(pred[i] - gt[i]) / 6.0;
  EXPECT_NEAR(loss::offset_loss(V::constant(pred), gt).item(), oracle, 1e-15);
  EXPECT_LT(grad_check([&](const Vs& v) { return loss::offset_loss(v[0], gt); }, {pred}).max_rel_error, 1e-6);
  EXPECT_EQ(loss::offset_loss(V::constant(Tensor<double>(Shape{0, 2})), Tensor<double>(Shape{0, 2})).item(), 0.0);
}

TEST(AlignLoss, ValueGradientAndMismatch) {
  std::mt19937_64 rng(5);
  const auto e = random_uniform<double>(Shape{16}, -1.0, 1.0, rng);
  const auto f = random_uniform<double>(Shape{16}, -1.0, 1.0, rng);
  std::vector<double> ev(e.values().begin(), e.values().end()), fv(f.values().begin(), f.values().end());
  EXPECT_NEAR(loss::align_loss(V::constant(f), e).item(), loss::align_loss(fv, ev), 1e-15);
  EXPECT_EQ(loss::align_loss(ev, ev), 0.0);
  EXPECT_LT(grad_check([&](const Vs& v) { return loss::align_loss(v[0], e); }, {f}).max_rel_error, 1e-6);
  EXPECT_THROW(loss::align_loss(V::constant(f), Tensor<double>(Shape{8})), ShapeError);
}

// Full objective with the slope weights computed from the current losses and
// then held fixed, as in training.
TEST(TotalLoss, ComposedGradientWithFixedSlopeWeights) {
  std::mt19937_64 rng(6);
  const auto gt0 = heatmap_gt(rng), gt1 = heatmap_gt(rng);
  const auto off_gt = random_uniform<double>(Shape{2, 2}, 0.0, 1.0, rng);
  const auto emb = random_uniform<double>(Shape{8}, -1.0, 1.0, rng);
  const std::vector<double> taus{0.15, 0.9};
  const std::vector<Tensor<double>> inputs{random_probs({4, 4}, rng), random_probs({4, 4}, rng),
                                           random_uniform<double>(Shape{2, 2}, 0.0, 1.0, rng),
                                           random_uniform<double>(Shape{8}, -1.0, 1.0, rng)};
  const double l0 = loss::focal_heatmap_loss(V::constant(inputs[0]), gt0).item();
  const double l1 = loss::focal_heatmap_loss(V::constant(inputs[1]), gt1).item();
  const auto tau_hat = loss::normalize_slopes(taus, std::vector<double>{l0, l1});
  const loss::LossWeights w{1.0, 0.7, 0.3};
  auto f = [&](const Vs& v) {
    auto sal = loss::sal_loss<double>({loss::focal_heatmap_loss(v[0], gt0), loss::focal_heatmap_loss(v[1], gt1)}, tau_hat);
    return loss::total_loss(sal, loss::offset_loss(v[2], off_gt), loss::align_loss(v[3], emb), w);
  };
  EXPECT_LT(grad_check(f, inputs).max_rel_error, 1e-4);
  const double expect = loss::total_loss(tau_hat[0] * l0 + tau_hat[1] * l1,
                                         loss::offset_loss(V::constant(inputs[2]), off_gt).item(),
                                         loss::align_loss(V::constant(inputs[3]), emb).item(), w);
  Vs c;
  for (const auto& t : inputs) c.push_back(V::constant(t));
  EXPECT_NEAR(f(c).item(), expect, 1e-12);
}
