#pragma once

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tcslot/ops.hpp"

namespace tcslot::loss {

/// Penalty-reduced pixel focal loss on a post-sigmoid heatmap:
///   positives (gt == 1):  -(1 - p)^alpha * log(p)
///   negatives:            -(1 - gt)^beta * p^alpha * log(1 - p)
/// summed and divided by the number of positives (no division when there are none).
template <typename T>
Var<T> focal_heatmap_loss(const Var<T>& pred, const Tensor<T>& gt, double alpha = 2.0, double beta = 4.0) {
  if (pred.size() != gt.size()) {
    throw ShapeError("focal_heatmap_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(gt.shape()));
  }
  const auto& p = pred.value();
  const std::size_t n = p.size();
  std::size_t num_pos = 0;
  for (std::size_t i = 0; i < n; ++i) num_pos += gt[i] == T(1) ? 1 : 0;
  const double norm = num_pos > 0 ? static_cast<double>(num_pos) : 1.0;

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = static_cast<double>(p[i]);
    if (gt[i] == T(1)) {
      total -= std::pow(1.0 - pi, alpha) * std::log(pi);
    } else {
      total -= std::pow(1.0 - static_cast<double>(gt[i]), beta) * std::pow(pi, alpha) * std::log(1.0 - pi);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / norm));
  return make_result<T>(std::move(out), {pred}, [gt, alpha, beta, norm](Node<T>& nd) {
    auto& g = nd.inputs[0]->grad;
    const auto& pv = nd.inputs[0]->value;
    const double up = static_cast<double>(nd.grad[0]) / norm;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double pi = static_cast<double>(pv[i]);
      double d;
      if (gt[i] == T(1)) {
        // d/dp [-(1-p)^a log p]
        d = alpha * std::pow(1.0 - pi, alpha - 1.0) * std::log(pi) - std::pow(1.0 - pi, alpha) / pi;
      } else {
        // d/dp [-(1-gt)^b p^a log(1-p)]
        const double w = std::pow(1.0 - static_cast<double>(gt[i]), beta);
        d = -w * (alpha * std::pow(pi, alpha - 1.0) * std::log(1.0 - pi) - std::pow(pi, alpha) / (1.0 - pi));
      }
      g[i] += static_cast<T>(up * d);
    }
  });
}

/// Rescales slopes so that Σ tau_hat_i L_i == Σ L_i:
///   tau_hat_i = tau_i * Σ L / Σ tau L.
/// When Σ tau L is zero every weight falls back to 1.
inline std::vector<double> normalize_slopes(std::span<const double> taus, std::span<const double> losses) {
  if (taus.size() != losses.size()) throw ShapeError("normalize_slopes: length mismatch");
  if (taus.empty()) throw DataError("normalize_slopes: empty input");
  double tau_max = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] >= 0.0) || !(losses[i] >= 0.0) || !std::isfinite(taus[i]) || !std::isfinite(losses[i])) {
      throw NumericError("normalize_slopes: slopes and losses must be finite and non-negative");
    }
    tau_max = std::max(tau_max, taus[i]);
  }
  // Slopes are rescaled by their maximum first (the result is scale invariant);
  // equal slopes then become exactly 1 and the weights come out exactly 1.
  std::vector<double> rel(taus.size(), 0.0);
  double sum_l = 0.0, sum_tl = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (tau_max > 0.0) rel[i] = taus[i] / tau_max;
    sum_l += losses[i];
    sum_tl += rel[i] * losses[i];
  }
  if (!(sum_tl > 0.0)) {
    spdlog::warn("normalize_slopes: sum of tau * L is zero, using unit weights");
    return std::vector<double>(taus.size(), 1.0);
  }
  const double ratio = sum_l / sum_tl;
  for (auto& r : rel) r *= ratio;
  return rel;
}

inline std::vector<double> normalize_slopes(const std::vector<double>& taus, const std::vector<double>& losses) {
  return normalize_slopes(std::span<const double>(taus), std::span<const double>(losses));
}

enum class TauReduce { kMax, kMean };

NLOHMANN_JSON_SERIALIZE_ENUM(TauReduce, {{TauReduce::kMax, "max"}, {TauReduce::kMean, "mean"}})

/// Slope attributed to a sample that contains several implants.
inline double reduce_taus(const std::vector<double>& taus, TauReduce mode) {
  if (taus.empty()) return 0.0;
  if (mode == TauReduce::kMax) return *std::max_element(taus.begin(), taus.end());
  return std::accumulate(taus.begin(), taus.end(), 0.0) / static_cast<double>(taus.size());
}

/// Σ tau_hat_i L_i with the weights held constant.
template <typename T>
Var<T> sal_loss(const std::vector<Var<T>>& per_sample, const std::vector<double>& tau_hats) {
  if (per_sample.size() != tau_hats.size()) throw ShapeError("sal_loss: length mismatch");
  if (per_sample.empty()) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  std::vector<T> w(tau_hats.begin(), tau_hats.end());
  return ops::weighted_sum(per_sample, w);
}

inline double sal_loss(std::span<const double> per_sample, std::span<const double> tau_hats) {
  if (per_sample.size() != tau_hats.size()) throw ShapeError("sal_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < per_sample.size(); ++i) s += tau_hats[i] * per_sample[i];
  return s;
}

inline double sal_loss(const std::vector<double>& per_sample, const std::vector<double>& tau_hats) {
  return sal_loss(std::span<const double>(per_sample), std::span<const double>(tau_hats));
}

/// Mean absolute error between predicted offsets at peak cells (K, 2) and targets.
template <typename T>
Var<T> offset_loss(const Var<T>& pred_at_peaks, const Tensor<T>& gt) {
  if (pred_at_peaks.size() != gt.size()) throw ShapeError("offset_loss: shape mismatch");
  if (gt.size() == 0) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  return ops::mean_abs_diff(pred_at_peaks, Var<T>::constant(gt.reshaped(pred_at_peaks.shape())));
}

/// Knowledge alignment: mean |pooled - embedding| over the D components.
template <typename T>
Var<T> align_loss(const Var<T>& pooled, const Tensor<T>& image_embedding) {
  if (pooled.size() != image_embedding.size()) {
    throw ShapeError("align_loss: dimension mismatch " + std::to_string(pooled.size()) + " vs " +
                     std::to_string(image_embedding.size()));
  }
  return ops::mean_abs_diff(pooled, Var<T>::constant(image_embedding.reshaped(pooled.shape())));
}

inline double align_loss(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("align_loss: dimension mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct LossWeights {
  double sal = 1.0;
  double offset = 1.0;
  double align = 1.0;
};

template <typename T>
Var<T> total_loss(const Var<T>& sal, const Var<T>& offset, const Var<T>& align, const LossWeights& w = {}) {
  return ops::weighted_sum<T>({sal, offset, align},
                              {static_cast<T>(w.sal), static_cast<T>(w.offset), static_cast<T>(w.align)});
}

inline double total_loss(double sal, double offset, double align, const LossWeights& w = {}) {
  return w.sal * sal + w.offset * offset + w.align * align;
}

}  // namespace tcslot::loss
