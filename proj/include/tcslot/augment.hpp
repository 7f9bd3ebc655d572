#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "tcslot/dataset.hpp"

namespace tcslot::augment {

// Parameter ranges are implementation defaults; nothing upstream pins them.
struct AugmentConfig {
  bool flip = true;
  bool crop = true;
  bool scale = false;
  double max_shift_px = 4.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double fill = 0.05;
};

/// Forward map of an augmentation on pixel coordinates (pixel centres at integers):
///   p' = scale * (p - c) + c + shift, then optionally x' = (W - 1) - x'.
struct GeometricTransform {
  double scale = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  bool flip = false;
  int height = 0;
  int width = 0;

  heatmap::Point2 apply(const heatmap::Point2& p) const {
    const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    double x = scale * (p.x - cx) + cx + shift_x;
    const double y = scale * (p.y - cy) + cy + shift_y;
    if (flip) x = (width - 1) - x;
    return {x, y};
  }

  heatmap::Point2 invert(const heatmap::Point2& q) const {
    const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    const double x = flip ? (width - 1) - q.x : q.x;
    return {(x - shift_x - cx) / scale + cx, (q.y - shift_y - cy) / scale + cy};
  }
};

/// Resamples an image under the transform (bilinear, constant fill outside).
inline embedding::Image warp(const embedding::Image& img, const GeometricTransform& tf, double fill) {
  embedding::Image out{img.height, img.width, std::vector<float>(img.pixels.size(), static_cast<float>(fill))};
  const bool identity_grid = tf.scale == 1.0 && std::floor(tf.shift_x) == tf.shift_x && std::floor(tf.shift_y) == tf.shift_y;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto src = tf.invert({static_cast<double>(x), static_cast<double>(y)});
      float v = static_cast<float>(fill);
      if (identity_grid) {
        const int sx = static_cast<int>(std::lround(src.x)), sy = static_cast<int>(std::lround(src.y));
        if (sx >= 0 && sx < img.width && sy >= 0 && sy < img.height) v = img.at(sy, sx);
      } else {
        const int x0 = static_cast<int>(std::floor(src.x)), y0 = static_cast<int>(std::floor(src.y));
        const double fx = src.x - x0, fy = src.y - y0;
        auto px = [&](int yy, int xx) {
          return (xx >= 0 && xx < img.width && yy >= 0 && yy < img.height) ? static_cast<double>(img.at(yy, xx)) : fill;
        };
        v = static_cast<float>((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                               fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)));
      }
      out.pixels[static_cast<std::size_t>(y) * img.width + x] = v;
    }
  }
  return out;
}

/// Draws one transform; all three slices and the keypoints share it.
inline GeometricTransform sample_transform(const AugmentConfig& cfg, int height, int width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GeometricTransform tf;
  tf.height = height;
  tf.width = width;
  if (cfg.scale) tf.scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u(rng);
  if (cfg.crop) {
    const int m = static_cast<int>(std::floor(cfg.max_shift_px));
    std::uniform_int_distribution<int> shift(-m, m);
    tf.shift_x = shift(rng);
    tf.shift_y = shift(rng);
  }
  if (cfg.flip) tf.flip = u(rng) < 0.5;
  return tf;
}

/// Applies a transform to a sample. A horizontal flip mirrors the condition word
/// (left <-> right) so the text stays consistent with the image.
inline dataset::Sample apply(const dataset::Sample& s, const GeometricTransform& tf, double fill) {
  dataset::Sample out = s;
  for (int i = 0; i < 3; ++i) out.slices[i] = warp(s.slices[i], tf, fill);
  for (auto& p : out.targets) p = tf.apply(p);
  if (tf.flip) out.condition = embedding::mirrored_condition(s.condition);
  return out;
}

/// Random augmentation; falls back to the original when a keypoint would leave the image.
inline dataset::Sample augment(const dataset::Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.flip && !cfg.crop && !cfg.scale) return s;
  const int h = s.slices[1].height, w = s.slices[1].width;
  const auto tf = sample_transform(cfg, h, w, rng);
  for (const auto& p : s.targets) {
    const auto q = tf.apply(p);
    if (!(q.x >= 0 && q.x < w && q.y >= 0 && q.y < h)) return s;
  }
  return apply(s, tf, cfg.fill);
}

}  // namespace tcslot::augment
