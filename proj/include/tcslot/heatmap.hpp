#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tcslot/tensor.hpp"

namespace tcslot::heatmap {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

/// Ground truth for one image at the prediction grid (H/g, W/g).
struct HeatmapTarget {
  Tensor<double> heatmap;       // (H/g, W/g), values in [0, 1]
  std::vector<Point2> offsets;  // per keypoint, each component in [0, 1)
  std::vector<Cell> keypoint_cells;
  int g = 4;
  double sigma = 1.0;
};

struct Detection {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

/// Gaussian std in grid cells for an object of the given pixel radius.
inline double sigma_from_radius(double radius_px, int g) { return radius_px / (3.0 * g); }

inline Cell keypoint_cell(const Point2& c, int g) {
  return {static_cast<int>(std::floor(c.x / g)), static_cast<int>(std::floor(c.y / g))};
}

/// Sub-cell remainder lost when mapping a pixel position onto the grid.
inline Point2 offset_target(const Point2& center, int g) {
  if (g < 1) throw ConfigError("offset_target: g must be >= 1");
  const double gx = center.x / g, gy = center.y / g;
  return {gx - std::floor(gx), gy - std::floor(gy)};
}

/// Splats one unit Gaussian per center at its grid cell; overlaps take the max.
inline HeatmapTarget render_heatmap(const std::vector<Point2>& centers, int image_height,
                                    int image_width, int g, double sigma) {
  if (g < 1) throw ConfigError("render_heatmap: g must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("render_heatmap: sigma must be positive");
  if (image_height % g != 0 || image_width % g != 0) {
    throw ConfigError("render_heatmap: image size must be a multiple of g");
  }
  const int gh = image_height / g, gw = image_width / g;
  HeatmapTarget t;
  t.g = g;
  t.sigma = sigma;
  t.heatmap = Tensor<double>(Shape{gh, gw}, 0.0);
  const double denom = 2.0 * sigma * sigma;
  for (const auto& c : centers) {
    if (!(c.x >= 0.0 && c.x < image_width && c.y >= 0.0 && c.y < image_height)) {
      throw DataError("render_heatmap: center (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                      ") outside image");
    }
    const Cell cell = keypoint_cell(c, g);
    t.keypoint_cells.push_back(cell);
    t.offsets.push_back(offset_target(c, g));
    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) {
        const double dx = x - cell.x, dy = y - cell.y;
        const double v = std::exp(-(dx * dx + dy * dy) / denom);
        double& dst = t.heatmap.at(y, x);
        dst = std::max(dst, v);
      }
    }
  }
  return t;
}

/// Dense (2, H/g, W/g) offset map holding each keypoint's offset at its cell.
inline Tensor<double> offset_map(const HeatmapTarget& t) {
  Tensor<double> m(Shape{2, t.heatmap.dim(0), t.heatmap.dim(1)}, 0.0);
  for (std::size_t i = 0; i < t.keypoint_cells.size(); ++i) {
    m.at(0, t.keypoint_cells[i].y, t.keypoint_cells[i].x) = t.offsets[i].x;
    m.at(1, t.keypoint_cells[i].y, t.keypoint_cells[i].x) = t.offsets[i].y;
  }
  return m;
}

/// Peak decoding: 3x3 local maxima strictly above `score_threshold`, best first.
/// Heatmap is (H', W') or (1, H', W'); offsets are a dense (2, H', W') map read at
/// each peak cell. Ties in score keep raster order.
template <typename T>
std::vector<Detection> decode_predictions(const Tensor<T>& pred_heatmap, const Tensor<T>& pred_offsets,
                                          int g, double score_threshold, int max_detections) {
  const int gh = pred_heatmap.rank() == 3 ? pred_heatmap.dim(1) : pred_heatmap.dim(0);
  const int gw = pred_heatmap.rank() == 3 ? pred_heatmap.dim(2) : pred_heatmap.dim(1);
  if (pred_offsets.rank() != 3 || pred_offsets.dim(0) != 2 || pred_offsets.dim(1) != gh ||
      pred_offsets.dim(2) != gw) {
    throw ShapeError("decode_predictions: offsets must be (2, " + std::to_string(gh) + ", " +
                     std::to_string(gw) + ")");
  }
  auto hm = [&](int y, int x) { return static_cast<double>(pred_heatmap[static_cast<std::size_t>(y) * gw + x]); };

  std::vector<Detection> out;
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const double v = hm(y, x);
      if (!std::isfinite(v)) throw NumericError("decode_predictions: non-finite heatmap value");
      if (!(v > score_threshold)) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if ((dx || dy) && yy >= 0 && yy < gh && xx >= 0 && xx < gw && hm(yy, xx) > v) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      const double ox = static_cast<double>(pred_offsets.at(0, y, x));
      const double oy = static_cast<double>(pred_offsets.at(1, y, x));
      Detection d;
      d.x = std::clamp((x + ox) * g, 0.0, static_cast<double>(gw * g));
      d.y = std::clamp((y + oy) * g, 0.0, static_cast<double>(gh * g));
      d.score = std::clamp(v, 0.0, 1.0);
      out.push_back(d);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (max_detections >= 0 && static_cast<int>(out.size()) > max_detections) out.resize(max_detections);
  return out;
}

}  // namespace tcslot::heatmap
