#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tcslot/embedding.hpp"
#include "tcslot/geometry.hpp"
#include "tcslot/heatmap.hpp"

namespace tcslot::synth {

using embedding::Image;
using geometry::CenterPoint3D;

struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<float> voxels;  // (depth, height, width), values in [0, 1]

  float at(int z, int y, int x) const {
    return voxels[(static_cast<std::size_t>(z) * height + y) * width + x];
  }

  Image slice(int z) const {
    if (z < 0 || z >= depth) throw DataError("volume slice index " + std::to_string(z) + " out of range");
    Image img{height, width, {}};
    const auto begin = voxels.begin() + static_cast<std::ptrdiff_t>(z) * height * width;
    img.pixels.assign(begin, begin + static_cast<std::ptrdiff_t>(height) * width);
    return img;
  }
};

struct GapSpec {
  std::string region;  // left | middle | right
  double s1 = 0.0;     // px per slice along x
  double s2 = 0.0;     // px per slice along y
};

/// Procedural jaw phantom. Depth runs crown (small z) to root (large z).
struct PhantomSpec {
  int depth = 24;
  int height = 64;
  int width = 64;
  int teeth_count = 12;
  std::vector<GapSpec> gaps;
  bool sparse_region = false;
  bool existing_implant = false;
  double noise = 0.03;
  std::uint64_t seed = 0;
  int crown_begin = 8;      // first crown slice (inclusive)
  int crown_end = 12;       // last crown slice (inclusive)
  int implant_emerge = 15;  // first slice where the implant body is visible
  double tooth_radius = 3.0;
  double implant_radius = 2.0;
  double max_tau = 1.5;

  double reference_depth() const { return 0.5 * (crown_begin + crown_end); }

  void validate() const {
    if (depth <= 0 || height <= 0 || width <= 0) throw ConfigError("phantom: dimensions must be positive");
    if (teeth_count < 6) throw ConfigError("phantom: need at least 6 teeth");
    if (crown_begin < 0 || crown_end < crown_begin || crown_end >= depth) {
      throw ConfigError("phantom: invalid crown slice range");
    }
    if (implant_emerge <= crown_end || implant_emerge >= depth) {
      throw ConfigError("phantom: implant must emerge below the crown range and within the volume");
    }
    if (!(tooth_radius > 0.0) || !(implant_radius > 0.0) || noise < 0.0) {
      throw ConfigError("phantom: radii must be positive and noise non-negative");
    }
    for (const auto& g : gaps) {
      embedding::require_condition_word(g.region);
      if (!std::isfinite(g.s1) || !std::isfinite(g.s2) || geometry::combined_slope(g.s1, g.s2) > max_tau) {
        throw ConfigError("phantom: implant slope outside configured range");
      }
    }
  }
};

struct ImplantAnnotation {
  std::vector<CenterPoint3D> centerline;  // one point per slice, exactly collinear
  std::string condition;
  double s1 = 0.0;
  double s2 = 0.0;
  double tau = 0.0;
  int crown_begin = 0;
  int crown_end = 0;
  double z_root = 0.0;

  heatmap::Point2 position_at(int z) const {
    const auto& p = centerline.at(static_cast<std::size_t>(z));
    return {p.x, p.y};
  }
};

struct Phantom {
  Volume volume;
  std::vector<ImplantAnnotation> implants;
};

namespace detail {

struct Vec2 {
  double x, y;
};

// Position of tooth slot u in [0, 1] on a U-shaped arch opening towards +y.
inline Vec2 arch_point(double u, int h, int w, double scale) {
  const double cx = 0.5 * w, cy = 0.80 * h;
  const double rx = 0.36 * w * scale, ry = 0.52 * h * scale;
  constexpr double kPi = 3.14159265358979323846;
  return {cx - rx * std::cos(kPi * u), cy - ry * std::sin(kPi * u)};
}

inline Vec2 arch_tangent(double u, int h, int w, double scale) {
  const auto a = arch_point(u - 1e-3, h, w, scale), b = arch_point(u + 1e-3, h, w, scale);
  const double dx = b.x - a.x, dy = b.y - a.y, n = std::hypot(dx, dy);
  return {dx / n, dy / n};
}

inline int region_of_slot(int slot, int teeth) {
  const double u = (slot + 0.5) / teeth;
  return u < 1.0 / 3.0 ? 0 : (u < 2.0 / 3.0 ? 1 : 2);
}

inline int region_index(const std::string& r) { return r == "left" ? 0 : (r == "middle" ? 1 : 2); }

// Anti-aliased disk painted with max blending.
inline void paint_disk(std::vector<float>& plane, int h, int w, double cx, double cy, double r, float value) {
  if (r <= 0.0) return;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1))), y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1))), x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double cover = std::clamp(r + 0.5 - std::hypot(x - cx, y - cy), 0.0, 1.0);
      float& dst = plane[static_cast<std::size_t>(y) * w + x];
      dst = std::max(dst, static_cast<float>(cover * value));
    }
  }
}

}  // namespace detail

/// Renders the phantom and its implant annotations. Each axial slice shows a ring
/// of teeth inside a soft-tissue band. A planned implant at a gap appears as a dim
/// socket at crown depth and as a bright body from `implant_emerge` on, both
/// following its tilted centerline. A sparse-teeth region mimics a gap at crown
/// depth but its neighbouring teeth converge quickly with depth and no implant
/// follows. An existing implant is bright at every depth.
inline Phantom generate_volume(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n = spec.teeth_count, h = spec.height, w = spec.width;
  const double zref = spec.reference_depth();
  const double arch_scale = 0.94 + 0.08 * unif(rng);

  // slot roles: 0 tooth, 1 planned gap, 2 sparse confuser, 3 existing implant
  std::vector<int> role(n, 0);
  std::vector<int> gap_slot;
  auto free_slots_in = [&](int region) {
    std::vector<int> s;
    for (int j = 0; j < n; ++j) {
      if (role[j] != 0 || detail::region_of_slot(j, n) != region) continue;
      const bool next_to_special = (j > 0 && role[j - 1] != 0) || (j + 1 < n && role[j + 1] != 0);
      if (!next_to_special) s.push_back(j);
    }
    return s;
  };
  for (const auto& g : spec.gaps) {
    auto slots = free_slots_in(detail::region_index(g.region));
    if (slots.empty()) throw ConfigError("phantom: gaps overlap (no free slot in region " + g.region + ")");
    const int j = slots[static_cast<std::size_t>(unif(rng) * slots.size()) % slots.size()];
    role[j] = 1;
    gap_slot.push_back(j);
  }
  auto pick_any_free = [&]() -> int {
    std::vector<int> s;
    for (int r = 0; r < 3; ++r) {
      auto f = free_slots_in(r);
      s.insert(s.end(), f.begin(), f.end());
    }
    if (s.empty()) return -1;
    return s[static_cast<std::size_t>(unif(rng) * s.size()) % s.size()];
  };
  int sparse_slot = -1, existing_slot = -1;
  if (spec.sparse_region) {
    // Prefer the region of the first planned gap so the text condition alone
    // cannot tell the two apart.
    std::vector<int> s;
    if (!spec.gaps.empty()) s = free_slots_in(detail::region_index(spec.gaps.front().region));
    sparse_slot = s.empty() ? pick_any_free() : s[static_cast<std::size_t>(unif(rng) * s.size()) % s.size()];
    if (sparse_slot < 0) throw ConfigError("phantom: no room for the sparse-teeth region");
    role[sparse_slot] = 2;
  }
  if (spec.existing_implant) {
    existing_slot = pick_any_free();
    if (existing_slot < 0) throw ConfigError("phantom: no room for the existing implant");
    role[existing_slot] = 3;
  }

  std::vector<detail::Vec2> slot_pos(n), slot_tan(n);
  std::vector<detail::Vec2> tooth_tilt(n);
  for (int j = 0; j < n; ++j) {
    const double u = (j + 0.5) / n;
    slot_pos[j] = detail::arch_point(u, h, w, arch_scale);
    slot_tan[j] = detail::arch_tangent(u, h, w, arch_scale);
    tooth_tilt[j] = {0.16 * (unif(rng) - 0.5), 0.16 * (unif(rng) - 0.5)};
  }
  // Sparse region: neighbours drift towards the empty slot along the arch as
  // the slice moves away from the reference depth.
  const double sparse_drift = 0.35 + 0.15 * unif(rng);

  Phantom out;
  out.volume = Volume{spec.depth, h, w, std::vector<float>(static_cast<std::size_t>(spec.depth) * h * w, 0.0f)};

  for (std::size_t gi = 0; gi < spec.gaps.size(); ++gi) {
    const auto& g = spec.gaps[gi];
    const auto base = slot_pos[gap_slot[gi]];
    ImplantAnnotation a;
    a.condition = g.region;
    a.s1 = g.s1;
    a.s2 = g.s2;
    a.tau = geometry::combined_slope(g.s1, g.s2);
    a.crown_begin = spec.crown_begin;
    a.crown_end = spec.crown_end;
    a.z_root = spec.depth - 1;
    for (int z = 0; z < spec.depth; ++z) {
      a.centerline.push_back({base.x + g.s1 * (z - zref), base.y + g.s2 * (z - zref), static_cast<double>(z)});
    }
    for (int z = spec.crown_begin; z <= spec.crown_end; ++z) {
      const auto p = a.position_at(z);
      if (!(p.x >= 0 && p.x < w && p.y >= 0 && p.y < h)) {
        throw ConfigError("phantom: implant leaves the image within the crown range");
      }
    }
    out.implants.push_back(std::move(a));
  }

  std::normal_distribution<double> noise(0.0, spec.noise);
  const double band = 2.4 * spec.tooth_radius;
  std::vector<float> plane(static_cast<std::size_t>(h) * w);
  for (int z = 0; z < spec.depth; ++z) {
    std::fill(plane.begin(), plane.end(), 0.05f);
    const double depth_frac = static_cast<double>(z) / spec.depth;
    const double dz = z - zref;

    // soft-tissue band along the arch
    for (int s = 0; s <= 200; ++s) {
      const auto p = detail::arch_point(s / 200.0, h, w, arch_scale);
      detail::paint_disk(plane, h, w, p.x, p.y, band, 0.22f);
    }

    const double tooth_r = spec.tooth_radius * (1.0 - 0.35 * depth_frac);
    for (int j = 0; j < n; ++j) {
      const auto p = slot_pos[j];
      const auto tilt = tooth_tilt[j];
      switch (role[j]) {
        case 0: {
          double shift = 0.0;
          if (sparse_slot >= 0 && std::abs(j - sparse_slot) == 1) {
            shift = (j < sparse_slot ? 1.0 : -1.0) * sparse_drift * std::abs(dz);
            shift = std::clamp(shift, -0.9 * spec.tooth_radius * 2, 0.9 * spec.tooth_radius * 2);
          }
          detail::paint_disk(plane, h, w, p.x + tilt.x * dz + shift * slot_tan[j].x,
                             p.y + tilt.y * dz + shift * slot_tan[j].y, tooth_r, 0.80f);
          break;
        }
        case 2: {
          // socket-like texture that closes up away from the reference depth
          const double r = 0.8 * spec.tooth_radius - sparse_drift * std::abs(dz);
          detail::paint_disk(plane, h, w, p.x, p.y, r, 0.42f);
          break;
        }
        case 3: {
          const double ex = p.x + tilt.x * dz, ey = p.y + tilt.y * dz;
          if (z <= spec.crown_end) detail::paint_disk(plane, h, w, ex, ey, tooth_r, 0.80f);
          detail::paint_disk(plane, h, w, ex, ey, spec.implant_radius, 1.0f);
          break;
        }
        default:
          break;
      }
    }
    for (const auto& a : out.implants) {
      const auto p = a.position_at(z);
      if (z < spec.implant_emerge) {
        detail::paint_disk(plane, h, w, p.x, p.y, 0.8 * spec.tooth_radius, 0.42f);
      } else {
        detail::paint_disk(plane, h, w, p.x, p.y, spec.implant_radius, 1.0f);
      }
    }

    float* dst = out.volume.voxels.data() + static_cast<std::size_t>(z) * h * w;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      const double v = plane[i] + (spec.noise > 0.0 ? noise(rng) : 0.0);
      dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

struct TargetConfig {
  int g = 4;
  double sigma = 1.0;
};

struct SliceTriplet {
  std::array<Image, 3> slices;  // (t - k, t, t + k)
  int t = 0;
  int k = 0;
  std::string patient_id;
  std::string condition;
  heatmap::Point2 center;
  double tau = 0.0;
  heatmap::HeatmapTarget target;
};

/// Default slice interval.
inline constexpr int kDefaultInterval = 7;

inline SliceTriplet extract_triplet(const Volume& volume, const ImplantAnnotation& annotation, int t,
                                    int k = kDefaultInterval, const TargetConfig& target = {},
                                    const std::string& patient_id = {}) {
  if (k < 0) throw DataError("extract_triplet: k must be non-negative");
  if (t - k < 0 || t + k >= volume.depth) {
    throw DataError("extract_triplet: slices t-k=" + std::to_string(t - k) + " .. t+k=" + std::to_string(t + k) +
                    " fall outside depth " + std::to_string(volume.depth));
  }
  if (t < annotation.crown_begin || t > annotation.crown_end) {
    throw DataError("extract_triplet: t=" + std::to_string(t) + " outside the crown slice range");
  }
  SliceTriplet tr;
  tr.slices = {volume.slice(t - k), volume.slice(t), volume.slice(t + k)};
  tr.t = t;
  tr.k = k;
  tr.patient_id = patient_id;
  tr.condition = annotation.condition;
  tr.center = annotation.position_at(t);
  tr.tau = annotation.tau;
  tr.target = heatmap::render_heatmap({tr.center}, volume.height, volume.width, target.g, target.sigma);
  return tr;
}

}  // namespace tcslot::synth
