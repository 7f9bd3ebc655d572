#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "tcslot/errors.hpp"

namespace tcslot::geometry {

/// Implant position on one axial slice; z is the (continuous) slice index.
struct CenterPoint3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Least-squares 3D line x = s1*z + b1, y = s2*z + b2 and its combined slope.
struct CenterlineFit {
  double s1 = 0.0;
  double s2 = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double tau = 0.0;
};

/// |s1| + |s2|.
inline double combined_slope(double s1, double s2) { return std::abs(s1) + std::abs(s2); }

/// Fits x and y independently against z with the closed-form least-squares slope
///   s = (n Σxz - Σx Σz) / (n Σz² - (Σz)²)
/// evaluated on mean-centred coordinates, which leaves the slope unchanged and keeps
/// the denominator well conditioned. Intercepts follow as mean(x) - s * mean(z).
/// Sums are accumulated over points sorted by (z, x, y) so the result does not
/// depend on input order.
inline CenterlineFit fit_centerline(std::span<const CenterPoint3D> points) {
  const auto n = points.size();
  if (n < 2) throw DegenerateGeometryError("fit_centerline: need at least two points");
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw NumericError("fit_centerline: non-finite coordinate");
    }
  }

  std::vector<CenterPoint3D> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const CenterPoint3D& a, const CenterPoint3D& b) {
    if (a.z != b.z) return a.z < b.z;
    if (a.x != b.x) return a.x < b.x;
    return a.y < b.y;
  });

  double mx = 0.0, my = 0.0, mz = 0.0;
  for (const auto& p : sorted) {
    mx += p.x;
    my += p.y;
    mz += p.z;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  mx *= inv_n;
  my *= inv_n;
  mz *= inv_n;

  double szz = 0.0, sxz = 0.0, syz = 0.0;
  for (const auto& p : sorted) {
    const double dz = p.z - mz;
    szz += dz * dz;
    sxz += (p.x - mx) * dz;
    syz += (p.y - my) * dz;
  }
  if (!(szz > 0.0)) {
    throw DegenerateGeometryError("fit_centerline: all points share the same z; slope undefined");
  }

  CenterlineFit fit;
  fit.s1 = sxz / szz;
  fit.s2 = syz / szz;
  fit.b1 = mx - fit.s1 * mz;
  fit.b2 = my - fit.s2 * mz;
  fit.tau = combined_slope(fit.s1, fit.s2);
  return fit;
}

inline CenterlineFit fit_centerline(const std::vector<CenterPoint3D>& points) {
  return fit_centerline(std::span<const CenterPoint3D>(points));
}

/// Evaluates the fitted line at slice depth z_root (crown -> root transfer).
inline std::pair<double, double> project_to_root(const CenterlineFit& fit, double z_root) {
  if (!std::isfinite(fit.s1) || !std::isfinite(fit.s2) || !std::isfinite(fit.b1) ||
      !std::isfinite(fit.b2) || !std::isfinite(z_root)) {
    throw NumericError("project_to_root: non-finite fit or depth");
  }
  return {fit.s1 * z_root + fit.b1, fit.s2 * z_root + fit.b2};
}

}  // namespace tcslot::geometry
