#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "mvfuse/common.hpp"
#include "mvfuse/geometry.hpp"

namespace mvf {

/// Range-view grid: rows bin elevation, columns bin the full azimuth circle.
struct RVGridSpec {
  int rows = 16;
  int cols = 256;
  double elevation_min = -15.0 * kPi / 180.0;
  double elevation_max = 15.0 * kPi / 180.0;

  void validate() const {
    MVF_CHECK_ARG(rows >= 1 && cols >= 1, "RV grid needs at least one row and column");
    MVF_CHECK_ARG(elevation_min < elevation_max, "RV grid elevation_min must be < elevation_max");
  }

  int cell_count() const { return rows * cols; }
};

struct RVCell {
  int row = 0;
  int col = 0;
};

/// Ego-centered square BEV grid. `length` metres on a side at `resolution` m/cell.
struct BEVGridSpec {
  double length = 64.0;
  double resolution = 0.5;

  void validate() const {
    MVF_CHECK_ARG(length > 0.0 && resolution > 0.0, "BEV grid length/resolution must be positive");
    const double n = length / resolution;
    MVF_CHECK_ARG(std::abs(n - std::round(n)) < 1e-9 && std::round(n) >= 1.0,
                  "BEV grid length must be an integer multiple of resolution");
  }

  int cells_per_axis() const { return static_cast<int>(std::round(length / resolution)); }
  int cell_count() const {
    const int n = cells_per_axis();
    return n * n;
  }
};

struct BEVCell {
  int ix = 0;
  int iy = 0;
};

/// Azimuth bins are half-open with column 0 at -pi; elevation end-points are inclusive.
inline std::optional<RVCell> rv_cell_of(const SphericalCoord& s, const RVGridSpec& spec) {
  if (s.elevation < spec.elevation_min || s.elevation > spec.elevation_max) return std::nullopt;
  int col = static_cast<int>(std::floor((s.azimuth + kPi) / (2.0 * kPi) * spec.cols));
  if (col < 0) col = 0;
  if (col >= spec.cols) col = spec.cols - 1;
  const double span = spec.elevation_max - spec.elevation_min;
  int row = static_cast<int>(std::floor((s.elevation - spec.elevation_min) / span * spec.rows));
  if (row >= spec.rows) row = spec.rows - 1;
  if (row < 0) row = 0;
  return RVCell{row, col};
}

/// Angles at the center of an RV cell.
inline SphericalCoord rv_cell_center(const RVCell& cell, const RVGridSpec& spec) {
  SphericalCoord s;
  s.range = 1.0;
  s.azimuth = -kPi + (cell.col + 0.5) / spec.cols * 2.0 * kPi;
  const double span = spec.elevation_max - spec.elevation_min;
  s.elevation = spec.elevation_min + (cell.row + 0.5) / spec.rows * span;
  return s;
}

/// Half-open cells: a point exactly on the upper ROI boundary is out of grid.
inline std::optional<BEVCell> bev_cell_of(double x, double y, const BEVGridSpec& spec) {
  const double half = spec.length / 2.0;
  const int n = spec.cells_per_axis();
  const int ix = static_cast<int>(std::floor((x + half) / spec.resolution));
  const int iy = static_cast<int>(std::floor((y + half) / spec.resolution));
  if (ix < 0 || ix >= n || iy < 0 || iy >= n) return std::nullopt;
  return BEVCell{ix, iy};
}

inline std::optional<BEVCell> bev_cell_of(const Point3& p, const BEVGridSpec& spec) {
  return bev_cell_of(p.x, p.y, spec);
}

inline void bev_cell_center(const BEVCell& cell, const BEVGridSpec& spec, double& x, double& y) {
  const double half = spec.length / 2.0;
  x = -half + (cell.ix + 0.5) * spec.resolution;
  y = -half + (cell.iy + 0.5) * spec.resolution;
}

/// Flat index used by feature maps: row-major over (iy, ix) so that images
/// index as [row=y][col=x].
inline int bev_flat_index(const BEVCell& cell, const BEVGridSpec& spec) {
  return cell.iy * spec.cells_per_axis() + cell.ix;
}

inline int rv_flat_index(const RVCell& cell, const RVGridSpec& spec) {
  return cell.row * spec.cols + cell.col;
}

}  // namespace mvf
