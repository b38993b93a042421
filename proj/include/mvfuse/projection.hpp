#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mvfuse/common.hpp"
#include "mvfuse/geometry.hpp"
#include "mvfuse/grid.hpp"
#include "mvfuse/nn.hpp"
#include "mvfuse/ops.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

/// Channel layout of the raw per-point feature vector.
inline constexpr int kFeatOwnX = 0;
inline constexpr int kFeatOwnY = 1;
inline constexpr int kFeatOwnZ = 2;
inline constexpr int kFeatRefX = 3;
inline constexpr int kFeatRefY = 4;
inline constexpr int kFeatRefZ = 5;
inline constexpr int kFeatRemission = 6;
inline constexpr int kPointFeatureDim = 7;

/// Range-view feature image rasterized at `pose`. `depth` holds the winning
/// range per cell (+inf where empty) and `point_index` the winning point id
/// (-1 where empty); feature columns of empty cells are zero.
template <class Real>
struct RVImageT {
  TensorT<Real> features;  // [C, H, W]
  std::vector<double> depth;
  std::vector<int> point_index;
  RVGridSpec spec;
  Pose pose;

  /// Same geometry, different feature content (e.g. after a network pass).
  RVImageT with_features(TensorT<Real> f) const {
    MVF_CHECK_ARG(f.shape().size() == 3 && f.dim(1) == spec.rows && f.dim(2) == spec.cols,
                  "replacement features must match the range-view grid");
    RVImageT out = *this;
    out.features = std::move(f);
    return out;
  }
};

/// Bird's-eye-view feature image on the reference-pose grid. Unoccupied
/// cells hold zeros.
template <class Real>
struct BEVImageT {
  TensorT<Real> features;  // [C, N, N]
  std::vector<std::uint8_t> occupancy;
  BEVGridSpec spec;
};

using RVImage = RVImageT<double>;
using BEVImage = BEVImageT<double>;

/// Point bookkeeping for one projection pass; occupied + conflict_losers +
/// out_of_grid always equals the number of input points.
struct RasterStats {
  std::size_t total = 0;
  std::size_t occupied = 0;
  std::size_t conflict_losers = 0;
  std::size_t out_of_grid = 0;

  bool conserved() const { return occupied + conflict_losers + out_of_grid == total; }
};

/// Raw per-point features: coordinates in the capturing sensor frame, the
/// same point in the reference frame, and the remission. Shape [7, N].
template <class Real>
TensorT<Real> per_point_features(const Sweep& sweep, const Pose& reference) {
  const std::size_t n = sweep.points.size();
  std::vector<Real> data(static_cast<std::size_t>(kPointFeatureDim) * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point3& p = sweep.points[i];
    const Point3 r = transform_point(p, sweep.pose, reference);
    data[kFeatOwnX * n + i] = static_cast<Real>(p.x);
    data[kFeatOwnY * n + i] = static_cast<Real>(p.y);
    data[kFeatOwnZ * n + i] = static_cast<Real>(p.z);
    data[kFeatRefX * n + i] = static_cast<Real>(r.x);
    data[kFeatRefY * n + i] = static_cast<Real>(r.y);
    data[kFeatRefZ * n + i] = static_cast<Real>(r.z);
    data[kFeatRemission * n + i] = static_cast<Real>(p.remission);
  }
  return TensorT<Real>::from_data({kPointFeatureDim, static_cast<int>(n)}, std::move(data));
}

/// Rasterize per-point feature columns into a range-view image as seen from
/// `at`. Cell conflicts keep the point with the smallest range; exactly equal
/// ranges keep the lowest point index. Out-of-grid points are dropped and
/// counted, never an error.
template <class Real>
RVImageT<Real> rasterize_rv(const Sweep& sweep, const Pose& at, const RVGridSpec& spec,
                            const TensorT<Real>& features, RasterStats* stats = nullptr) {
  spec.validate();
  MVF_CHECK_ARG(features.shape().size() == 2 &&
                    features.dim(1) == static_cast<int>(sweep.points.size()),
                "rasterize_rv features must be [C, point count]");
  const int n_cells = spec.rows * spec.cols;
  RVImageT<Real> out;
  out.spec = spec;
  out.pose = at;
  out.depth.assign(static_cast<std::size_t>(n_cells), std::numeric_limits<double>::infinity());
  out.point_index.assign(static_cast<std::size_t>(n_cells), -1);

  std::size_t out_of_grid = 0;
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    const Point3 q = transform_point(sweep.points[i], sweep.pose, at);
    if (q.xyz().norm() < 1e-9) {
      ++out_of_grid;
      continue;
    }
    const SphericalCoord sph = to_spherical(q);
    const auto cell = rv_cell_of(sph, spec);
    if (!cell.has_value()) {
      ++out_of_grid;
      continue;
    }
    const std::size_t f = rv_flat_index(*cell, spec);
    if (sph.range < out.depth[f]) {  // strict: ties keep the earlier index
      out.depth[f] = sph.range;
      out.point_index[f] = static_cast<int>(i);
    }
  }

  std::size_t occupied = 0;
  for (int idx : out.point_index) occupied += idx >= 0 ? 1 : 0;
  if (stats != nullptr) {
    stats->total = sweep.points.size();
    stats->occupied = occupied;
    stats->out_of_grid = out_of_grid;
    stats->conflict_losers = sweep.points.size() - out_of_grid - occupied;
  }

  TensorT<Real> flat = gather_columns_or_zero(features, out.point_index);
  out.features = reshape(flat, {features.dim(0), spec.rows, spec.cols});
  return out;
}

/// Re-render a range-view image at a later pose: each surviving source point
/// carries its cell's feature column to the cell it lands in at `dst_pose`.
/// Pure gather/scatter — no interpolation — so gradients pass straight
/// through the copied features. Destination conflicts keep the closest range
/// at `dst_pose` (ties: lowest point index).
template <class Real>
RVImageT<Real> warp_rv_to_rv(const RVImageT<Real>& src, const Sweep& src_sweep,
                             const Pose& dst_pose, RasterStats* stats = nullptr) {
  MVF_CHECK(dst_pose.timestamp_us() >= src.pose.timestamp_us(), Errc::invalid_argument,
            "warp destination pose precedes the source pose");
  const int n_cells = src.spec.rows * src.spec.cols;
  MVF_CHECK_ARG(src.features.shape().size() == 3 && src.features.dim(1) == src.spec.rows &&
                    src.features.dim(2) == src.spec.cols,
                "source image features must be [C, H, W]");

  RVImageT<Real> out;
  out.spec = src.spec;
  out.pose = dst_pose;
  out.depth.assign(static_cast<std::size_t>(n_cells), std::numeric_limits<double>::infinity());
  out.point_index.assign(static_cast<std::size_t>(n_cells), -1);
  std::vector<int> src_cell_of_dst(static_cast<std::size_t>(n_cells), -1);

  std::size_t total = 0, out_of_grid = 0;
  for (int f = 0; f < n_cells; ++f) {
    const int i = src.point_index[static_cast<std::size_t>(f)];
    if (i < 0) continue;
    ++total;
    const Point3 q = transform_point(src_sweep.points[static_cast<std::size_t>(i)],
                                     src_sweep.pose, dst_pose);
    if (q.xyz().norm() < 1e-9) {
      ++out_of_grid;
      continue;
    }
    const SphericalCoord sph = to_spherical(q);
    const auto cell = rv_cell_of(sph, src.spec);
    if (!cell.has_value()) {
      ++out_of_grid;
      continue;
    }
    const std::size_t d = rv_flat_index(*cell, src.spec);
    const bool better = sph.range < out.depth[d] ||
                        (sph.range == out.depth[d] && i < out.point_index[d]);
    if (better) {
      out.depth[d] = sph.range;
      out.point_index[d] = i;
      src_cell_of_dst[d] = f;
    }
  }

  std::size_t occupied = 0;
  for (int idx : out.point_index) occupied += idx >= 0 ? 1 : 0;
  if (stats != nullptr) {
    stats->total = total;
    stats->occupied = occupied;
    stats->out_of_grid = out_of_grid;
    stats->conflict_losers = total - out_of_grid - occupied;
  }

  TensorT<Real> flat = reshape(src.features, {src.features.dim(0), n_cells});
  TensorT<Real> gathered = gather_columns_or_zero(flat, src_cell_of_dst);
  out.features = reshape(gathered, {src.features.dim(0), src.spec.rows, src.spec.cols});
  return out;
}

namespace detail {

/// Shared point bookkeeping for BEV projections: reference-frame coordinates,
/// destination cell, and offset from the cell center for each point that
/// lands inside the grid.
struct BevBinning {
  std::vector<int> kept;       // original point indices, ascending
  std::vector<int> cells;      // flat BEV cell per kept point
  std::vector<double> dx, dy;  // point minus cell center
  std::size_t dropped = 0;
};

inline BevBinning bin_points_bev(const Sweep& sweep, const Pose& reference,
                                 const BEVGridSpec& spec) {
  spec.validate();
  BevBinning bin;
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    const Point3 r = transform_point(sweep.points[i], sweep.pose, reference);
    const auto cell = bev_cell_of(r.x, r.y, spec);
    if (!cell.has_value()) {
      ++bin.dropped;
      continue;
    }
    double cx = 0.0, cy = 0.0;
    bev_cell_center(*cell, spec, cx, cy);
    bin.kept.push_back(static_cast<int>(i));
    bin.cells.push_back(static_cast<int>(bev_flat_index(*cell, spec)));
    bin.dx.push_back(r.x - cx);
    bin.dy.push_back(r.y - cy);
  }
  return bin;
}

template <class Real>
BEVImageT<Real> empty_bev(int channels, const BEVGridSpec& spec) {
  const int n = spec.cells_per_axis();
  BEVImageT<Real> out;
  out.spec = spec;
  out.features = TensorT<Real>::zeros({channels, n, n});
  out.occupancy.assign(static_cast<std::size_t>(n) * n, 0);
  return out;
}

template <class Real>
BEVImageT<Real> finish_bev(TensorT<Real> per_point, const BevBinning& bin,
                           const BEVGridSpec& spec) {
  const int n = spec.cells_per_axis();
  TensorT<Real> cells = scatter_mean_columns(per_point, bin.cells, n * n);
  BEVImageT<Real> out;
  out.spec = spec;
  out.features = reshape(cells, {per_point.dim(0), n, n});
  out.occupancy.assign(static_cast<std::size_t>(n) * n, 0);
  for (int c : bin.cells) out.occupancy[static_cast<std::size_t>(c)] = 1;
  return out;
}

}  // namespace detail

/// Learned range-view to bird's-eye-view projection: every sweep point
/// gathers its range-view cell's feature column g (points that lost the RV
/// rasterization read the winning cell), forms h = concat(Δc, g) with Δc the
/// point's reference-frame x,y offset from its BEV cell center, and each BEV
/// cell averages MLP(h) over its points. Empty cells stay zero.
template <class Real>
BEVImageT<Real> warp_rv_to_bev(const RVImageT<Real>& src, const Sweep& sweep,
                               const Pose& reference, const BEVGridSpec& spec,
                               nn::PointMlp<Real>& mlp, const nn::RunCtx<Real>& ctx,
                               RasterStats* stats = nullptr) {
  const int rv_cells = src.spec.rows * src.spec.cols;
  MVF_CHECK_ARG(src.features.shape().size() == 3, "source image features must be [C, H, W]");
  detail::BevBinning bin = detail::bin_points_bev(sweep, reference, spec);

  // Each kept point must also resolve a range-view cell to gather g from.
  std::vector<int> rv_of_point;
  std::vector<int> kept2;
  std::vector<double> dx2, dy2;
  std::vector<int> cells2;
  for (std::size_t j = 0; j < bin.kept.size(); ++j) {
    const std::size_t i = static_cast<std::size_t>(bin.kept[j]);
    const Point3 q = transform_point(sweep.points[i], sweep.pose, src.pose);
    std::optional<RVCell> cell;
    if (q.xyz().norm() >= 1e-9) cell = rv_cell_of(to_spherical(q), src.spec);
    if (!cell.has_value()) {
      ++bin.dropped;
      continue;
    }
    rv_of_point.push_back(static_cast<int>(rv_flat_index(*cell, src.spec)));
    kept2.push_back(bin.kept[j]);
    cells2.push_back(bin.cells[j]);
    dx2.push_back(bin.dx[j]);
    dy2.push_back(bin.dy[j]);
  }
  bin.kept = std::move(kept2);
  bin.cells = std::move(cells2);
  bin.dx = std::move(dx2);
  bin.dy = std::move(dy2);

  if (stats != nullptr) {
    stats->total = sweep.points.size();
    stats->out_of_grid = bin.dropped;
    std::vector<std::uint8_t> seen(spec.cell_count(), 0);
    for (int c : bin.cells) seen[static_cast<std::size_t>(c)] = 1;
    stats->occupied = 0;
    for (auto v : seen) stats->occupied += v;
    stats->conflict_losers = bin.kept.size() - stats->occupied;
  }

  if (bin.kept.empty()) return detail::empty_bev<Real>(mlp.fc.out_dim, spec);

  const int m = static_cast<int>(bin.kept.size());
  std::vector<Real> dc(2 * static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    dc[static_cast<std::size_t>(j)] = static_cast<Real>(bin.dx[static_cast<std::size_t>(j)]);
    dc[static_cast<std::size_t>(m) + j] = static_cast<Real>(bin.dy[static_cast<std::size_t>(j)]);
  }
  TensorT<Real> delta = TensorT<Real>::from_data({2, m}, std::move(dc));
  TensorT<Real> flat = reshape(src.features, {src.features.dim(0), rv_cells});
  TensorT<Real> g = gather_columns(flat, rv_of_point);
  TensorT<Real> h = concat_channels(delta, g);
  TensorT<Real> y = mlp.forward(h, ctx);
  return detail::finish_bev(std::move(y), bin, spec);
}

/// Plain scatter-mean of raw per-point feature columns into the reference
/// BEV grid (no cell-offset channels, no learned aggregation) — the one-shot
/// fusion baseline's BEV projection.
template <class Real>
BEVImageT<Real> scatter_bev_mean(const TensorT<Real>& features, const Sweep& sweep,
                                 const Pose& reference, const BEVGridSpec& spec,
                                 RasterStats* stats = nullptr) {
  MVF_CHECK_ARG(features.shape().size() == 2 &&
                    features.dim(1) == static_cast<int>(sweep.points.size()),
                "scatter_bev_mean features must be [C, point count]");
  detail::BevBinning bin = detail::bin_points_bev(sweep, reference, spec);
  if (stats != nullptr) {
    stats->total = sweep.points.size();
    stats->out_of_grid = bin.dropped;
    std::vector<std::uint8_t> seen(spec.cell_count(), 0);
    for (int c : bin.cells) seen[static_cast<std::size_t>(c)] = 1;
    stats->occupied = 0;
    for (auto v : seen) stats->occupied += v;
    stats->conflict_losers = bin.kept.size() - stats->occupied;
  }
  if (bin.kept.empty()) return detail::empty_bev<Real>(features.dim(0), spec);
  TensorT<Real> cols = gather_columns(features, bin.kept);
  return detail::finish_bev(std::move(cols), bin, spec);
}

}  // namespace mvf
