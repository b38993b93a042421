#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mvfuse/model.hpp"
#include "mvfuse/projection.hpp"

namespace mvf {

struct BenchRow {
  std::string kernel;
  std::size_t points = 0;
  double median_ms = 0.0;
  int runs = 0;
};

namespace detail {

/// A synthetic sweep with points spread over the full azimuth circle and the
/// usable elevation band, at ranges that keep everything inside a 64 m ROI.
inline Sweep bench_sweep(std::size_t n_points, std::uint64_t seed, const Pose& pose) {
  Rng rng(seed);
  Sweep s;
  s.pose = pose;
  s.points.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double az = rng.uniform(-kPi, kPi);
    const double r = rng.uniform(2.0, 30.0);
    Point3 p;
    p.x = r * std::cos(az);
    p.y = r * std::sin(az);
    p.z = rng.uniform(-0.5, 1.5);
    p.remission = rng.uniform();
    s.points.push_back(p);
  }
  return s;
}

template <class Fn>
double median_ms(Fn&& fn, int runs) {
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

}  // namespace detail

/// Time the projection kernels at each point count, plus one full network
/// forward pass on a sweep history of the largest configured size. Every
/// entry is the median of `runs` timed executions. The forward pass uses
/// `net_config` when given, the default model otherwise.
inline std::vector<BenchRow> run_benchmarks(const std::vector<std::size_t>& point_counts,
                                            int runs = 21, std::uint64_t seed = 1,
                                            const ModelConfig* net_config = nullptr) {
  MVF_CHECK_ARG(runs >= 20, "benchmark medians need at least 20 runs");
  MVF_CHECK(!point_counts.empty(), Errc::empty_input, "no point counts to benchmark");

  const RVGridSpec rv_spec;
  const BEVGridSpec bev_spec;
  const Pose origin = Pose::identity(0);
  const Pose moved = Pose::from_xy_yaw(0.6, -0.3, 0.02, 200000);
  NoGrad guard;
  const nn::RunCtx<float> ctx{};

  std::vector<BenchRow> rows;
  Rng mlp_rng(seed);
  nn::PointMlp<float> mlp(2 + 8, 8, mlp_rng);

  for (std::size_t count : point_counts) {
    const Sweep sweep = detail::bench_sweep(count, seed, origin);
    const TensorT<float> feats = per_point_features<float>(sweep, origin);

    rows.push_back({"rasterize_rv", count,
                    detail::median_ms([&] { rasterize_rv(sweep, origin, rv_spec, feats); }, runs),
                    runs});

    const RVImageT<float> img = [&] {
      TensorT<float> refined =
          TensorT<float>::full({8, rv_spec.rows, rv_spec.cols}, 0.25f);
      RVImageT<float> base = rasterize_rv(sweep, origin, rv_spec, feats);
      return base.with_features(std::move(refined));
    }();
    rows.push_back({"warp_rv_to_rv", count,
                    detail::median_ms([&] { warp_rv_to_rv(img, sweep, moved); }, runs), runs});
    rows.push_back(
        {"warp_rv_to_bev", count,
         detail::median_ms([&] { warp_rv_to_bev(img, sweep, origin, bev_spec, mlp, ctx); }, runs),
         runs});
  }

  // Full network forward on a history built at the largest point count.
  {
    const std::size_t count = *std::max_element(point_counts.begin(), point_counts.end());
    const ModelConfig mc = net_config != nullptr ? *net_config : ModelConfig{};
    Rng rng(seed);
    Model<float> model(mc, rng);
    LabeledFrame frame;
    frame.k_history = mc.fusion.k_history;
    frame.t_horizon = mc.traj.t_horizon;
    for (int k = 0; k <= mc.fusion.k_history; ++k) {
      const Pose pose = Pose::from_xy_yaw(0.4 * k, 0.1 * k, 0.01 * k,
                                          static_cast<std::int64_t>(k) * 200000);
      frame.sweeps.push_back(detail::bench_sweep(count, seed + static_cast<std::uint64_t>(k),
                                                 pose));
      frame.sweeps.back().index = k - mc.fusion.k_history;
    }
    frame.map.spec = mc.fusion.bev;
    frame.map.drivable.assign(static_cast<std::size_t>(mc.fusion.bev.cell_count()), 1);
    frame.map.markings.assign(static_cast<std::size_t>(mc.fusion.bev.cell_count()), 0);
    rows.push_back({"network_forward", count,
                    detail::median_ms([&] { model.features(frame, ctx); }, runs), runs});
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "kernel,points,median_ms,runs\n";
  for (const BenchRow& r : rows)
    os << r.kernel << ',' << r.points << ',' << r.median_ms << ',' << r.runs << "\n";
}

/// Median time ratio between two point counts for one kernel; used to report
/// the near-linear scaling of the projection path.
inline double bench_scaling(const std::vector<BenchRow>& rows, const std::string& kernel,
                            std::size_t from_points, std::size_t to_points) {
  const BenchRow* from = nullptr;
  const BenchRow* to = nullptr;
  for (const BenchRow& r : rows) {
    if (r.kernel != kernel) continue;
    if (r.points == from_points) from = &r;
    if (r.points == to_points) to = &r;
  }
  MVF_CHECK_ARG(from != nullptr && to != nullptr, "kernel/point-count pair not benchmarked");
  MVF_CHECK(from->median_ms > 0.0, Errc::numeric_failure, "degenerate zero timing");
  return to->median_ms / from->median_ms;
}

}  // namespace mvf
