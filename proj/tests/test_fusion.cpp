#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvfuse/fusion.hpp"
#include "mvfuse/projection.hpp"

using namespace mvf;

namespace {

FusionConfig tiny_config(FusionStrategy strategy, FusionViews views, int k_history) {
  FusionConfig cfg;
  cfg.strategy = strategy;
  cfg.views = views;
  cfg.rv.rows = 8;
  cfg.rv.cols = 32;
  cfg.bev.length = 16.0;
  cfg.bev.resolution = 1.0;
  cfg.k_history = k_history;
  cfg.rv_channels = 8;
  cfg.bev_channels = 10;
  cfg.mlp_channels = 6;
  cfg.blocks = 2;
  return cfg;
}

/// Random returns with planar range in [2, 6] and |z| <= 0.4 so every point
/// stays inside the default +/-15 degree elevation band and a 16 m BEV grid.
Sweep random_sweep(Rng& rng, const Pose& pose, int n_points, int index) {
  Sweep s;
  s.pose = pose;
  s.index = index;
  for (int i = 0; i < n_points; ++i) {
    const double r = 2.0 + 4.0 * rng.uniform();
    const double az = (2.0 * rng.uniform() - 1.0) * kPi;
    Point3 p;
    p.x = r * std::cos(az);
    p.y = r * std::sin(az);
    p.z = 0.8 * rng.uniform() - 0.4;
    p.remission = rng.uniform();
    s.points.push_back(p);
  }
  return s;
}

std::vector<Sweep> random_sequence(std::uint64_t seed, int k_history, int n_points) {
  Rng rng(seed);
  std::vector<Sweep> sweeps;
  const int steps = k_history + 1;
  for (int k = 0; k < steps; ++k) {
    const Pose pose = Pose::from_xy_yaw(0.2 * k, -0.1 * k, 0.03 * k,
                                        static_cast<std::int64_t>(k) * 200000);
    sweeps.push_back(random_sweep(rng, pose, n_points, k - k_history));
  }
  return sweeps;
}

template <class Net>
std::map<std::string, std::vector<double>> snapshot_state(Net& net, const std::string& prefix) {
  std::map<std::string, std::vector<double>> out;
  nn::ParamVisitor<double> v;
  v.on_param = [&](const std::string& name, Tensor& t) { out[name] = t.values(); };
  v.on_buffer = [&](const std::string& name, std::vector<double>& b) { out[name] = b; };
  net.visit(prefix, v);
  return out;
}

template <class Net>
void load_state(Net& net, const std::string& prefix,
                const std::map<std::string, std::vector<double>>& state) {
  nn::ParamVisitor<double> v;
  v.on_param = [&](const std::string& name, Tensor& t) {
    REQUIRE(state.count(name) == 1);
    REQUIRE(state.at(name).size() == t.values().size());
    t.values() = state.at(name);
  };
  v.on_buffer = [&](const std::string& name, std::vector<double>& b) {
    REQUIRE(state.count(name) == 1);
    b = state.at(name);
  };
  net.visit(prefix, v);
}

std::vector<std::uint8_t> occupancy_union(const std::vector<Sweep>& sweeps,
                                          const Pose& reference, const BEVGridSpec& spec) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(spec.cell_count()), 0);
  for (const Sweep& s : sweeps) {
    Tensor feats = per_point_features<double>(s, reference);
    BEVImage got = scatter_bev_mean(feats, s, reference, spec);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] | got.occupancy[i];
  }
  return out;
}

}  // namespace

TEST_CASE("fusion config validation rejects inconsistent settings") {
  FusionConfig cfg = tiny_config(FusionStrategy::one_shot, FusionViews::rv_only, 2);
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config(FusionStrategy::one_shot, FusionViews::bev_only, 2);
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, -1);
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 2);
  cfg.blocks = 0;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config(FusionStrategy::one_shot, FusionViews::both, 2);
  REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("sequential fusion with zero history equals the single-sweep pipeline") {
  const FusionConfig cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 0);
  Rng rng(17);
  TemporalFusion<double> fusion(cfg, rng);
  const auto state = snapshot_state(fusion, "fusion");

  // Rebuild the zero-history pipeline by hand from the same weights:
  // rasterize -> (zero warp slot ++ raw) -> RV blocks -> point-to-cell MLP
  // -> (projection ++ zero carry) -> BEV blocks.
  Rng other(999);
  nn::ConvBlock<double> rv0(cfg.rv_channels + kPointFeatureDim, cfg.rv_channels, 3, 1, 1, other);
  nn::ConvBlock<double> rv1(cfg.rv_channels, cfg.rv_channels, 3, 1, 1, other);
  nn::PointMlp<double> mlp(2 + cfg.rv_channels, cfg.mlp_channels, other);
  nn::ConvBlock<double> bev0(cfg.mlp_channels + cfg.bev_channels, cfg.bev_channels, 3, 1, 1,
                             other);
  nn::ConvBlock<double> bev1(cfg.bev_channels, cfg.bev_channels, 3, 1, 1, other);
  load_state(rv0, "fusion.seq_rv0.block0", state);
  load_state(rv1, "fusion.seq_rv0.block1", state);
  load_state(mlp, "fusion.seq_mlp0", state);
  load_state(bev0, "fusion.seq_bev0.block0", state);
  load_state(bev1, "fusion.seq_bev0.block1", state);

  const std::vector<Sweep> sweeps = random_sequence(4, 0, 160);
  const nn::RunCtx<double> ctx;
  auto [rv_img, bev_img] = fusion.forward(sweeps, ctx);

  const Sweep& sweep = sweeps[0];
  Tensor feats = per_point_features<double>(sweep, sweep.pose);
  RVImage raster = rasterize_rv(sweep, sweep.pose, cfg.rv, feats);
  Tensor x = concat_channels(
      Tensor::zeros({cfg.rv_channels, cfg.rv.rows, cfg.rv.cols}), raster.features);
  x = rv0.forward(x, ctx);
  x = rv1.forward(x, ctx);
  RVImage refined = raster.with_features(x);
  BEVImage proj = warp_rv_to_bev(refined, sweep, sweep.pose, cfg.bev, mlp, ctx);
  const int n = cfg.bev.cells_per_axis();
  Tensor z = concat_channels(proj.features, Tensor::zeros({cfg.bev_channels, n, n}));
  z = bev0.forward(z, ctx);
  z = bev1.forward(z, ctx);

  REQUIRE(rv_img.features.values() == x.values());
  REQUIRE(bev_img.features.values() == z.values());
  REQUIRE(bev_img.occupancy == proj.occupancy);
  REQUIRE(rv_img.point_index == raster.point_index);
}

TEST_CASE("fusion outputs keep shape and grid metadata across all variants") {
  struct Variant {
    FusionStrategy strategy;
    FusionViews views;
  };
  const std::vector<Variant> variants = {
      {FusionStrategy::sequential, FusionViews::both},
      {FusionStrategy::sequential, FusionViews::rv_only},
      {FusionStrategy::sequential, FusionViews::bev_only},
      {FusionStrategy::one_shot, FusionViews::both},
  };
  const std::vector<Sweep> sweeps = random_sequence(11, 2, 120);
  for (const Variant& var : variants) {
    INFO("strategy=" << to_string(var.strategy) << " views=" << to_string(var.views));
    const FusionConfig cfg = tiny_config(var.strategy, var.views, 2);
    Rng rng(5);
    TemporalFusion<double> fusion(cfg, rng);
    auto [rv_img, bev_img] = fusion.forward(sweeps, nn::RunCtx<double>{});

    REQUIRE(rv_img.features.shape() == std::vector<int>{cfg.rv_channels, 8, 32});
    REQUIRE(rv_img.point_index.size() == static_cast<std::size_t>(8 * 32));
    const int n = cfg.bev.cells_per_axis();
    REQUIRE(bev_img.features.shape() == std::vector<int>{cfg.bev_channels, n, n});
    REQUIRE(bev_img.occupancy.size() == static_cast<std::size_t>(n) * n);
    REQUIRE(bev_img.spec.cells_per_axis() == n);

    // The range-view output always carries the reference raster's geometry.
    const Pose& ref = sweeps.back().pose;
    REQUIRE(rv_img.pose.translation().isApprox(ref.translation(), 0.0));
    REQUIRE(rv_img.pose.timestamp_us() == ref.timestamp_us());
  }
}

TEST_CASE("fusion rejects wrong sweep counts") {
  const FusionConfig cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 2);
  Rng rng(3);
  TemporalFusion<double> fusion(cfg, rng);
  const std::vector<Sweep> two = random_sequence(6, 1, 40);

  REQUIRE_THROWS_MATCHES(fusion.forward({}, nn::RunCtx<double>{}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::empty_input; }));
  REQUIRE_THROWS_MATCHES(fusion.forward(two, nn::RunCtx<double>{}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::invalid_argument; }));
}

TEST_CASE("sequential occupancy is the union of per-step projections") {
  const FusionConfig cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 1);
  Rng rng(9);
  TemporalFusion<double> fusion(cfg, rng);

  // Two sweeps with disjoint BEV support: positive-y returns then negative-y.
  std::vector<Sweep> sweeps(2);
  for (int k = 0; k < 2; ++k) {
    sweeps[k].pose = Pose::from_xy_yaw(0.0, 0.0, 0.0, k * 200000);
    sweeps[k].index = k - 1;
    Rng prng(100 + static_cast<std::uint64_t>(k));
    for (int i = 0; i < 80; ++i) {
      Point3 p;
      p.x = 2.0 + 4.0 * prng.uniform();
      p.y = (k == 0 ? 1.0 : -1.0) * (2.0 + 4.0 * prng.uniform());
      p.z = 0.2;
      p.remission = 0.5;
      sweeps[k].points.push_back(p);
    }
  }
  const Pose& ref = sweeps.back().pose;
  const std::vector<std::uint8_t> occ0 = occupancy_union({sweeps[0]}, ref, cfg.bev);
  const std::vector<std::uint8_t> occ1 = occupancy_union({sweeps[1]}, ref, cfg.bev);
  std::size_t overlap = 0;
  for (std::size_t i = 0; i < occ0.size(); ++i) overlap += occ0[i] & occ1[i];
  REQUIRE(overlap == 0);  // supports really are disjoint

  auto [rv_img, bev_img] = fusion.forward(sweeps, nn::RunCtx<double>{});
  REQUIRE(bev_img.occupancy == occupancy_union(sweeps, ref, cfg.bev));

  // One-shot fusion over the same sweeps reports the same union.
  const FusionConfig os_cfg = tiny_config(FusionStrategy::one_shot, FusionViews::both, 1);
  Rng os_rng(9);
  TemporalFusion<double> one_shot(os_cfg, os_rng);
  auto [os_rv, os_bev] = one_shot.forward(sweeps, nn::RunCtx<double>{});
  REQUIRE(os_bev.occupancy == bev_img.occupancy);
}

TEST_CASE("one-shot input width scales with the history length") {
  for (int k_history : {0, 2, 4}) {
    const FusionConfig cfg = tiny_config(FusionStrategy::one_shot, FusionViews::both, k_history);
    Rng rng(21);
    TemporalFusion<double> fusion(cfg, rng);
    int rv_in = -1, bev_in = -1, rv_blocks = 0, bev_blocks = 0;
    nn::ParamVisitor<double> v;
    v.on_param = [&](const std::string& name, Tensor& t) {
      if (name == "fusion.os_rv.block0.conv.weight") rv_in = t.dim(1);
      if (name == "fusion.os_bev.block0.conv.weight") bev_in = t.dim(1);
      if (name.find(".os_rv.") != std::string::npos && name.find(".conv.weight") != std::string::npos)
        ++rv_blocks;
      if (name.find(".os_bev.") != std::string::npos && name.find(".conv.weight") != std::string::npos)
        ++bev_blocks;
    };
    fusion.visit("fusion", v);
    const int steps = k_history + 1;
    REQUIRE(rv_in == steps * kPointFeatureDim);
    REQUIRE(bev_in == steps * kPointFeatureDim);
    // Depth matches the sequential per-step total so budgets stay comparable.
    REQUIRE(rv_blocks == cfg.blocks * steps);
    REQUIRE(bev_blocks == cfg.blocks * steps);
  }
}

TEST_CASE("one-shot range-view output carries the reference raster") {
  const FusionConfig cfg = tiny_config(FusionStrategy::one_shot, FusionViews::both, 1);
  Rng rng(13);
  TemporalFusion<double> fusion(cfg, rng);
  const std::vector<Sweep> sweeps = random_sequence(14, 1, 100);
  auto [rv_img, bev_img] = fusion.forward(sweeps, nn::RunCtx<double>{});

  const Pose& ref = sweeps.back().pose;
  Tensor feats = per_point_features<double>(sweeps.back(), ref);
  RVImage expect = rasterize_rv(sweeps.back(), ref, cfg.rv, feats);
  REQUIRE(rv_img.point_index == expect.point_index);
  REQUIRE(rv_img.depth == expect.depth);
}

TEST_CASE("gradients reach every fusion parameter") {
  struct Variant {
    FusionStrategy strategy;
    FusionViews views;
  };
  const std::vector<Variant> variants = {
      {FusionStrategy::sequential, FusionViews::both},
      {FusionStrategy::sequential, FusionViews::rv_only},
      {FusionStrategy::sequential, FusionViews::bev_only},
      {FusionStrategy::one_shot, FusionViews::both},
  };
  const std::vector<Sweep> sweeps = random_sequence(31, 1, 150);
  for (const Variant& var : variants) {
    INFO("strategy=" << to_string(var.strategy) << " views=" << to_string(var.views));
    const FusionConfig cfg = tiny_config(var.strategy, var.views, 1);
    Rng rng(7);
    TemporalFusion<double> fusion(cfg, rng);
    nn::RunCtx<double> ctx;
    ctx.training = true;
    auto [rv_img, bev_img] = fusion.forward(sweeps, ctx);
    Tensor loss = add(sum_all(rv_img.features), sum_all(bev_img.features));
    backward(loss);

    nn::ParamVisitor<double> v;
    v.on_param = [&](const std::string& name, Tensor& t) {
      INFO("param " << name);
      REQUIRE(t.grads().size() == t.numel());
      double norm = 0.0;
      for (double g : t.grads()) norm += std::abs(g);
      REQUIRE(norm > 0.0);
    };
    fusion.visit("fusion", v);
  }
}

TEST_CASE("parameter budgets split by view and match for identical configurations") {
  const FusionConfig cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 2);
  Rng ra(1), rb(2);
  TemporalFusion<double> a(cfg, ra), b(cfg, rb);
  const ParamMatchReport same = param_count_match(a, b);
  REQUIRE(same.rv_a == same.rv_b);
  REQUIRE(same.bev_a == same.bev_b);
  REQUIRE(same.relative_gap() == 0.0);
  REQUIRE(same.within(0.0));

  // rv_only keeps exactly one point-to-cell MLP on the BEV side.
  const FusionConfig rv_cfg = tiny_config(FusionStrategy::sequential, FusionViews::rv_only, 2);
  Rng rc(3);
  TemporalFusion<double> rv_only(rv_cfg, rc);
  const auto [rv_params, bev_params] = rv_only.param_counts_per_view();
  const std::size_t mlp_params =
      static_cast<std::size_t>((2 + rv_cfg.rv_channels) * rv_cfg.bev_channels)  // fc weight
      + rv_cfg.bev_channels                                                     // fc bias
      + 2 * static_cast<std::size_t>(rv_cfg.bev_channels);                      // bn gamma, beta
  REQUIRE(bev_params == mlp_params);
  REQUIRE(rv_params > 0);

  // bev_only step networks read only the raw per-point channels.
  const FusionConfig bev_cfg = tiny_config(FusionStrategy::sequential, FusionViews::bev_only, 0);
  Rng rd(4);
  TemporalFusion<double> bev_only(bev_cfg, rd);
  const auto [bev_rv_params, bev_bev_params] = bev_only.param_counts_per_view();
  const int c = bev_cfg.rv_channels;
  const std::size_t first_block = static_cast<std::size_t>(c) * kPointFeatureDim * 9 + 2 * c;
  const std::size_t second_block = static_cast<std::size_t>(c) * c * 9 + 2 * c;
  REQUIRE(bev_rv_params == first_block + second_block);
  REQUIRE(bev_bev_params > 0);
}

TEST_CASE("fusion forward is deterministic for a fixed seed") {
  const FusionConfig cfg = tiny_config(FusionStrategy::sequential, FusionViews::both, 1);
  Rng ra(42), rb(42);
  TemporalFusion<double> a(cfg, ra), b(cfg, rb);
  const std::vector<Sweep> sweeps = random_sequence(8, 1, 90);
  auto [rv_a, bev_a] = a.forward(sweeps, nn::RunCtx<double>{});
  auto [rv_b, bev_b] = b.forward(sweeps, nn::RunCtx<double>{});
  REQUIRE(rv_a.features.values() == rv_b.features.values());
  REQUIRE(bev_a.features.values() == bev_b.features.values());
  REQUIRE(bev_a.occupancy == bev_b.occupancy);
}
