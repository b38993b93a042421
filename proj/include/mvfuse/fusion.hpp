#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/nn.hpp"
#include "mvfuse/ops.hpp"
#include "mvfuse/projection.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

enum class FusionStrategy { sequential, one_shot };
enum class FusionViews { both, rv_only, bev_only };

inline const char* to_string(FusionStrategy s) {
  return s == FusionStrategy::sequential ? "sequential" : "one_shot";
}
inline const char* to_string(FusionViews v) {
  switch (v) {
    case FusionViews::both: return "both";
    case FusionViews::rv_only: return "rv_only";
    case FusionViews::bev_only: return "bev_only";
  }
  return "?";
}

/// Temporal-fusion wiring. `views` selects which view carries information
/// across time: `rv_only` disables the BEV concatenation chain (a single
/// point-to-cell projection of the final range-view features produces the
/// BEV output) and `bev_only` disables range-view warping (each sweep is
/// rasterized fresh). Per-step networks never share weights.
struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::sequential;
  FusionViews views = FusionViews::both;
  RVGridSpec rv;
  BEVGridSpec bev;
  int k_history = 4;
  int rv_channels = 16;   // per-step range-view feature width
  int bev_channels = 24;  // per-step BEV feature width
  int mlp_channels = 16;  // point-to-cell MLP output width (sequential steps)
  int blocks = 2;         // conv blocks per step network

  void validate() const {
    rv.validate();
    bev.validate();
    MVF_CHECK_ARG(k_history >= 0, "fusion history must be non-negative");
    MVF_CHECK_ARG(rv_channels >= 1 && bev_channels >= 1 && mlp_channels >= 1,
                  "fusion channel counts must be positive");
    MVF_CHECK_ARG(blocks >= 1, "fusion step networks need at least one block");
    MVF_CHECK(strategy == FusionStrategy::sequential || views == FusionViews::both,
              Errc::invalid_argument, "one-shot fusion is defined for views=both only");
  }

  int steps() const { return k_history + 1; }
};

/// Spatio-temporal fusion over an ordered sweep sequence (k = -K .. 0).
/// Returns range-view features carrying the reference raster's geometry
/// metadata and BEV features on the reference-pose grid, regardless of
/// strategy or view selection.
template <class Real>
class TemporalFusion {
 public:
  TemporalFusion(const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int steps = cfg_.steps();
    if (cfg_.strategy == FusionStrategy::sequential) {
      const bool rv_warp = cfg_.views != FusionViews::bev_only;
      const bool bev_chain = cfg_.views != FusionViews::rv_only;
      const int rv_in0 = (rv_warp ? cfg_.rv_channels : 0) + kPointFeatureDim;
      for (int k = 0; k < steps; ++k) {
        step_rv_.emplace_back();
        auto& net = step_rv_.back();
        net.emplace_back(rv_in0, cfg_.rv_channels, 3, 1, 1, rng);
        for (int b = 1; b < cfg_.blocks; ++b)
          net.emplace_back(cfg_.rv_channels, cfg_.rv_channels, 3, 1, 1, rng);
        if (bev_chain) {
          step_mlp_.emplace_back(2 + cfg_.rv_channels, cfg_.mlp_channels, rng);
          step_bev_.emplace_back();
          auto& bnet = step_bev_.back();
          bnet.emplace_back(cfg_.mlp_channels + cfg_.bev_channels, cfg_.bev_channels, 3, 1, 1,
                            rng);
          for (int b = 1; b < cfg_.blocks; ++b)
            bnet.emplace_back(cfg_.bev_channels, cfg_.bev_channels, 3, 1, 1, rng);
        }
      }
      if (!bev_chain) final_mlp_ = nn::PointMlp<Real>(2 + cfg_.rv_channels, cfg_.bev_channels, rng);
    } else {
      // One network per view, depth scaled to the sequential per-step total.
      const int depth = cfg_.blocks * steps;
      const int rv_in = steps * kPointFeatureDim;
      os_rv_.emplace_back(rv_in, cfg_.rv_channels, 3, 1, 1, rng);
      for (int b = 1; b < depth; ++b)
        os_rv_.emplace_back(cfg_.rv_channels, cfg_.rv_channels, 3, 1, 1, rng);
      os_bev_.emplace_back(rv_in, cfg_.bev_channels, 3, 1, 1, rng);
      for (int b = 1; b < depth; ++b)
        os_bev_.emplace_back(cfg_.bev_channels, cfg_.bev_channels, 3, 1, 1, rng);
    }
  }

  const FusionConfig& config() const { return cfg_; }

  std::pair<RVImageT<Real>, BEVImageT<Real>> forward(const std::vector<Sweep>& sweeps,
                                                     const nn::RunCtx<Real>& ctx) {
    MVF_CHECK(!sweeps.empty(), Errc::empty_input, "fusion needs at least one sweep");
    MVF_CHECK_ARG(static_cast<int>(sweeps.size()) == cfg_.steps(),
                  "sweep count does not match the configured history length");
    return cfg_.strategy == FusionStrategy::sequential ? forward_sequential(sweeps, ctx)
                                                       : forward_one_shot(sweeps, ctx);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    for (std::size_t k = 0; k < step_rv_.size(); ++k)
      for (std::size_t b = 0; b < step_rv_[k].size(); ++b)
        step_rv_[k][b].visit(prefix + ".seq_rv" + std::to_string(k) + ".block" + std::to_string(b),
                             v);
    for (std::size_t k = 0; k < step_mlp_.size(); ++k)
      step_mlp_[k].visit(prefix + ".seq_mlp" + std::to_string(k), v);
    for (std::size_t k = 0; k < step_bev_.size(); ++k)
      for (std::size_t b = 0; b < step_bev_[k].size(); ++b)
        step_bev_[k][b].visit(
            prefix + ".seq_bev" + std::to_string(k) + ".block" + std::to_string(b), v);
    if (final_mlp_.has_value()) final_mlp_->visit(prefix + ".final_mlp", v);
    for (std::size_t b = 0; b < os_rv_.size(); ++b)
      os_rv_[b].visit(prefix + ".os_rv.block" + std::to_string(b), v);
    for (std::size_t b = 0; b < os_bev_.size(); ++b)
      os_bev_[b].visit(prefix + ".os_bev.block" + std::to_string(b), v);
  }

  /// Trainable parameter counts split by view: the range-view side covers the
  /// per-step (or one-shot) RV networks; the BEV side covers the projection
  /// MLPs and BEV networks.
  std::pair<std::size_t, std::size_t> param_counts_per_view() {
    std::size_t rv = 0, bev = 0;
    nn::ParamVisitor<Real> v;
    v.on_param = [&](const std::string& name, TensorT<Real>& t) {
      if (name.find(".seq_rv") != std::string::npos || name.find(".os_rv") != std::string::npos) {
        rv += t.numel();
      } else {
        bev += t.numel();
      }
    };
    visit("fusion", v);
    return {rv, bev};
  }

 private:
  std::pair<RVImageT<Real>, BEVImageT<Real>> forward_sequential(const std::vector<Sweep>& sweeps,
                                                                const nn::RunCtx<Real>& ctx) {
    const Pose reference = sweeps.back().pose;
    const bool rv_warp = cfg_.views != FusionViews::bev_only;
    const bool bev_chain = cfg_.views != FusionViews::rv_only;
    const int n_bev = cfg_.bev.cells_per_axis();

    RVImageT<Real> prev_img;
    const Sweep* prev_sweep = nullptr;
    TensorT<Real> prev_bev;
    std::vector<std::uint8_t> occupancy(static_cast<std::size_t>(n_bev) * n_bev, 0);

    RVImageT<Real> cur_img;
    BEVImageT<Real> bev_out;
    for (std::size_t k = 0; k < sweeps.size(); ++k) {
      const Sweep& sweep = sweeps[k];
      const TensorT<Real> feats = per_point_features<Real>(sweep, reference);
      RVImageT<Real> raster = rasterize_rv(sweep, sweep.pose, cfg_.rv, feats);

      TensorT<Real> x;
      if (rv_warp) {
        TensorT<Real> prev_feats;
        if (prev_sweep != nullptr) {
          prev_feats = warp_rv_to_rv(prev_img, *prev_sweep, sweep.pose).features;
        } else {
          prev_feats = TensorT<Real>::zeros({cfg_.rv_channels, cfg_.rv.rows, cfg_.rv.cols});
        }
        x = concat_channels(prev_feats, raster.features);
      } else {
        x = raster.features;
      }
      for (auto& block : step_rv_[k]) x = block.forward(x, ctx);
      cur_img = raster.with_features(x);

      if (bev_chain) {
        BEVImageT<Real> proj =
            warp_rv_to_bev(cur_img, sweep, reference, cfg_.bev, step_mlp_[k], ctx);
        for (std::size_t i = 0; i < occupancy.size(); ++i)
          occupancy[i] = occupancy[i] | proj.occupancy[i];
        TensorT<Real> carry = prev_bev.defined()
                                  ? prev_bev
                                  : TensorT<Real>::zeros({cfg_.bev_channels, n_bev, n_bev});
        TensorT<Real> z = concat_channels(proj.features, carry);
        for (auto& block : step_bev_[k]) z = block.forward(z, ctx);
        prev_bev = z;
      }
      prev_img = cur_img;
      prev_sweep = &sweep;
    }

    if (bev_chain) {
      bev_out.spec = cfg_.bev;
      bev_out.features = prev_bev;
      bev_out.occupancy = std::move(occupancy);
    } else {
      bev_out = warp_rv_to_bev(cur_img, sweeps.back(), reference, cfg_.bev, *final_mlp_, ctx);
    }
    return {std::move(cur_img), std::move(bev_out)};
  }

  std::pair<RVImageT<Real>, BEVImageT<Real>> forward_one_shot(const std::vector<Sweep>& sweeps,
                                                              const nn::RunCtx<Real>& ctx) {
    const Pose reference = sweeps.back().pose;
    const int n_bev = cfg_.bev.cells_per_axis();

    std::vector<TensorT<Real>> rv_groups, bev_groups;
    RVImageT<Real> ref_raster;
    std::vector<std::uint8_t> occupancy(static_cast<std::size_t>(n_bev) * n_bev, 0);
    for (std::size_t k = 0; k < sweeps.size(); ++k) {
      const Sweep& sweep = sweeps[k];
      const TensorT<Real> feats = per_point_features<Real>(sweep, reference);
      RVImageT<Real> raster = rasterize_rv(sweep, reference, cfg_.rv, feats);
      BEVImageT<Real> scattered = scatter_bev_mean(feats, sweep, reference, cfg_.bev);
      for (std::size_t i = 0; i < occupancy.size(); ++i)
        occupancy[i] = occupancy[i] | scattered.occupancy[i];
      rv_groups.push_back(raster.features);
      bev_groups.push_back(scattered.features);
      if (k + 1 == sweeps.size()) ref_raster = std::move(raster);
    }

    TensorT<Real> x = concat_channels(rv_groups);
    for (auto& block : os_rv_) x = block.forward(x, ctx);
    TensorT<Real> z = concat_channels(bev_groups);
    for (auto& block : os_bev_) z = block.forward(z, ctx);

    BEVImageT<Real> bev_out;
    bev_out.spec = cfg_.bev;
    bev_out.features = z;
    bev_out.occupancy = std::move(occupancy);
    return {ref_raster.with_features(x), std::move(bev_out)};
  }

  FusionConfig cfg_;
  std::vector<std::vector<nn::ConvBlock<Real>>> step_rv_;
  std::vector<nn::PointMlp<Real>> step_mlp_;
  std::vector<std::vector<nn::ConvBlock<Real>>> step_bev_;
  std::optional<nn::PointMlp<Real>> final_mlp_;
  std::vector<nn::ConvBlock<Real>> os_rv_;
  std::vector<nn::ConvBlock<Real>> os_bev_;
};

/// Parameter-budget comparison between two fusion variants.
struct ParamMatchReport {
  std::size_t rv_a = 0, bev_a = 0, rv_b = 0, bev_b = 0;

  std::size_t total_a() const { return rv_a + bev_a; }
  std::size_t total_b() const { return rv_b + bev_b; }
  double relative_gap() const {
    const double a = static_cast<double>(total_a());
    const double b = static_cast<double>(total_b());
    if (a == 0.0 && b == 0.0) return 0.0;
    return std::abs(a - b) / std::max(a, b);
  }
  bool within(double frac) const { return relative_gap() <= frac; }
};

template <class Real>
ParamMatchReport param_count_match(TemporalFusion<Real>& a, TemporalFusion<Real>& b) {
  ParamMatchReport r;
  const auto ca = a.param_counts_per_view();
  const auto cb = b.param_counts_per_view();
  r.rv_a = ca.first;
  r.bev_a = ca.second;
  r.rv_b = cb.first;
  r.bev_b = cb.second;
  return r;
}

}  // namespace mvf
