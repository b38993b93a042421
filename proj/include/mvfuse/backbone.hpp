#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/nn.hpp"
#include "mvfuse/ops.hpp"
#include "mvfuse/projection.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

enum class BackboneViews { both, rv_only, bev_only };

inline const char* to_string(BackboneViews v) {
  switch (v) {
    case BackboneViews::both: return "both";
    case BackboneViews::rv_only: return "rv_only";
    case BackboneViews::bev_only: return "bev_only";
  }
  return "?";
}

/// Multi-view backbone wiring: range-view U-Net, one point-to-cell projection
/// of its output, a map feature net, then a BEV U-Net that halves the grid.
/// `views` selects the branches (the third ablation axis): `rv_only` replaces
/// the BEV U-Net with two convolutions after the projection (the first one
/// strided to reach the output grid); `bev_only` drops the range-view branch.
struct BackboneConfig {
  BackboneViews views = BackboneViews::both;
  int rv_in = 16;          // fused range-view channels
  int bev_in = 24;         // fused BEV channels
  int rv_out = 32;         // range-view U-Net output channels
  int proj_channels = 24;  // point-to-cell projection output channels
  int map_channels = 16;
  int out_channels = 48;
  int stages = 3;
  int rv_base = 32;   // range-view U-Net stage-0 width
  int bev_base = 32;  // BEV U-Net stage-0 width

  void validate() const {
    MVF_CHECK_ARG(rv_in >= 1 && bev_in >= 1 && rv_out >= 1 && proj_channels >= 1 &&
                      map_channels >= 1 && out_channels >= 1,
                  "backbone channel counts must be positive");
    MVF_CHECK_ARG(stages >= 2, "backbone U-Nets need at least two stages");
    MVF_CHECK_ARG(rv_base >= 1 && bev_base >= 1, "backbone U-Net widths must be positive");
  }
};

template <class Real>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    map_net_.emplace_back(2, cfg_.map_channels, 3, 1, 1, rng);
    map_net_.emplace_back(cfg_.map_channels, cfg_.map_channels, 3, 1, 1, rng);

    if (cfg_.views != BackboneViews::bev_only) {
      rv_unet_.emplace(cfg_.rv_in, nn::UNetConfig::range_view(cfg_.stages, cfg_.rv_base,
                                                              cfg_.rv_out),
                       rng);
      proj_mlp_.emplace(2 + cfg_.rv_out, cfg_.proj_channels, rng);
    }
    if (cfg_.views == BackboneViews::rv_only) {
      tail_.emplace_back(cfg_.proj_channels + cfg_.map_channels, cfg_.out_channels, 3, 2, 2, rng);
      tail_.emplace_back(cfg_.out_channels, cfg_.out_channels, 3, 1, 1, rng);
    } else {
      int in = cfg_.bev_in + cfg_.map_channels;
      if (cfg_.views == BackboneViews::both) in += cfg_.proj_channels;
      bev_unet_.emplace(in, nn::UNetConfig::birds_eye(cfg_.stages, cfg_.bev_base,
                                                      cfg_.out_channels),
                        rng);
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Learned map features on the input BEV grid.
  TensorT<Real> map_features(const MapRaster& map, const nn::RunCtx<Real>& ctx) {
    map.validate();
    const int n = map.spec.cells_per_axis();
    std::vector<Real> data(2 * static_cast<std::size_t>(n) * n);
    for (std::size_t i = 0; i < map.drivable.size(); ++i) {
      data[i] = static_cast<Real>(map.drivable[i]);
      data[map.drivable.size() + i] = static_cast<Real>(map.markings[i]);
    }
    TensorT<Real> x = TensorT<Real>::from_data({2, n, n}, std::move(data));
    for (auto& block : map_net_) x = block.forward(x, ctx);
    return x;
  }

  /// Per-cell output features at half the input BEV resolution.
  TensorT<Real> forward(const RVImageT<Real>& rv, const BEVImageT<Real>& bev,
                        const MapRaster& map, const Sweep& reference_sweep,
                        const nn::RunCtx<Real>& ctx) {
    MVF_CHECK_ARG(bev.features.dim(0) == cfg_.bev_in, "fused BEV channel mismatch");
    TensorT<Real> map_feats = map_features(map, ctx);

    TensorT<Real> projected;
    if (cfg_.views != BackboneViews::bev_only) {
      MVF_CHECK_ARG(rv.features.dim(0) == cfg_.rv_in, "fused range-view channel mismatch");
      TensorT<Real> rv_feats = rv_unet_->forward(rv.features, ctx);
      const RVImageT<Real> refined = rv.with_features(std::move(rv_feats));
      projected = warp_rv_to_bev(refined, reference_sweep, rv.pose, bev.spec, *proj_mlp_, ctx)
                      .features;
    }

    if (cfg_.views == BackboneViews::rv_only) {
      TensorT<Real> z = concat_channels(projected, map_feats);
      for (auto& block : tail_) z = block.forward(z, ctx);
      return z;
    }
    std::vector<TensorT<Real>> parts;
    parts.push_back(bev.features);
    if (cfg_.views == BackboneViews::both) parts.push_back(projected);
    parts.push_back(map_feats);
    return bev_unet_->forward(concat_channels(parts), ctx);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    for (std::size_t b = 0; b < map_net_.size(); ++b)
      map_net_[b].visit(prefix + ".map.block" + std::to_string(b), v);
    if (rv_unet_.has_value()) rv_unet_->visit(prefix + ".rv_unet", v);
    if (proj_mlp_.has_value()) proj_mlp_->visit(prefix + ".proj_mlp", v);
    if (bev_unet_.has_value()) bev_unet_->visit(prefix + ".bev_unet", v);
    for (std::size_t b = 0; b < tail_.size(); ++b)
      tail_[b].visit(prefix + ".tail.block" + std::to_string(b), v);
  }

 private:
  BackboneConfig cfg_;
  std::vector<nn::ConvBlock<Real>> map_net_;
  std::optional<nn::UNet<Real>> rv_unet_;
  std::optional<nn::PointMlp<Real>> proj_mlp_;
  std::optional<nn::UNet<Real>> bev_unet_;
  std::vector<nn::ConvBlock<Real>> tail_;
};

}  // namespace mvf
