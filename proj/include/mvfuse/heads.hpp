#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "mvfuse/box.hpp"
#include "mvfuse/grid.hpp"
#include "mvfuse/nn.hpp"
#include "mvfuse/ops.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

/// Cell-relative box parameterization: center offsets from the cell center,
/// orientation as (cos, sin), and log sizes so decoded sizes stay positive.
inline constexpr int kBoxParamDim = 6;

inline std::array<double, kBoxParamDim> encode_box(const OrientedBox& box, double cell_x,
                                                   double cell_y) {
  MVF_CHECK(box.length > 0.0 && box.width > 0.0, Errc::degenerate_input,
            "encode_box requires positive sizes");
  return {box.cx - cell_x,     box.cy - cell_y,     std::cos(box.yaw),
          std::sin(box.yaw),   std::log(box.length), std::log(box.width)};
}

inline OrientedBox decode_box(const std::array<double, kBoxParamDim>& p, double cell_x,
                              double cell_y) {
  OrientedBox b;
  b.cx = cell_x + p[0];
  b.cy = cell_y + p[1];
  b.yaw = std::atan2(p[3], p[2]);
  b.length = std::exp(p[4]);
  b.width = std::exp(p[5]);
  return b;
}

/// Ground-truth assignment on the head grid: the positive cell for an actor
/// is exactly the cell containing its center (no splatting). When two actors
/// of the same class land in one cell, the lower actor index keeps it.
struct TargetAssignment {
  int classes = 0;
  int cells = 0;                  // per class
  std::vector<double> cls_target; // [classes * cells], 0/1
  std::vector<int> actor_of;      // [classes * cells], actor index or -1
  std::vector<int> positives;     // flat class * cells + cell, ascending
  int dropped_collisions = 0;
};

inline TargetAssignment assign_targets(const std::vector<LabeledActor>& actors,
                                       const BEVGridSpec& grid) {
  grid.validate();
  TargetAssignment out;
  out.classes = kNumClasses;
  out.cells = static_cast<int>(grid.cell_count());
  out.cls_target.assign(static_cast<std::size_t>(out.classes) * out.cells, 0.0);
  out.actor_of.assign(static_cast<std::size_t>(out.classes) * out.cells, -1);
  for (std::size_t a = 0; a < actors.size(); ++a) {
    const LabeledActor& actor = actors[a];
    if (!actor.in_roi) continue;
    const auto cell = bev_cell_of(actor.box.cx, actor.box.cy, grid);
    if (!cell.has_value()) continue;
    const std::size_t flat = static_cast<std::size_t>(static_cast<int>(actor.cls)) * out.cells +
                             bev_flat_index(*cell, grid);
    if (out.actor_of[flat] >= 0) {
      ++out.dropped_collisions;
      continue;
    }
    out.actor_of[flat] = static_cast<int>(a);
    out.cls_target[flat] = 1.0;
    out.positives.push_back(static_cast<int>(flat));
  }
  std::sort(out.positives.begin(), out.positives.end());
  return out;
}

// ---------------------------------------------------------------------------
// Dense detection head
// ---------------------------------------------------------------------------

struct DetectionHeadConfig {
  int in_channels = 48;
  double prior = 0.01;  // initial per-cell positive probability

  void validate() const {
    MVF_CHECK_ARG(in_channels >= 1, "detection head needs input channels");
    MVF_CHECK_ARG(prior > 0.0 && prior < 1.0, "detection prior must lie in (0, 1)");
  }
};

/// Per-cell center classification and box regression: a 3x3 trunk block then
/// two 1x1 convolutions. The classification bias starts at -ln((1-p)/p) so
/// the initial focal loss is not dominated by the negative cells.
template <class Real>
class DetectionHead {
 public:
  struct Output {
    TensorT<Real> logits;  // [classes, N, N]
    TensorT<Real> boxes;   // [classes * kBoxParamDim, N, N]
  };

  DetectionHead(const DetectionHeadConfig& cfg, Rng& rng)
      : cfg_(cfg),
        trunk_(cfg.in_channels, cfg.in_channels, 3, 1, 1, rng),
        cls_(cfg.in_channels, kNumClasses, 1, 1, 1, 1, 0, 0, rng, true),
        box_(cfg.in_channels, kNumClasses * kBoxParamDim, 1, 1, 1, 1, 0, 0, rng, true) {
    cfg_.validate();
    const Real b = static_cast<Real>(-std::log((1.0 - cfg.prior) / cfg.prior));
    std::fill(cls_.bias.values().begin(), cls_.bias.values().end(), b);
  }

  Output forward(const TensorT<Real>& cells, const nn::RunCtx<Real>& ctx) {
    MVF_CHECK_ARG(cells.shape().size() == 3 && cells.dim(0) == cfg_.in_channels,
                  "detection head channel mismatch");
    TensorT<Real> x = trunk_.forward(cells, ctx);
    return {cls_.forward(x), box_.forward(x)};
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    trunk_.visit(prefix + ".trunk", v);
    cls_.visit(prefix + ".cls", v);
    box_.visit(prefix + ".box", v);
  }

 private:
  DetectionHeadConfig cfg_;
  nn::ConvBlock<Real> trunk_;
  nn::Conv2d<Real> cls_;
  nn::Conv2d<Real> box_;
};

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
};

struct Detection {
  ActorClass cls = ActorClass::vehicle;
  double score = 0.0;
  OrientedBox box;
  std::vector<Waypoint> trajectory;  // T waypoints, possibly empty pre-attach
  int cell = -1;                     // flat cell on the head grid
};

/// Thresholded decode of the dense head output, ordered by class then cell.
template <class Real>
std::vector<Detection> decode_detections(const TensorT<Real>& logits, const TensorT<Real>& boxes,
                                         const BEVGridSpec& grid, double score_threshold) {
  const int n = grid.cells_per_axis();
  MVF_CHECK_ARG(logits.shape() == std::vector<int>({kNumClasses, n, n}),
                "detection logits do not match the head grid");
  MVF_CHECK_ARG(boxes.shape() == std::vector<int>({kNumClasses * kBoxParamDim, n, n}),
                "box parameters do not match the head grid");
  const auto& zv = logits.values();
  const auto& bv = boxes.values();
  const std::size_t plane = static_cast<std::size_t>(n) * n;

  std::vector<Detection> out;
  for (int c = 0; c < kNumClasses; ++c) {
    for (std::size_t cell = 0; cell < plane; ++cell) {
      const double z = static_cast<double>(zv[static_cast<std::size_t>(c) * plane + cell]);
      const double score = 1.0 / (1.0 + std::exp(-z));
      if (score < score_threshold) continue;
      const BEVCell bc{static_cast<int>(cell) % n, static_cast<int>(cell) / n};
      double cx = 0.0, cy = 0.0;
      bev_cell_center(bc, grid, cx, cy);
      std::array<double, kBoxParamDim> p;
      for (int k = 0; k < kBoxParamDim; ++k) {
        p[static_cast<std::size_t>(k)] = static_cast<double>(
            bv[(static_cast<std::size_t>(c) * kBoxParamDim + k) * plane + cell]);
      }
      Detection d;
      d.cls = static_cast<ActorClass>(c);
      d.score = score;
      d.box = decode_box(p, cx, cy);
      d.cell = static_cast<int>(cell);
      out.push_back(std::move(d));
    }
  }
  return out;
}

/// Greedy per-class NMS: descending score (ties prefer the earlier input
/// index), suppress overlaps with rotated IoU >= threshold. Output keeps the
/// class-major, score-descending order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> out;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (static_cast<int>(dets[i].cls) == c) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
      return a < b;
    });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
      bool suppressed = false;
      for (std::size_t k : kept) {
        if (rotated_iou(dets[i].box, dets[k].box) >= iou_threshold) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) {
        kept.push_back(i);
        out.push_back(dets[i]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rotated ROI extraction
// ---------------------------------------------------------------------------

/// Sample a side_m x side_m patch of the cell feature map, centered at the
/// box center and rotated to its yaw, with out_cells samples per axis.
/// Patch columns run along the heading, rows across it. Bilinear sampling
/// reads zeros outside the grid and is differentiable in the features.
template <class Real>
TensorT<Real> rroi_extract(const TensorT<Real>& features, const BEVGridSpec& grid,
                           const OrientedBox& box, double side_m, int out_cells) {
  const int n = grid.cells_per_axis();
  MVF_CHECK_ARG(features.shape().size() == 3 && features.dim(1) == n && features.dim(2) == n,
                "rroi_extract features must be [C, N, N] on the given grid");
  MVF_CHECK(box.length > 0.0 && box.width > 0.0, Errc::degenerate_input,
            "rroi_extract requires a box with positive sizes");
  MVF_CHECK_ARG(side_m > 0.0 && out_cells >= 1, "rroi_extract needs a positive patch");

  const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
  const double half = grid.length / 2.0;
  std::vector<double> rows, cols;
  rows.reserve(static_cast<std::size_t>(out_cells) * out_cells);
  cols.reserve(rows.capacity());
  for (int oy = 0; oy < out_cells; ++oy) {
    const double v = ((oy + 0.5) / out_cells - 0.5) * side_m;  // across heading
    for (int ox = 0; ox < out_cells; ++ox) {
      const double u = ((ox + 0.5) / out_cells - 0.5) * side_m;  // along heading
      const double x = box.cx + cy * u - sy * v;
      const double y = box.cy + sy * u + cy * v;
      cols.push_back((x + half) / grid.resolution - 0.5);
      rows.push_back((y + half) / grid.resolution - 0.5);
    }
  }
  TensorT<Real> flat = bilinear_sample(features, std::move(rows), std::move(cols));
  return reshape(flat, {features.dim(0), out_cells, out_cells});
}

// ---------------------------------------------------------------------------
// Trajectory heads
// ---------------------------------------------------------------------------

struct TrajectoryHeadConfig {
  int t_horizon = 15;
  int hidden = 64;
  double rroi_side = 16.0;  // meters
  int rroi_cells = 16;
  // Raw-output shaping (see detail::shape_trajectory): meters of waypoint
  // step per raw unit, log-scale units per raw unit, and the log-scale an
  // all-zero network starts from (calibrated to the label scale).
  double mu_gain = 2.0;
  double sigma_gain = 3.0;
  double log_b_init = std::log(0.05);

  void validate() const {
    MVF_CHECK_ARG(t_horizon >= 1, "trajectory horizon must be positive");
    MVF_CHECK_ARG(hidden >= 1, "trajectory hidden width must be positive");
    MVF_CHECK_ARG(rroi_side > 0.0 && rroi_cells >= 4 && rroi_cells % 4 == 0,
                  "rroi patch must be positive with size divisible by 4");
    MVF_CHECK_ARG(mu_gain > 0.0 && sigma_gain > 0.0 && std::isfinite(log_b_init),
                  "trajectory output gains must be positive and finite");
  }

  int out_dim() const { return t_horizon * 4; }
};

namespace detail {

/// Shape a raw [T*4, M] head output into the decoded trajectory layout.
/// Position rows hold per-step deltas that accumulate across the horizon, so
/// the network regresses step displacements (bounded by speed) rather than
/// absolute offsets that grow with t. Scale rows map through an affine whose
/// zero point sits at `log_b_init`, so an untrained head already predicts a
/// distribution at the label scale instead of sigma = 1.
template <class Real>
TensorT<Real> shape_trajectory(const TensorT<Real>& z, const TrajectoryHeadConfig& cfg) {
  MVF_CHECK_ARG(z.shape().size() == 2 && z.dim(0) == cfg.out_dim(),
                "trajectory raw output must be [T*4, M]");
  std::vector<TensorT<Real>> parts;
  parts.reserve(static_cast<std::size_t>(2 * cfg.t_horizon));
  TensorT<Real> mu;
  for (int t = 0; t < cfg.t_horizon; ++t) {
    TensorT<Real> step = mul_scalar(slice_channels(z, 4 * t, 4 * t + 2),
                                    static_cast<Real>(cfg.mu_gain));
    mu = mu.defined() ? add(mu, step) : step;
    TensorT<Real> scale = add_scalar(mul_scalar(slice_channels(z, 4 * t + 2, 4 * t + 4),
                                                static_cast<Real>(cfg.sigma_gain)),
                                     static_cast<Real>(cfg.log_b_init));
    parts.push_back(mu);
    parts.push_back(scale);
  }
  return concat_channels(parts);
}

}  // namespace detail

/// Raw trajectory output layout per actor column: t-major blocks of
/// (dx, dy, log sigma_x, log sigma_y).
///
/// Vehicle head: the rotated-ROI patch is reduced by two strided blocks,
/// flattened, and mapped to T x 4 values in the actor-aligned frame. The
/// final layer starts at zero so an untrained head predicts "stay at the
/// detection center" at the calibrated label scale.
template <class Real>
class VehicleTrajectoryHead {
 public:
  VehicleTrajectoryHead(int in_channels, const TrajectoryHeadConfig& cfg, Rng& rng)
      : cfg_(cfg),
        reduce1_(in_channels, cfg.hidden, 3, 2, 2, rng),
        reduce2_(cfg.hidden, cfg.hidden, 3, 2, 2, rng),
        fc1_(cfg.hidden * (cfg.rroi_cells / 4) * (cfg.rroi_cells / 4), cfg.hidden, rng),
        fc2_(cfg.hidden, cfg.out_dim(), rng) {
    cfg_.validate();
    fc2_.zero_init();
  }

  /// patch is [C, rroi_cells, rroi_cells]; returns a [T*4, 1] column.
  TensorT<Real> forward(const TensorT<Real>& patch, const nn::RunCtx<Real>& ctx) {
    MVF_CHECK_ARG(patch.shape().size() == 3 && patch.dim(1) == cfg_.rroi_cells &&
                      patch.dim(2) == cfg_.rroi_cells,
                  "vehicle trajectory head patch size mismatch");
    TensorT<Real> x = reduce1_.forward(patch, ctx);
    x = reduce2_.forward(x, ctx);
    x = reshape(x, {static_cast<int>(x.numel()), 1});
    x = relu(fc1_.forward(x));
    return fc2_.forward(x);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    reduce1_.visit(prefix + ".reduce1", v);
    reduce2_.visit(prefix + ".reduce2", v);
    fc1_.visit(prefix + ".fc1", v);
    fc2_.visit(prefix + ".fc2", v);
  }

  const TrajectoryHeadConfig& config() const { return cfg_; }

 private:
  TrajectoryHeadConfig cfg_;
  nn::ConvBlock<Real> reduce1_;
  nn::ConvBlock<Real> reduce2_;
  nn::LinearLayer<Real> fc1_;
  nn::LinearLayer<Real> fc2_;
};

/// Small-class head: center-cell feature columns through a point MLP, then a
/// zero-initialized linear layer. Offsets are in the reference frame.
template <class Real>
class SmallTrajectoryHead {
 public:
  SmallTrajectoryHead(int in_channels, const TrajectoryHeadConfig& cfg, Rng& rng)
      : cfg_(cfg), mlp_(in_channels, cfg.hidden, rng), fc_(cfg.hidden, cfg.out_dim(), rng) {
    cfg_.validate();
    fc_.zero_init();
  }

  /// cell_features is [C, M] (one column per actor); returns [T*4, M].
  TensorT<Real> forward(const TensorT<Real>& cell_features, const nn::RunCtx<Real>& ctx) {
    MVF_CHECK_ARG(cell_features.shape().size() == 2, "small trajectory head expects [C, M]");
    return fc_.forward(mlp_.forward(cell_features, ctx));
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    mlp_.visit(prefix + ".mlp", v);
    fc_.visit(prefix + ".fc", v);
  }

  const TrajectoryHeadConfig& config() const { return cfg_; }

 private:
  TrajectoryHeadConfig cfg_;
  nn::PointMlp<Real> mlp_;
  nn::LinearLayer<Real> fc_;
};

/// Decode one raw trajectory column. Vehicle offsets are rotated from the
/// actor-aligned frame into the reference frame; small-class offsets are
/// already reference-frame. Scales decode by exponentiation and stay
/// expressed per prediction axis.
inline std::vector<Waypoint> decode_trajectory(const std::vector<double>& raw, int t_horizon,
                                               double center_x, double center_y, double yaw,
                                               bool rotate_to_reference) {
  MVF_CHECK_ARG(raw.size() == static_cast<std::size_t>(t_horizon) * 4,
                "trajectory arity must be T * 4");
  const double c = rotate_to_reference ? std::cos(yaw) : 1.0;
  const double s = rotate_to_reference ? std::sin(yaw) : 0.0;
  std::vector<Waypoint> out(static_cast<std::size_t>(t_horizon));
  for (int t = 0; t < t_horizon; ++t) {
    const double dx = raw[static_cast<std::size_t>(t) * 4 + 0];
    const double dy = raw[static_cast<std::size_t>(t) * 4 + 1];
    Waypoint& w = out[static_cast<std::size_t>(t)];
    w.x = center_x + c * dx - s * dy;
    w.y = center_y + s * dx + c * dy;
    w.sigma_x = std::exp(raw[static_cast<std::size_t>(t) * 4 + 2]);
    w.sigma_y = std::exp(raw[static_cast<std::size_t>(t) * 4 + 3]);
  }
  return out;
}

/// Detection dump: one row per detection with the box followed by T
/// waypoint quadruples.
inline void write_detection_csv(std::ostream& os, const std::vector<Detection>& dets,
                                int t_horizon) {
  os << "class,score,x,y,w,h,yaw";
  for (int t = 1; t <= t_horizon; ++t) {
    os << ",x" << t << ",y" << t << ",sx" << t << ",sy" << t;
  }
  os << "\n";
  for (const Detection& d : dets) {
    os << class_name(d.cls) << ',' << d.score << ',' << d.box.cx << ',' << d.box.cy << ','
       << d.box.length << ',' << d.box.width << ',' << d.box.yaw;
    for (int t = 0; t < t_horizon; ++t) {
      if (t < static_cast<int>(d.trajectory.size())) {
        const Waypoint& w = d.trajectory[static_cast<std::size_t>(t)];
        os << ',' << w.x << ',' << w.y << ',' << w.sigma_x << ',' << w.sigma_y;
      } else {
        os << ',' << d.box.cx << ',' << d.box.cy << ",1,1";
      }
    }
    os << "\n";
  }
}

}  // namespace mvf
