#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/backbone.hpp"
#include "mvfuse/fusion.hpp"
#include "mvfuse/heads.hpp"
#include "mvfuse/losses.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

/// Wiring for the full network: temporal fusion -> multi-view backbone ->
/// detection and trajectory heads, plus the loss settings used in training.
struct ModelConfig {
  FusionConfig fusion;
  BackboneConfig backbone;
  DetectionHeadConfig det;
  TrajectoryHeadConfig traj;
  LossConfig loss;
  double nms_iou = 0.3;
  double score_threshold = 0.1;

  /// Head grid: same extent as the fused BEV grid at half resolution, which
  /// is where the backbone emits its per-cell features.
  BEVGridSpec output_grid() const { return {fusion.bev.length, fusion.bev.resolution * 2.0}; }

  void validate() const {
    fusion.validate();
    backbone.validate();
    det.validate();
    traj.validate();
    loss.validate();
    output_grid().validate();
    MVF_CHECK_ARG(backbone.rv_in == fusion.rv_channels,
                  "backbone range-view input width must match the fusion output");
    MVF_CHECK_ARG(backbone.bev_in == fusion.bev_channels,
                  "backbone BEV input width must match the fusion output");
    MVF_CHECK_ARG(det.in_channels == backbone.out_channels,
                  "detection head width must match the backbone output");
    MVF_CHECK_ARG(loss.t_horizon == traj.t_horizon,
                  "loss and trajectory heads must agree on the horizon");
    MVF_CHECK_ARG(nms_iou > 0.0 && nms_iou < 1.0, "NMS IoU threshold must be in (0, 1)");
    MVF_CHECK_ARG(score_threshold >= 0.0 && score_threshold < 1.0,
                  "score threshold must be in [0, 1)");
  }
};

/// Loss tensors plus the per-frame assignment bookkeeping used for logging.
template <class Real>
struct FrameLoss {
  LossBreakdown<Real> loss;
  std::size_t positives = 0;
  int dropped_collisions = 0;
};

/// The complete detector/forecaster. All methods are deterministic functions
/// of the parameters and inputs; training vs. inference behaviour is carried
/// by the RunCtx (batch-norm statistics) and the vehicle-head flag.
template <class Real>
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        fusion_(cfg.fusion, rng),
        backbone_(cfg.backbone, rng),
        det_head_(cfg.det, rng),
        veh_head_(cfg.backbone.out_channels, cfg.traj, rng),
        small_head_(cfg.backbone.out_channels, cfg.traj, rng) {
    cfg_.validate();
  }

  const ModelConfig& config() const { return cfg_; }
  BEVGridSpec output_grid() const { return cfg_.output_grid(); }

  /// Shared trunk: fuse the sweep history, then refine with the backbone.
  /// Returns the per-cell feature map on the output grid.
  TensorT<Real> features(const LabeledFrame& frame, const nn::RunCtx<Real>& ctx) {
    auto [rv, bev] = fusion_.forward(frame.sweeps, ctx);
    TensorT<Real> feats = backbone_.forward(rv, bev, frame.map, frame.reference(), ctx);
    const int n = output_grid().cells_per_axis();
    MVF_CHECK_ARG(feats.dim(1) == n && feats.dim(2) == n,
                  "backbone output does not cover the head grid");
    return feats;
  }

  /// Training objective for one frame. Ground-truth boxes drive both the
  /// regression targets and the trajectory-head inputs (teacher forcing);
  /// the vehicle head only participates when `use_vehicle_head` is set.
  FrameLoss<Real> training_loss(const LabeledFrame& frame, bool use_vehicle_head,
                                const nn::RunCtx<Real>& ctx) {
    const BEVGridSpec grid = output_grid();
    const int n = grid.cells_per_axis();

    TensorT<Real> feats = features(frame, ctx);
    typename DetectionHead<Real>::Output det = det_head_.forward(feats, ctx);
    const TargetAssignment assignment = assign_targets(frame.actors, grid);

    std::vector<Real> target_data(assignment.cls_target.begin(), assignment.cls_target.end());
    TensorT<Real> cls_targets =
        TensorT<Real>::from_data({kNumClasses, n, n}, std::move(target_data));

    // Box parameters of the positive cells, gathered channel-major so the
    // result matches the [param, positive] layout of the targets.
    TensorT<Real> box_pred, box_target;
    const std::size_t p_count = assignment.positives.size();
    if (p_count > 0) {
      std::vector<std::size_t> flat;
      std::vector<Real> targets(kBoxParamDim * p_count);
      flat.reserve(kBoxParamDim * p_count);
      const std::size_t cells = static_cast<std::size_t>(assignment.cells);
      for (int q = 0; q < kBoxParamDim; ++q) {
        for (std::size_t j = 0; j < p_count; ++j) {
          const int pos = assignment.positives[j];
          const int cls = pos / assignment.cells;
          const int cell = pos % assignment.cells;
          flat.push_back((static_cast<std::size_t>(kBoxParamDim) * cls + q) * cells + cell);

          const LabeledActor& actor =
              frame.actors[static_cast<std::size_t>(assignment.actor_of[pos])];
          double cx = 0.0, cy = 0.0;
          bev_cell_center({cell % n, cell / n}, grid, cx, cy);
          targets[static_cast<std::size_t>(q) * p_count + j] =
              static_cast<Real>(encode_box(actor.box, cx, cy)[static_cast<std::size_t>(q)]);
        }
      }
      box_pred = reshape(gather_elements(det.boxes, std::move(flat)),
                         {kBoxParamDim, static_cast<int>(p_count)});
      box_target = TensorT<Real>::from_data({kBoxParamDim, static_cast<int>(p_count)},
                                            std::move(targets));
    }

    // Trajectory groups: one batch for all small-class actors (center-cell
    // features, reference-frame offsets) and one single-actor batch per
    // vehicle (rotated ROI patch, actor-frame offsets).
    std::vector<TrajectoryBatch<Real>> batches;
    const int t_horizon = cfg_.traj.t_horizon;
    std::vector<int> small_cells;
    std::vector<std::size_t> small_actors;
    for (int pos : assignment.positives) {
      const ActorClass cls = static_cast<ActorClass>(pos / assignment.cells);
      const std::size_t actor = static_cast<std::size_t>(assignment.actor_of[pos]);
      MVF_CHECK(frame.actors[actor].waypoints.size() >= static_cast<std::size_t>(t_horizon),
                Errc::data_format, "actor is missing future waypoints");
      if (cls == ActorClass::vehicle) {
        if (!use_vehicle_head) continue;
        const LabeledActor& a = frame.actors[actor];
        TensorT<Real> patch =
            rroi_extract(feats, grid, a.box, cfg_.traj.rroi_side, cfg_.traj.rroi_cells);
        TrajectoryBatch<Real> batch;
        batch.raw = veh_head_.forward(patch, ctx);
        batch.gt = actor_frame_targets(a, t_horizon);
        batches.push_back(std::move(batch));
      } else {
        small_cells.push_back(pos % assignment.cells);
        small_actors.push_back(actor);
      }
    }
    if (!small_cells.empty()) {
      TensorT<Real> feats2d = reshape(feats, {feats.dim(0), n * n});
      TrajectoryBatch<Real> batch;
      batch.raw = small_head_.forward(gather_columns(feats2d, std::move(small_cells)), ctx);
      batch.gt = reference_frame_targets(frame.actors, small_actors, t_horizon);
      batches.push_back(std::move(batch));
    }

    FrameLoss<Real> out;
    out.loss = total_loss(det.logits, cls_targets, box_pred, box_target, batches, cfg_.loss);
    out.positives = p_count;
    out.dropped_collisions = assignment.dropped_collisions;
    return out;
  }

  /// Inference: decode the dense head, suppress duplicates, then attach a
  /// trajectory to every surviving detection.
  std::vector<Detection> predict(const LabeledFrame& frame, const nn::RunCtx<Real>& ctx) {
    const BEVGridSpec grid = output_grid();
    const int n = grid.cells_per_axis();
    TensorT<Real> feats = features(frame, ctx);
    typename DetectionHead<Real>::Output det = det_head_.forward(feats, ctx);

    std::vector<Detection> kept =
        nms(decode_detections(det.logits, det.boxes, grid, cfg_.score_threshold), cfg_.nms_iou);

    std::vector<int> small_cells;
    std::vector<std::size_t> small_dets;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      Detection& d = kept[i];
      if (d.cls == ActorClass::vehicle) {
        TensorT<Real> patch =
            rroi_extract(feats, grid, d.box, cfg_.traj.rroi_side, cfg_.traj.rroi_cells);
        TensorT<Real> raw = veh_head_.forward(patch, ctx);
        d.trajectory = decode_trajectory(as_double(raw.values()), cfg_.traj.t_horizon, d.box.cx,
                                         d.box.cy, d.box.yaw, /*rotate_to_reference=*/true);
      } else {
        MVF_CHECK_ARG(d.cell >= 0, "detection is missing its source cell");
        small_cells.push_back(d.cell);
        small_dets.push_back(i);
      }
    }
    if (!small_cells.empty()) {
      TensorT<Real> feats2d = reshape(feats, {feats.dim(0), n * n});
      TensorT<Real> raw = small_head_.forward(gather_columns(feats2d, std::move(small_cells)), ctx);
      const int t = cfg_.traj.t_horizon;
      for (std::size_t j = 0; j < small_dets.size(); ++j) {
        Detection& d = kept[small_dets[j]];
        std::vector<double> column(static_cast<std::size_t>(t) * 4);
        for (std::size_t r = 0; r < column.size(); ++r)
          column[r] = static_cast<double>(
              raw.values()[r * small_dets.size() + j]);
        d.trajectory = decode_trajectory(column, t, d.box.cx, d.box.cy, d.box.yaw,
                                         /*rotate_to_reference=*/false);
      }
    }
    return kept;
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<Real>& v) {
    fusion_.visit(prefix + ".fusion", v);
    backbone_.visit(prefix + ".backbone", v);
    det_head_.visit(prefix + ".det", v);
    veh_head_.visit(prefix + ".veh_traj", v);
    small_head_.visit(prefix + ".small_traj", v);
  }

  /// Number of trainable parameter scalars (batch-norm buffers excluded).
  std::size_t param_count() {
    std::size_t count = 0;
    nn::ParamVisitor<Real> v;
    v.on_param = [&](const std::string&, TensorT<Real>& t) { count += t.numel(); };
    visit("model", v);
    return count;
  }

 private:
  static std::vector<double> as_double(const std::vector<Real>& values) {
    return std::vector<double>(values.begin(), values.end());
  }

  /// GT displacements rotated into the actor frame, [T*2, 1].
  static TensorT<Real> actor_frame_targets(const LabeledActor& a, int t_horizon) {
    const double c = std::cos(a.box.yaw), s = std::sin(a.box.yaw);
    std::vector<Real> gt(static_cast<std::size_t>(t_horizon) * 2);
    for (int t = 0; t < t_horizon; ++t) {
      const double dx = a.waypoints[static_cast<std::size_t>(t)][0] - a.box.cx;
      const double dy = a.waypoints[static_cast<std::size_t>(t)][1] - a.box.cy;
      gt[static_cast<std::size_t>(t) * 2 + 0] = static_cast<Real>(c * dx + s * dy);
      gt[static_cast<std::size_t>(t) * 2 + 1] = static_cast<Real>(-s * dx + c * dy);
    }
    return TensorT<Real>::from_data({t_horizon * 2, 1}, std::move(gt));
  }

  /// GT displacements in the reference frame for a batch of actors, [T*2, M].
  static TensorT<Real> reference_frame_targets(const std::vector<LabeledActor>& actors,
                                               const std::vector<std::size_t>& idx,
                                               int t_horizon) {
    const std::size_t m = idx.size();
    std::vector<Real> gt(static_cast<std::size_t>(t_horizon) * 2 * m);
    for (std::size_t j = 0; j < m; ++j) {
      const LabeledActor& a = actors[idx[j]];
      for (int t = 0; t < t_horizon; ++t) {
        gt[(static_cast<std::size_t>(t) * 2 + 0) * m + j] =
            static_cast<Real>(a.waypoints[static_cast<std::size_t>(t)][0] - a.box.cx);
        gt[(static_cast<std::size_t>(t) * 2 + 1) * m + j] =
            static_cast<Real>(a.waypoints[static_cast<std::size_t>(t)][1] - a.box.cy);
      }
    }
    return TensorT<Real>::from_data({t_horizon * 2, static_cast<int>(m)}, std::move(gt));
  }

  ModelConfig cfg_;
  TemporalFusion<Real> fusion_;
  Backbone<Real> backbone_;
  DetectionHead<Real> det_head_;
  VehicleTrajectoryHead<Real> veh_head_;
  SmallTrajectoryHead<Real> small_head_;
};

using ModelD = Model<double>;
using ModelF = Model<float>;

}  // namespace mvf
