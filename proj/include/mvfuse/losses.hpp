#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mvfuse/ops.hpp"
#include "mvfuse/tensor.hpp"

namespace mvf {

struct LossConfig {
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double lambda_reg = 0.2;     // detection regression weight
  double smooth_l1_beta = 1.0;
  double b_gt = 0.05;          // ground-truth Laplace scale, meters
  int t_horizon = 15;

  void validate() const {
    MVF_CHECK_ARG(focal_gamma >= 0.0, "focal gamma must be non-negative");
    MVF_CHECK_ARG(focal_alpha > 0.0 && focal_alpha <= 1.0, "focal alpha must lie in (0, 1]");
    MVF_CHECK_ARG(lambda_reg >= 0.0, "regression weight must be non-negative");
    MVF_CHECK_ARG(smooth_l1_beta > 0.0, "smooth-L1 beta must be positive");
    MVF_CHECK_ARG(b_gt > 0.0, "ground-truth scale must be positive");
    MVF_CHECK_ARG(t_horizon >= 1, "horizon must be positive");
  }
};

/// Closed-form KL(Laplace(mu1, b1) || Laplace(mu2, b2)).
inline double laplace_kl(double mu1, double b1, double mu2, double b2) {
  MVF_CHECK_ARG(b1 > 0.0 && b2 > 0.0, "laplace_kl scales must be positive");
  const double d = std::abs(mu1 - mu2);
  return std::log(b2 / b1) + (b1 * std::exp(-d / b1) + d) / b2 - 1.0;
}

/// Trajectory loss for one batch of actors. `raw` is the head output
/// [T*4, M] with t-major rows (dx, dy, log sigma_x, log sigma_y); `gt` holds
/// the matching ground-truth offsets [T*2, M] in the same frame. Per
/// waypoint and axis the loss is KL(Laplace(gt, b_gt) || Laplace(pred)),
/// evaluated directly on the predicted log scale s as
/// s - ln(b_gt) + (b_gt * exp(-|delta|/b_gt) + |delta|) * exp(-s) - 1,
/// averaged over actors per step and then over the T steps.
template <class Real>
TensorT<Real> trajectory_kl_loss(const TensorT<Real>& raw, const TensorT<Real>& gt, Real b_gt) {
  MVF_CHECK_ARG(b_gt > Real(0), "ground-truth scale must be positive");
  MVF_CHECK_ARG(raw.shape().size() == 2 && gt.shape().size() == 2 &&
                    raw.dim(1) == gt.dim(1) && raw.dim(0) % 4 == 0 &&
                    raw.dim(0) / 2 == gt.dim(0),
                "trajectory loss expects raw [T*4, M] against offsets [T*2, M]");
  MVF_CHECK_ARG(!gt.requires_grad(), "trajectory targets must be constant");
  MVF_CHECK(raw.dim(1) > 0, Errc::empty_input, "trajectory loss over zero actors");
  const int t_horizon = raw.dim(0) / 4;
  const Real inv_m = Real(1) / static_cast<Real>(raw.dim(1));

  TensorT<Real> total;
  for (int t = 0; t < t_horizon; ++t) {
    TensorT<Real> mu = slice_channels(raw, 4 * t, 4 * t + 2);
    TensorT<Real> s = slice_channels(raw, 4 * t + 2, 4 * t + 4);
    TensorT<Real> g = slice_channels(gt, 2 * t, 2 * t + 2);
    TensorT<Real> delta = abs_op(sub(mu, g));
    TensorT<Real> decay =
        mul_scalar(exp_op(mul_scalar(delta, Real(-1) / b_gt)), b_gt);
    TensorT<Real> kl = add(add_scalar(s, -std::log(b_gt) - Real(1)),
                           mul(add(decay, delta), exp_op(neg(s))));
    TensorT<Real> step = mul_scalar(sum_all(kl), inv_m);
    total = total.defined() ? add(total, step) : step;
  }
  return mul_scalar(total, Real(1) / static_cast<Real>(t_horizon));
}

/// One trajectory head group (vehicles, or the small classes); kept separate
/// because the groups predict in different frames.
template <class Real>
struct TrajectoryBatch {
  TensorT<Real> raw;  // [T*4, M]
  TensorT<Real> gt;   // [T*2, M]

  int actor_count() const { return raw.defined() ? raw.dim(1) : 0; }
};

/// The full objective and its parts: total = cls + lambda * reg + traj.
template <class Real>
struct LossBreakdown {
  TensorT<Real> total;
  TensorT<Real> cls;
  TensorT<Real> reg;   // unweighted smooth-L1 term
  TensorT<Real> traj;  // per-step KL averaged over the horizon
};

/// Assemble the training objective. `box_pred`/`box_target` hold the box
/// parameters of the positive cells only, [kBoxParamDim, P]; either may be
/// undefined when the frame has no positives. Trajectory groups pool into
/// a single per-actor average before the horizon average is taken.
template <class Real>
LossBreakdown<Real> total_loss(const TensorT<Real>& cls_logits, const TensorT<Real>& cls_targets,
                               const TensorT<Real>& box_pred, const TensorT<Real>& box_target,
                               const std::vector<TrajectoryBatch<Real>>& trajectories,
                               const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown<Real> out;
  out.cls = focal_loss_with_logits(cls_logits, cls_targets, static_cast<Real>(cfg.focal_gamma),
                                   static_cast<Real>(cfg.focal_alpha));

  if (box_pred.defined() && box_pred.numel() > 0) {
    out.reg = smooth_l1(box_pred, box_target, static_cast<Real>(cfg.smooth_l1_beta));
  } else {
    out.reg = TensorT<Real>::scalar(Real(0));
  }

  int total_actors = 0;
  for (const auto& group : trajectories) total_actors += group.actor_count();
  if (total_actors > 0) {
    TensorT<Real> pooled;
    for (const auto& group : trajectories) {
      if (group.actor_count() == 0) continue;
      TensorT<Real> part = mul_scalar(
          trajectory_kl_loss(group.raw, group.gt, static_cast<Real>(cfg.b_gt)),
          static_cast<Real>(group.actor_count()));
      pooled = pooled.defined() ? add(pooled, part) : part;
    }
    out.traj = mul_scalar(pooled, Real(1) / static_cast<Real>(total_actors));
  } else {
    out.traj = TensorT<Real>::scalar(Real(0));
  }

  out.total = add(out.cls, add(mul_scalar(out.reg, static_cast<Real>(cfg.lambda_reg)), out.traj));
  return out;
}

}  // namespace mvf
