#pragma once

#include <vector>

#include "mvfuse/metrics.hpp"
#include "mvfuse/model.hpp"

namespace mvf {

/// Run inference over a frame list. The tape is disabled and batch norm uses
/// running statistics, so the result is a pure function of the weights.
template <class Real>
std::vector<EvalFrame> predict_frames(Model<Real>& model,
                                      const std::vector<LabeledFrame>& frames) {
  MVF_CHECK(!frames.empty(), Errc::empty_input, "evaluation needs at least one frame");
  NoGrad guard;
  const nn::RunCtx<Real> ctx{};
  std::vector<EvalFrame> out;
  out.reserve(frames.size());
  for (const LabeledFrame& frame : frames) {
    EvalFrame ef;
    ef.detections = model.predict(frame, ctx);
    ef.actors = frame.actors;
    out.push_back(std::move(ef));
  }
  return out;
}

template <class Real>
EvalResult evaluate_model(Model<Real>& model, const std::vector<LabeledFrame>& frames,
                          const EvalConfig& cfg) {
  return evaluate_frames(predict_frames(model, frames), cfg);
}

/// Score the constant-velocity extrapolation baseline on the same frames:
/// ground-truth boxes with trajectories extrapolated from the GT past poses.
inline EvalResult evaluate_cv_baseline(const std::vector<LabeledFrame>& frames,
                                       const EvalConfig& cfg) {
  MVF_CHECK(!frames.empty(), Errc::empty_input, "evaluation needs at least one frame");
  std::vector<EvalFrame> out;
  out.reserve(frames.size());
  for (const LabeledFrame& frame : frames) {
    EvalFrame ef;
    ef.detections =
        cv_baseline_detections(frame.actors, frame.t_horizon, frame.sweep_hz, frame.waypoint_hz);
    ef.actors = frame.actors;
    out.push_back(std::move(ef));
  }
  return evaluate_frames(out, cfg);
}

}  // namespace mvf
