#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvfuse/box.hpp"
#include "mvfuse/heads.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

struct EvalConfig {
  /// Per-class IoU thresholds, low then high; the low one also governs the
  /// true-positive set used for displacement errors.
  std::array<std::array<double, 2>, kNumClasses> iou_thresholds = {
      {{0.5, 0.7}, {0.1, 0.3}, {0.1, 0.3}}};
  std::array<double, 3> horizons = {0.0, 1.0, 3.0};  // seconds
  double waypoint_hz = 5.0;

  void validate() const {
    for (const auto& t : iou_thresholds)
      MVF_CHECK_ARG(t[0] > 0.0 && t[0] <= t[1] && t[1] < 1.0, "IoU thresholds must be ordered");
    MVF_CHECK_ARG(waypoint_hz > 0.0, "waypoint rate must be positive");
    for (double h : horizons) MVF_CHECK_ARG(h >= 0.0, "horizons must be non-negative");
  }
};

/// One frame's model output next to its ground truth. Only in-ROI actors
/// count as ground truth; everything unmatched on the detection side is a
/// false positive.
struct EvalFrame {
  std::vector<Detection> detections;  // post-NMS, trajectories attached
  std::vector<LabeledActor> actors;
};

namespace detail {

struct ScoredMatch {
  std::size_t frame = 0;
  std::size_t det = 0;
  double score = 0.0;
  int gt = -1;  // matched actor index within the frame, -1 for false positive
};

/// Greedy cross-frame matching for one class at one threshold: walk the
/// detections by descending score (ties keep frame then input order) and
/// give each the highest-IoU unused ground truth at or above the threshold.
inline std::vector<ScoredMatch> greedy_match(const std::vector<EvalFrame>& frames,
                                             ActorClass cls, double iou_threshold,
                                             std::size_t* n_gt_out = nullptr) {
  std::vector<ScoredMatch> order;
  std::size_t n_gt = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t d = 0; d < frames[f].detections.size(); ++d) {
      if (frames[f].detections[d].cls == cls)
        order.push_back({f, d, frames[f].detections[d].score, -1});
    }
    for (const LabeledActor& a : frames[f].actors)
      if (a.cls == cls && a.in_roi) ++n_gt;
  }
  std::sort(order.begin(), order.end(), [](const ScoredMatch& a, const ScoredMatch& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.det < b.det;
  });

  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    used[f].assign(frames[f].actors.size(), false);
  for (ScoredMatch& m : order) {
    const Detection& det = frames[m.frame].detections[m.det];
    double best = iou_threshold;
    int best_gt = -1;
    const auto& actors = frames[m.frame].actors;
    for (std::size_t g = 0; g < actors.size(); ++g) {
      if (used[m.frame][g] || actors[g].cls != cls || !actors[g].in_roi) continue;
      const double iou = rotated_iou(det.box, actors[g].box);
      if (iou > best || (iou == best && best_gt < 0)) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      m.gt = best_gt;
      used[m.frame][static_cast<std::size_t>(best_gt)] = true;
    }
  }
  if (n_gt_out != nullptr) *n_gt_out = n_gt;
  return order;
}

/// Area under the all-point-interpolated precision-recall curve.
inline double interpolated_ap(const std::vector<ScoredMatch>& matches, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (const ScoredMatch& m : matches) {
    if (m.gt >= 0)
      ++tp;
    else
      ++fp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) best = std::max(best, precision[j]);
    ap += (recall[i] - prev_recall) * best;
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace detail

/// AP for one class at one threshold over a set of frames.
inline double average_precision(const std::vector<EvalFrame>& frames, ActorClass cls,
                                double iou_threshold) {
  std::size_t n_gt = 0;
  const auto matches = detail::greedy_match(frames, cls, iou_threshold, &n_gt);
  return detail::interpolated_ap(matches, n_gt);
}

struct ClassEval {
  std::array<double, 2> ap = {0.0, 0.0};
  std::array<std::optional<double>, 3> l2;  // absent when nothing matched
  std::size_t n_gt = 0;
  std::size_t n_detections = 0;
  std::size_t n_matched = 0;  // at the lower threshold
};

struct EvalResult {
  std::array<ClassEval, kNumClasses> per_class;
};

/// Full table evaluation: per class, AP at both thresholds plus the mean
/// displacement at each horizon over the true positives matched at the
/// class's lower threshold. Horizon 0 compares detection and ground-truth
/// box centers; later horizons read the waypoint at round(h * hz) - 1.
inline EvalResult evaluate_frames(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
  cfg.validate();
  EvalResult out;
  for (int c = 0; c < kNumClasses; ++c) {
    const ActorClass cls = static_cast<ActorClass>(c);
    ClassEval& ce = out.per_class[static_cast<std::size_t>(c)];

    std::size_t n_gt = 0;
    const auto low = detail::greedy_match(frames, cls, cfg.iou_thresholds[c][0], &n_gt);
    ce.n_gt = n_gt;
    ce.n_detections = low.size();
    ce.ap[0] = detail::interpolated_ap(low, n_gt);
    ce.ap[1] = average_precision(frames, cls, cfg.iou_thresholds[c][1]);

    for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
      const double horizon = cfg.horizons[h];
      int waypoint = -1;  // -1 = centers
      if (horizon > 0.0) {
        waypoint = static_cast<int>(std::lround(horizon * cfg.waypoint_hz)) - 1;
        MVF_CHECK_ARG(waypoint >= 0, "horizon shorter than one waypoint step");
      }
      double acc = 0.0;
      std::size_t count = 0;
      for (const auto& m : low) {
        if (m.gt < 0) continue;
        const Detection& det = frames[m.frame].detections[m.det];
        const LabeledActor& gt = frames[m.frame].actors[static_cast<std::size_t>(m.gt)];
        double px = det.box.cx, py = det.box.cy;
        double gx = gt.box.cx, gy = gt.box.cy;
        if (waypoint >= 0) {
          if (waypoint >= static_cast<int>(det.trajectory.size()) ||
              waypoint >= static_cast<int>(gt.waypoints.size()))
            continue;
          px = det.trajectory[static_cast<std::size_t>(waypoint)].x;
          py = det.trajectory[static_cast<std::size_t>(waypoint)].y;
          gx = gt.waypoints[static_cast<std::size_t>(waypoint)][0];
          gy = gt.waypoints[static_cast<std::size_t>(waypoint)][1];
        }
        acc += std::hypot(px - gx, py - gy);
        ++count;
      }
      if (count > 0) ce.l2[h] = acc / static_cast<double>(count);
      if (h == 0) ce.n_matched = count;
    }
  }
  return out;
}

/// Constant-velocity reference forecasts: every in-ROI actor becomes a
/// perfect detection whose trajectory extrapolates the velocity between the
/// most recent past position and the current center.
inline std::vector<Detection> cv_baseline_detections(const std::vector<LabeledActor>& actors,
                                                     int t_horizon, double sweep_hz,
                                                     double waypoint_hz) {
  MVF_CHECK_ARG(t_horizon >= 1 && sweep_hz > 0.0 && waypoint_hz > 0.0,
                "constant-velocity baseline needs a positive horizon and rates");
  std::vector<Detection> out;
  for (const LabeledActor& a : actors) {
    if (!a.in_roi) continue;
    Detection d;
    d.cls = a.cls;
    d.score = 1.0;
    d.box = a.box;
    double vx = 0.0, vy = 0.0;
    if (!a.past.empty()) {
      vx = (a.box.cx - a.past.back()[0]) * sweep_hz;
      vy = (a.box.cy - a.past.back()[1]) * sweep_hz;
    }
    d.trajectory.resize(static_cast<std::size_t>(t_horizon));
    for (int t = 0; t < t_horizon; ++t) {
      const double dt = static_cast<double>(t + 1) / waypoint_hz;
      d.trajectory[static_cast<std::size_t>(t)] = {a.box.cx + vx * dt, a.box.cy + vy * dt, 1.0,
                                                   1.0};
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

/// CSV rows: class, AP at both thresholds, then one L2 column per horizon
/// (empty field when no detection matched).
inline void write_metrics_csv(std::ostream& os, const EvalResult& result,
                              const EvalConfig& cfg) {
  os << "class,ap_low,ap_high";
  for (double h : cfg.horizons) os << ",l2_" << h << "s";
  os << ",n_gt,n_matched\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassEval& ce = result.per_class[static_cast<std::size_t>(c)];
    os << class_name(static_cast<ActorClass>(c)) << ',' << ce.ap[0] << ',' << ce.ap[1];
    for (const auto& l2 : ce.l2) {
      os << ',';
      if (l2.has_value()) os << *l2;
    }
    os << ',' << ce.n_gt << ',' << ce.n_matched << "\n";
  }
}

/// Fixed-width table mirroring the CSV contents.
inline void write_metrics_table(std::ostream& os, const EvalResult& result,
                                const EvalConfig& cfg) {
  os << std::left << std::setw(12) << "class";
  for (int c = 0; c < 2; ++c) os << std::right << std::setw(10) << (c == 0 ? "AP(low)" : "AP(high)");
  for (double h : cfg.horizons) {
    std::ostringstream label;
    label << "L2@" << h << "s";
    os << std::setw(10) << label.str();
  }
  os << "\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassEval& ce = result.per_class[static_cast<std::size_t>(c)];
    os << std::left << std::setw(12) << class_name(static_cast<ActorClass>(c));
    os << std::right << std::fixed << std::setprecision(3);
    os << std::setw(10) << ce.ap[0] << std::setw(10) << ce.ap[1];
    for (const auto& l2 : ce.l2) {
      if (l2.has_value())
        os << std::setw(10) << *l2;
      else
        os << std::setw(10) << "-";
    }
    os << "\n";
    os.unsetf(std::ios::fixed);
    os << std::setprecision(6);
  }
}

}  // namespace mvf
