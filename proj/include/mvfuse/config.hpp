#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mvfuse/common.hpp"
#include "mvfuse/metrics.hpp"
#include "mvfuse/model.hpp"
#include "mvfuse/sim.hpp"
#include "mvfuse/train.hpp"

namespace mvf {

/// Everything a run needs: dataset generation, model wiring, training
/// schedule, and evaluation settings. JSON configs are partial overlays on
/// the defaults; fields that must agree across sections (grids, horizons,
/// channel widths at module boundaries) are derived, not duplicated.
struct RunConfig {
  std::uint64_t seed = 1;
  int train_frames = 64;
  int eval_frames = 16;

  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  /// Propagate the single-source-of-truth fields into the dependent modules
  /// and check the result. Call after any manual edits.
  void finalize() {
    scene.validate();
    model.fusion.rv = scene.rv;
    model.fusion.bev = scene.bev;
    model.fusion.k_history = scene.k_history;
    model.backbone.rv_in = model.fusion.rv_channels;
    model.backbone.bev_in = model.fusion.bev_channels;
    model.det.in_channels = model.backbone.out_channels;
    model.traj.t_horizon = scene.t_horizon;
    model.loss.t_horizon = scene.t_horizon;
    eval.waypoint_hz = scene.waypoint_hz;
    MVF_CHECK_ARG(train_frames >= 1 && eval_frames >= 1, "need at least one frame per split");
    model.validate();
    train.validate();
    eval.validate();
  }
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void unknown_key(const std::string& section, const std::string& key) {
  fail(Errc::data_format, "config: unknown key \"" + key + "\" in section \"" + section + "\"");
}

template <class T>
T as(const json& value, const std::string& section, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    fail(Errc::data_format, "config: bad value type for \"" + key + "\" in \"" + section + "\"");
  }
}

inline FusionStrategy parse_strategy(const std::string& s) {
  if (s == "sequential") return FusionStrategy::sequential;
  if (s == "one_shot") return FusionStrategy::one_shot;
  fail(Errc::data_format, "config: unknown fusion strategy \"" + s + "\"");
}

inline FusionViews parse_fusion_views(const std::string& s) {
  if (s == "both") return FusionViews::both;
  if (s == "rv_only") return FusionViews::rv_only;
  if (s == "bev_only") return FusionViews::bev_only;
  fail(Errc::data_format, "config: unknown fusion views \"" + s + "\"");
}

inline BackboneViews parse_backbone_views(const std::string& s) {
  if (s == "both") return BackboneViews::both;
  if (s == "rv_only") return BackboneViews::rv_only;
  if (s == "bev_only") return BackboneViews::bev_only;
  fail(Errc::data_format, "config: unknown backbone views \"" + s + "\"");
}

inline void parse_scene(const json& j, SceneConfig& s) {
  for (const auto& [key, value] : j.items()) {
    if (key == "rv_rows") s.rv.rows = as<int>(value, "scene", key);
    else if (key == "rv_cols") s.rv.cols = as<int>(value, "scene", key);
    else if (key == "bev_length") s.bev.length = as<double>(value, "scene", key);
    else if (key == "bev_resolution") s.bev.resolution = as<double>(value, "scene", key);
    else if (key == "k_history") s.k_history = as<int>(value, "scene", key);
    else if (key == "t_horizon") s.t_horizon = as<int>(value, "scene", key);
    else if (key == "sweep_hz") s.sweep_hz = as<double>(value, "scene", key);
    else if (key == "waypoint_hz") s.waypoint_hz = as<double>(value, "scene", key);
    else if (key == "max_range") s.max_range = as<double>(value, "scene", key);
    else if (key == "sensor_height") s.sensor_height = as<double>(value, "scene", key);
    else if (key == "min_vehicles") s.min_vehicles = as<int>(value, "scene", key);
    else if (key == "max_vehicles") s.max_vehicles = as<int>(value, "scene", key);
    else if (key == "min_pedestrians") s.min_pedestrians = as<int>(value, "scene", key);
    else if (key == "max_pedestrians") s.max_pedestrians = as<int>(value, "scene", key);
    else if (key == "min_bikes") s.min_bikes = as<int>(value, "scene", key);
    else if (key == "max_bikes") s.max_bikes = as<int>(value, "scene", key);
    else if (key == "road_half_width") s.road_half_width = as<double>(value, "scene", key);
    else if (key == "spawn_radius") s.spawn_radius = as<double>(value, "scene", key);
    else if (key == "ego_clearance") s.ego_clearance = as<double>(value, "scene", key);
    else if (key == "ego_speed_max") s.ego_speed_max = as<double>(value, "scene", key);
    else unknown_key("scene", key);
  }
}

inline void parse_fusion(const json& j, FusionConfig& f) {
  for (const auto& [key, value] : j.items()) {
    if (key == "strategy") f.strategy = parse_strategy(as<std::string>(value, "fusion", key));
    else if (key == "views") f.views = parse_fusion_views(as<std::string>(value, "fusion", key));
    else if (key == "rv_channels") f.rv_channels = as<int>(value, "fusion", key);
    else if (key == "bev_channels") f.bev_channels = as<int>(value, "fusion", key);
    else if (key == "mlp_channels") f.mlp_channels = as<int>(value, "fusion", key);
    else if (key == "blocks") f.blocks = as<int>(value, "fusion", key);
    else unknown_key("model.fusion", key);
  }
}

inline void parse_backbone(const json& j, BackboneConfig& b) {
  for (const auto& [key, value] : j.items()) {
    if (key == "views") b.views = parse_backbone_views(as<std::string>(value, "backbone", key));
    else if (key == "rv_out") b.rv_out = as<int>(value, "backbone", key);
    else if (key == "proj_channels") b.proj_channels = as<int>(value, "backbone", key);
    else if (key == "map_channels") b.map_channels = as<int>(value, "backbone", key);
    else if (key == "out_channels") b.out_channels = as<int>(value, "backbone", key);
    else if (key == "stages") b.stages = as<int>(value, "backbone", key);
    else if (key == "rv_base") b.rv_base = as<int>(value, "backbone", key);
    else if (key == "bev_base") b.bev_base = as<int>(value, "backbone", key);
    else unknown_key("model.backbone", key);
  }
}

inline void parse_model(const json& j, ModelConfig& m) {
  for (const auto& [key, value] : j.items()) {
    if (key == "fusion") parse_fusion(value, m.fusion);
    else if (key == "backbone") parse_backbone(value, m.backbone);
    else if (key == "detection_prior") m.det.prior = as<double>(value, "model", key);
    else if (key == "trajectory_hidden") m.traj.hidden = as<int>(value, "model", key);
    else if (key == "rroi_side") m.traj.rroi_side = as<double>(value, "model", key);
    else if (key == "rroi_cells") m.traj.rroi_cells = as<int>(value, "model", key);
    else if (key == "nms_iou") m.nms_iou = as<double>(value, "model", key);
    else if (key == "score_threshold") m.score_threshold = as<double>(value, "model", key);
    else if (key == "focal_gamma") m.loss.focal_gamma = as<double>(value, "model", key);
    else if (key == "focal_alpha") m.loss.focal_alpha = as<double>(value, "model", key);
    else if (key == "lambda_reg") m.loss.lambda_reg = as<double>(value, "model", key);
    else if (key == "smooth_l1_beta") m.loss.smooth_l1_beta = as<double>(value, "model", key);
    else if (key == "b_gt") m.loss.b_gt = as<double>(value, "model", key);
    else unknown_key("model", key);
  }
}

inline void parse_train(const json& j, TrainConfig& t) {
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs_phase1") t.epochs_phase1 = as<int>(value, "train", key);
    else if (key == "epochs_phase2") t.epochs_phase2 = as<int>(value, "train", key);
    else if (key == "batch_size") t.batch_size = as<int>(value, "train", key);
    else if (key == "lr_start") t.lr_start = as<double>(value, "train", key);
    else if (key == "lr_end") t.lr_end = as<double>(value, "train", key);
    else unknown_key("train", key);
  }
}

inline void parse_eval(const json& j, EvalConfig& e) {
  for (const auto& [key, value] : j.items()) {
    if (key == "iou_thresholds") {
      auto flat = as<std::array<std::array<double, 2>, kNumClasses>>(value, "eval", key);
      e.iou_thresholds = flat;
    } else if (key == "horizons") {
      e.horizons = as<std::array<double, 3>>(value, "eval", key);
    } else {
      unknown_key("eval", key);
    }
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  MVF_CHECK(j.is_object(), Errc::data_format, "config: top level must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") cfg.seed = detail::as<std::uint64_t>(value, "(top)", key);
    else if (key == "train_frames") cfg.train_frames = detail::as<int>(value, "(top)", key);
    else if (key == "eval_frames") cfg.eval_frames = detail::as<int>(value, "(top)", key);
    else if (key == "scene") detail::parse_scene(value, cfg.scene);
    else if (key == "model") detail::parse_model(value, cfg.model);
    else if (key == "train") detail::parse_train(value, cfg.train);
    else if (key == "eval") detail::parse_eval(value, cfg.eval);
    else detail::unknown_key("(top)", key);
  }
  cfg.finalize();
  return cfg;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::data_format, std::string("config: invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  MVF_CHECK(in.good(), Errc::io_error, "config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

}  // namespace mvf
