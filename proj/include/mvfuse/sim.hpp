#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvfuse/box.hpp"
#include "mvfuse/common.hpp"
#include "mvfuse/geometry.hpp"
#include "mvfuse/grid.hpp"
#include "mvfuse/random.hpp"

namespace mvf {

enum class ActorClass : std::uint8_t { vehicle = 0, pedestrian = 1, bike = 2 };
inline constexpr int kNumClasses = 3;

inline const char* class_name(ActorClass c) {
  switch (c) {
    case ActorClass::vehicle: return "vehicle";
    case ActorClass::pedestrian: return "pedestrian";
    case ActorClass::bike: return "bike";
  }
  return "?";
}

enum class MotionModel : std::uint8_t { stationary = 0, constant_velocity = 1, constant_turn = 2 };

/// A simulated traffic participant. The box is the world-frame footprint at
/// the reference time; past and future states follow the motion model in
/// closed form.
struct Actor {
  ActorClass cls = ActorClass::vehicle;
  OrientedBox box;          // world frame at t = 0
  double z_center = 0.9;    // meters, world z of the box's vertical center
  double z_height = 1.8;    // vertical extent
  MotionModel motion = MotionModel::stationary;
  double speed = 0.0;       // m/s along heading
  double turn_rate = 0.0;   // rad/s, used by constant_turn

  /// World-frame footprint at time `t` seconds relative to the reference.
  OrientedBox box_at(double t) const {
    OrientedBox b = box;
    switch (motion) {
      case MotionModel::stationary:
        break;
      case MotionModel::constant_velocity:
        b.cx += speed * t * std::cos(box.yaw);
        b.cy += speed * t * std::sin(box.yaw);
        break;
      case MotionModel::constant_turn: {
        const double w = turn_rate;
        b.yaw = wrap_angle(box.yaw + w * t);
        b.cx += speed / w * (std::sin(box.yaw + w * t) - std::sin(box.yaw));
        b.cy -= speed / w * (std::cos(box.yaw + w * t) - std::cos(box.yaw));
        break;
      }
    }
    return b;
  }
};

/// One LiDAR revolution: points in the capturing sensor's frame plus that
/// frame's pose. Index k is 0 for the reference sweep and negative earlier.
struct Sweep {
  std::vector<Point3> points;
  Pose pose;
  int index = 0;
};

/// Ground truth for one actor, expressed in the reference sensor frame.
struct LabeledActor {
  ActorClass cls = ActorClass::vehicle;
  OrientedBox box;
  bool in_roi = true;
  std::vector<std::array<double, 2>> waypoints;  // t = 1..T futures
  std::vector<std::array<double, 2>> past;       // k = -K..-1 positions
};

struct MapRaster {
  BEVGridSpec spec;
  std::vector<std::uint8_t> drivable;  // row-major iy * n + ix
  std::vector<std::uint8_t> markings;

  void validate() const {
    const std::size_t n = static_cast<std::size_t>(spec.cell_count());
    MVF_CHECK_ARG(drivable.size() == n && markings.size() == n, "map raster size mismatch");
  }
};

struct LabeledFrame {
  std::vector<Sweep> sweeps;  // ordered k = -K .. 0
  std::vector<LabeledActor> actors;
  MapRaster map;
  int k_history = 4;
  int t_horizon = 15;
  double sweep_hz = 5.0;
  double waypoint_hz = 5.0;

  const Sweep& reference() const { return sweeps.back(); }
};

struct SceneConfig {
  RVGridSpec rv;
  BEVGridSpec bev;  // input grid, also the map raster grid
  int k_history = 4;
  int t_horizon = 15;
  double sweep_hz = 5.0;
  double waypoint_hz = 5.0;
  double max_range = 70.0;
  double sensor_height = 1.8;

  int min_vehicles = 3, max_vehicles = 5;
  int min_pedestrians = 1, max_pedestrians = 3;
  int min_bikes = 0, max_bikes = 2;

  double road_half_width = 7.0;
  double spawn_radius = 26.0;   // keep actors comfortably inside the 32 m ROI
  double ego_clearance = 6.0;   // actors never spawn closer to the ego than this
  double ego_speed_max = 6.0;

  double remission_vehicle = 0.8;
  double remission_pedestrian = 0.5;
  double remission_bike = 0.6;
  double remission_ground = 0.3;

  void validate() const {
    rv.validate();
    bev.validate();
    MVF_CHECK_ARG(k_history >= 0, "negative history length");
    MVF_CHECK_ARG(t_horizon >= 1, "need at least one future waypoint");
    MVF_CHECK_ARG(sweep_hz > 0.0 && waypoint_hz > 0.0, "rates must be positive");
    MVF_CHECK_ARG(max_range > 0.0, "max_range must be positive");
    MVF_CHECK_ARG(ego_clearance >= 0.0 && ego_clearance < spawn_radius,
                  "spawn_radius must exceed ego_clearance or no actor can be placed");
  }
};

inline double class_remission(ActorClass c, const SceneConfig& cfg) {
  switch (c) {
    case ActorClass::vehicle: return cfg.remission_vehicle;
    case ActorClass::pedestrian: return cfg.remission_pedestrian;
    case ActorClass::bike: return cfg.remission_bike;
  }
  return 0.0;
}

namespace detail {

/// Ray/oriented-box intersection via the slab method in the box frame.
/// Returns the entry distance, or a negative value on miss.
inline double ray_box_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                            const OrientedBox& box, double z_center, double z_height) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // Into the box frame (rotation about z only).
  const double ox = c * (origin.x() - box.cx) + s * (origin.y() - box.cy);
  const double oy = -s * (origin.x() - box.cx) + c * (origin.y() - box.cy);
  const double oz = origin.z() - z_center;
  const double dx = c * dir.x() + s * dir.y();
  const double dy = -s * dir.x() + c * dir.y();
  const double dz = dir.z();

  const double half[3] = {box.length / 2.0, box.width / 2.0, z_height / 2.0};
  const double o[3] = {ox, oy, oz};
  const double d[3] = {dx, dy, dz};
  double tmin = 0.0, tmax = 1e30;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (std::abs(o[a]) > half[a]) return -1.0;
      continue;
    }
    double t0 = (-half[a] - o[a]) / d[a];
    double t1 = (half[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return -1.0;
  }
  return tmin > 0.0 ? tmin : -1.0;
}

}  // namespace detail

/// Cast one ray per RV cell from `ego_pose` and return the nearest surface
/// hits (actor faces or the ground plane) as a sweep in the sensor frame.
inline Sweep raycast_lidar(const std::vector<Actor>& actors, const std::vector<OrientedBox>& boxes,
                           const Pose& ego_pose, const SceneConfig& cfg, int index) {
  MVF_CHECK_ARG(boxes.size() == actors.size(), "raycast needs one box per actor");
  Sweep sweep;
  sweep.pose = ego_pose;
  sweep.index = index;
  const Eigen::Vector3d origin_world = ego_pose.apply(Eigen::Vector3d::Zero());
  for (int row = 0; row < cfg.rv.rows; ++row) {
    for (int col = 0; col < cfg.rv.cols; ++col) {
      const SphericalCoord dir_angles = rv_cell_center(RVCell{row, col}, cfg.rv);
      const Point3 unit = from_spherical(SphericalCoord{1.0, dir_angles.azimuth,
                                                        dir_angles.elevation});
      const Eigen::Vector3d dir_world = ego_pose.rotation() * unit.xyz();

      double best = cfg.max_range;
      double remission = 0.0;
      bool hit = false;
      for (std::size_t a = 0; a < actors.size(); ++a) {
        const double t = detail::ray_box_entry(origin_world, dir_world, boxes[a],
                                               actors[a].z_center, actors[a].z_height);
        if (t > 0.0 && t < best) {
          best = t;
          remission = class_remission(actors[a].cls, cfg);
          hit = true;
        }
      }
      if (dir_world.z() < -1e-9) {
        const double t = -origin_world.z() / dir_world.z();
        if (t > 0.0 && t < best) {
          best = t;
          remission = cfg.remission_ground;
          hit = true;
        }
      }
      if (!hit) continue;
      const Eigen::Vector3d hit_world = origin_world + best * dir_world;
      const Eigen::Vector3d hit_sensor = ego_pose.inverse().apply(hit_world);
      sweep.points.push_back(Point3{hit_sensor.x(), hit_sensor.y(), hit_sensor.z(), remission});
    }
  }
  return sweep;
}

namespace detail {

inline Actor spawn_actor(ActorClass cls, double road_yaw, Rng& rng, const SceneConfig& cfg) {
  Actor a;
  a.cls = cls;
  const double lane_dir = rng.uniform() < 0.5 ? road_yaw : wrap_angle(road_yaw + kPi);
  switch (cls) {
    case ActorClass::vehicle: {
      a.box.length = rng.uniform(4.2, 5.0);
      a.box.width = rng.uniform(1.8, 2.1);
      a.z_height = rng.uniform(1.5, 1.8);
      a.box.yaw = wrap_angle(lane_dir + rng.uniform(-0.05, 0.05));
      const double u = rng.uniform();
      if (u < 0.2) {
        a.motion = MotionModel::stationary;
      } else if (u < 0.55) {
        a.motion = MotionModel::constant_velocity;
        a.speed = rng.uniform(5.0, 12.0);
      } else {
        a.motion = MotionModel::constant_turn;
        a.speed = rng.uniform(5.0, 12.0);
        const double mag = rng.uniform(0.2, 0.6);
        a.turn_rate = rng.uniform() < 0.5 ? mag : -mag;
      }
      break;
    }
    case ActorClass::pedestrian: {
      a.box.length = rng.uniform(0.5, 0.8);
      a.box.width = rng.uniform(0.5, 0.8);
      a.z_height = rng.uniform(1.6, 1.9);
      a.box.yaw = rng.uniform(-kPi, kPi);
      if (rng.uniform() < 0.3) {
        a.motion = MotionModel::stationary;
      } else {
        a.motion = MotionModel::constant_velocity;
        a.speed = rng.uniform(0.5, 2.0);
      }
      break;
    }
    case ActorClass::bike: {
      a.box.length = rng.uniform(1.6, 2.0);
      a.box.width = rng.uniform(0.6, 0.8);
      a.z_height = rng.uniform(1.4, 1.7);
      a.box.yaw = wrap_angle(lane_dir + rng.uniform(-0.2, 0.2));
      const double u = rng.uniform();
      if (u < 0.2) {
        a.motion = MotionModel::stationary;
      } else if (u < 0.7) {
        a.motion = MotionModel::constant_velocity;
        a.speed = rng.uniform(3.0, 7.0);
      } else {
        a.motion = MotionModel::constant_turn;
        a.speed = rng.uniform(3.0, 7.0);
        const double mag = rng.uniform(0.2, 0.5);
        a.turn_rate = rng.uniform() < 0.5 ? mag : -mag;
      }
      break;
    }
  }
  a.z_center = a.z_height / 2.0;
  return a;
}

}  // namespace detail

/// Deterministic synthetic scene: a straight two-lane road through the
/// origin, a moving ego, and a mix of stationary / straight / turning
/// actors. Ground truth follows each actor's motion model exactly.
inline LabeledFrame simulate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  LabeledFrame frame;
  frame.k_history = cfg.k_history;
  frame.t_horizon = cfg.t_horizon;
  frame.sweep_hz = cfg.sweep_hz;
  frame.waypoint_hz = cfg.waypoint_hz;

  const double road_yaw = rng.uniform(-kPi, kPi);
  const double ego_speed = rng.uniform(0.0, cfg.ego_speed_max);

  // Actors, rejection-sampled so footprints stay separated and inside the
  // spawn disc. Everything is placed in the world frame; the ego's reference
  // pose sits at the origin with the road's heading.
  std::vector<Actor> actors;
  auto try_place = [&](ActorClass cls, double min_sep) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      Actor a = detail::spawn_actor(cls, road_yaw, rng, cfg);
      const double along = rng.uniform(-cfg.spawn_radius, cfg.spawn_radius);
      double lateral;
      if (cls == ActorClass::vehicle) {
        lateral = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.0, 3.0);
      } else {
        const double edge = cfg.road_half_width + rng.uniform(0.5, 6.0);
        lateral = (rng.uniform() < 0.5 ? -1.0 : 1.0) * edge;
      }
      a.box.cx = along * std::cos(road_yaw) - lateral * std::sin(road_yaw);
      a.box.cy = along * std::sin(road_yaw) + lateral * std::cos(road_yaw);
      if (std::hypot(a.box.cx, a.box.cy) < cfg.ego_clearance) continue;
      if (std::hypot(a.box.cx, a.box.cy) > cfg.spawn_radius) continue;
      bool clear = true;
      for (const auto& other : actors) {
        const double d = std::hypot(a.box.cx - other.box.cx, a.box.cy - other.box.cy);
        if (d < min_sep) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      actors.push_back(a);
      return;
    }
  };

  const int n_veh =
      cfg.min_vehicles + static_cast<int>(rng.uniform_index(cfg.max_vehicles - cfg.min_vehicles + 1));
  const int n_ped = cfg.min_pedestrians +
                    static_cast<int>(rng.uniform_index(cfg.max_pedestrians - cfg.min_pedestrians + 1));
  const int n_bike =
      cfg.min_bikes + static_cast<int>(rng.uniform_index(cfg.max_bikes - cfg.min_bikes + 1));
  for (int i = 0; i < n_veh; ++i) try_place(ActorClass::vehicle, 7.0);
  for (int i = 0; i < n_ped; ++i) try_place(ActorClass::pedestrian, 2.0);
  for (int i = 0; i < n_bike; ++i) try_place(ActorClass::bike, 3.0);

  // Sweeps k = -K..0. The ego drives along the road axis and reaches the
  // origin exactly at the reference time. The sensor frame origin sits at
  // emitter height so that re-projecting a sweep reproduces the cast rays.
  for (int k = -cfg.k_history; k <= 0; ++k) {
    const double t = static_cast<double>(k) / cfg.sweep_hz;
    const double along = ego_speed * t;
    const Pose ego = Pose::from_xy_yaw(along * std::cos(road_yaw), along * std::sin(road_yaw),
                                       road_yaw, static_cast<std::int64_t>(t * 1e6),
                                       cfg.sensor_height);
    std::vector<OrientedBox> boxes;
    boxes.reserve(actors.size());
    for (const auto& a : actors) boxes.push_back(a.box_at(t));
    frame.sweeps.push_back(raycast_lidar(actors, boxes, ego, cfg, k));
  }

  // Ground truth in the reference sensor frame.
  const Pose ref = frame.sweeps.back().pose;
  const Pose ref_inv = ref.inverse();
  for (const auto& a : actors) {
    LabeledActor la;
    la.cls = a.cls;
    const Eigen::Vector3d c = ref_inv.apply(Eigen::Vector3d(a.box.cx, a.box.cy, 0.0));
    la.box = OrientedBox{c.x(), c.y(), a.box.length, a.box.width,
                         wrap_angle(a.box.yaw - road_yaw)};
    la.in_roi = bev_cell_of(la.box.cx, la.box.cy, cfg.bev).has_value();
    for (int t = 1; t <= cfg.t_horizon; ++t) {
      const OrientedBox b = a.box_at(static_cast<double>(t) / cfg.waypoint_hz);
      const Eigen::Vector3d w = ref_inv.apply(Eigen::Vector3d(b.cx, b.cy, 0.0));
      la.waypoints.push_back({w.x(), w.y()});
    }
    for (int k = -cfg.k_history; k < 0; ++k) {
      const OrientedBox b = a.box_at(static_cast<double>(k) / cfg.sweep_hz);
      const Eigen::Vector3d p = ref_inv.apply(Eigen::Vector3d(b.cx, b.cy, 0.0));
      la.past.push_back({p.x(), p.y()});
    }
    frame.actors.push_back(std::move(la));
  }

  // Map raster on the input BEV grid, reference frame. The road is a band
  // around the road axis; the center line forms the marking channel.
  frame.map.spec = cfg.bev;
  const int n = cfg.bev.cells_per_axis();
  frame.map.drivable.assign(static_cast<std::size_t>(n) * n, 0);
  frame.map.markings.assign(static_cast<std::size_t>(n) * n, 0);
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      double x = 0.0, y = 0.0;
      bev_cell_center(BEVCell{ix, iy}, cfg.bev, x, y);
      const Eigen::Vector3d world = ref.apply(Eigen::Vector3d(x, y, 0.0));
      // Signed distance from the road axis (a line through the origin).
      const double lateral =
          -world.x() * std::sin(road_yaw) + world.y() * std::cos(road_yaw);
      const std::size_t idx = static_cast<std::size_t>(iy) * n + ix;
      if (std::abs(lateral) <= cfg.road_half_width) frame.map.drivable[idx] = 1;
      if (std::abs(lateral) <= cfg.bev.resolution / 2.0) frame.map.markings[idx] = 1;
    }
  }
  return frame;
}

struct AugmentConfig {
  double max_rotation = 45.0 * kPi / 180.0;
  double max_xy = 1.0;
  double max_z = 0.2;
};

/// Rigid scene augmentation about the reference sensor: the reference frame
/// stays put while the world content (reference returns, past ego poses,
/// labels, map) moves by a yaw rotation plus a small translation.
inline LabeledFrame augment_frame(const LabeledFrame& frame, Rng& rng,
                                  const AugmentConfig& cfg = {}) {
  const double psi = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  const double tx = rng.uniform(-cfg.max_xy, cfg.max_xy);
  const double ty = rng.uniform(-cfg.max_xy, cfg.max_xy);
  const double tz = rng.uniform(-cfg.max_z, cfg.max_z);
  const Pose a = Pose::from_xy_yaw(tx, ty, psi, 0, tz);

  LabeledFrame out = frame;
  MVF_CHECK_ARG(!out.sweeps.empty(), "augment_frame on empty sweep list");

  // Reference sweep: points move within the (fixed) reference frame.
  Sweep& ref_sweep = out.sweeps.back();
  for (auto& p : ref_sweep.points) p = a.apply(p);

  // Past sweeps keep their points; their poses are re-expressed so that
  // reference-frame coordinates of every point pick up the same transform.
  const Pose ref = frame.sweeps.back().pose;
  const Pose left = ref.compose(a).compose(ref.inverse());
  for (std::size_t i = 0; i + 1 < out.sweeps.size(); ++i) {
    const std::int64_t ts = out.sweeps[i].pose.timestamp_us();
    out.sweeps[i].pose = left.compose(out.sweeps[i].pose);
    out.sweeps[i].pose.set_timestamp_us(ts);
  }

  const double c = std::cos(psi), s = std::sin(psi);
  auto map_xy = [&](double x, double y) -> std::array<double, 2> {
    return {c * x - s * y + tx, s * x + c * y + ty};
  };
  for (auto& actor : out.actors) {
    const auto m = map_xy(actor.box.cx, actor.box.cy);
    actor.box.cx = m[0];
    actor.box.cy = m[1];
    actor.box.yaw = wrap_angle(actor.box.yaw + psi);
    actor.in_roi = bev_cell_of(actor.box.cx, actor.box.cy, frame.map.spec).has_value();
    for (auto& w : actor.waypoints) w = map_xy(w[0], w[1]);
    for (auto& p : actor.past) p = map_xy(p[0], p[1]);
  }

  // Nearest-neighbor resample of the map raster through the inverse map.
  const int n = frame.map.spec.cells_per_axis();
  out.map.drivable.assign(static_cast<std::size_t>(n) * n, 0);
  out.map.markings.assign(static_cast<std::size_t>(n) * n, 0);
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      double x = 0.0, y = 0.0;
      bev_cell_center(BEVCell{ix, iy}, frame.map.spec, x, y);
      const double sx = c * (x - tx) + s * (y - ty);
      const double sy = -s * (x - tx) + c * (y - ty);
      const auto src = bev_cell_of(sx, sy, frame.map.spec);
      if (!src.has_value()) continue;
      const std::size_t from = static_cast<std::size_t>(src->iy) * n + src->ix;
      const std::size_t to = static_cast<std::size_t>(iy) * n + ix;
      out.map.drivable[to] = frame.map.drivable[from];
      out.map.markings[to] = frame.map.markings[from];
    }
  }
  return out;
}

}  // namespace mvf
