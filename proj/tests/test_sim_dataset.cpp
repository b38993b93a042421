#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mvfuse/box.hpp"
#include "mvfuse/dataset.hpp"
#include "mvfuse/sim.hpp"

using namespace mvf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("mvfuse_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

template <class Fn>
Errc thrown_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error to be thrown");
  return Errc::invalid_argument;
}

Sweep tiny_sweep() {
  Sweep s;
  s.pose = Pose::from_xy_yaw(1.5, -2.0, 0.3, -400000, 1.8);
  s.index = -2;
  s.points = {Point3{1.0, 2.0, 3.0, 0.5}, Point3{-4.25, 0.125, -0.5, 0.8},
              Point3{10.0, -7.5, 2.25, 0.3}};
  return s;
}

}  // namespace

TEST_CASE("oriented box corners and membership") {
  OrientedBox b{1.0, 2.0, 4.0, 2.0, kPi / 2.0};
  const auto corners = box_corners(b);
  // Rotated 90 degrees: the length axis now points along +y.
  REQUIRE_THAT(corners[0][0], Catch::Matchers::WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(corners[0][1], Catch::Matchers::WithinAbs(4.0, 1e-12));
  double shoelace = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& p = corners[i];
    const auto& q = corners[(i + 1) % 4];
    shoelace += p[0] * q[1] - q[0] * p[1];
  }
  REQUIRE_THAT(shoelace / 2.0, Catch::Matchers::WithinAbs(b.area(), 1e-12));  // CCW order

  REQUIRE(point_in_box(1.0, 3.9, b));
  REQUIRE_FALSE(point_in_box(1.0, 4.1, b));
  REQUIRE_FALSE(point_in_box(2.1, 2.0, b));
  REQUIRE(point_in_box(2.1, 2.0, b, 0.2));
  REQUIRE_FALSE(point_in_box(1.9, 2.0, b, -0.2));  // negative slack shrinks
}

TEST_CASE("actor motion models follow their closed forms") {
  Actor a;
  a.box = OrientedBox{2.0, -1.0, 4.5, 2.0, 0.7};

  SECTION("stationary actors never move") {
    a.motion = MotionModel::stationary;
    for (double t : {-0.8, 0.0, 1.3, 3.0}) {
      const OrientedBox b = a.box_at(t);
      REQUIRE(b.cx == a.box.cx);
      REQUIRE(b.cy == a.box.cy);
      REQUIRE(b.yaw == a.box.yaw);
    }
  }

  SECTION("constant velocity moves along the heading") {
    a.motion = MotionModel::constant_velocity;
    a.speed = 3.0;
    const OrientedBox b = a.box_at(2.0);
    REQUIRE_THAT(b.cx, Catch::Matchers::WithinAbs(2.0 + 6.0 * std::cos(0.7), 1e-12));
    REQUIRE_THAT(b.cy, Catch::Matchers::WithinAbs(-1.0 + 6.0 * std::sin(0.7), 1e-12));
    REQUIRE(b.yaw == a.box.yaw);
  }

  SECTION("constant turn matches the circular arc") {
    a.box.yaw = 0.0;
    a.box.cx = 0.0;
    a.box.cy = 0.0;
    a.motion = MotionModel::constant_turn;
    a.speed = 1.0;
    a.turn_rate = 0.5;
    const OrientedBox b = a.box_at(kPi);
    REQUIRE_THAT(b.cx, Catch::Matchers::WithinAbs(2.0, 1e-12));  // (v/w) sin(w t)
    REQUIRE_THAT(b.cy, Catch::Matchers::WithinAbs(2.0, 1e-12));  // (v/w)(1 - cos(w t))
    REQUIRE_THAT(b.yaw, Catch::Matchers::WithinAbs(kPi / 2.0, 1e-12));

    // Every sample sits on a circle of radius v/|w| around the turn center.
    const double r = a.speed / std::abs(a.turn_rate);
    const double ccx = a.box.cx - r * std::sin(a.box.yaw) * (a.turn_rate > 0 ? -1.0 : 1.0);
    (void)ccx;
    const double cx0 = a.box.cx - (a.speed / a.turn_rate) * std::sin(a.box.yaw);
    const double cy0 = a.box.cy + (a.speed / a.turn_rate) * std::cos(a.box.yaw);
    for (double t : {0.2, 0.9, 1.7, 2.6, 4.0}) {
      const OrientedBox bt = a.box_at(t);
      const double dist = std::hypot(bt.cx - cx0, bt.cy - cy0);
      REQUIRE_THAT(dist, Catch::Matchers::WithinAbs(r, 1e-9));
    }
  }
}

TEST_CASE("raycast hits an axis-aligned wall at the analytic distance") {
  SceneConfig cfg;
  cfg.max_range = 100.0;

  Actor wall;
  wall.cls = ActorClass::vehicle;
  wall.box = OrientedBox{50.5, 0.0, 1.0, 200.0, 0.0};  // entry plane x = 50
  wall.z_center = 0.0;
  wall.z_height = 200.0;
  wall.motion = MotionModel::stationary;

  const Pose ego = Pose::from_xy_yaw(0.0, 0.0, 0.0, 0, cfg.sensor_height);
  const Sweep sweep = raycast_lidar({wall}, {wall.box}, ego, cfg, 0);

  int wall_hits = 0;
  for (const auto& p : sweep.points) {
    if (p.remission == cfg.remission_vehicle) {
      ++wall_hits;
      REQUIRE_THAT(p.x, Catch::Matchers::WithinAbs(50.0, 1e-9));
    } else {
      REQUIRE(p.remission == cfg.remission_ground);
      REQUIRE_THAT(p.z, Catch::Matchers::WithinAbs(-cfg.sensor_height, 1e-9));
    }
  }
  REQUIRE(wall_hits > 100);

  // Each stored point re-projects into the cell whose ray produced it.
  for (const auto& p : sweep.points) {
    const SphericalCoord sph = to_spherical(p);
    const auto cell = rv_cell_of(sph, cfg.rv);
    REQUIRE(cell.has_value());
    const SphericalCoord center = rv_cell_center(*cell, cfg.rv);
    REQUIRE_THAT(sph.azimuth, Catch::Matchers::WithinAbs(center.azimuth, 1e-9));
    REQUIRE_THAT(sph.elevation, Catch::Matchers::WithinAbs(center.elevation, 1e-9));
  }
}

TEST_CASE("raycast keeps the nearest of two occluding surfaces") {
  SceneConfig cfg;
  cfg.max_range = 100.0;

  Actor near = Actor{};
  near.cls = ActorClass::pedestrian;
  near.box = OrientedBox{10.5, 0.0, 1.0, 200.0, 0.0};
  near.z_center = 0.0;
  near.z_height = 200.0;
  Actor far = near;
  far.cls = ActorClass::vehicle;
  far.box.cx = 50.5;

  const Pose ego = Pose::from_xy_yaw(0.0, 0.0, 0.0, 0, cfg.sensor_height);
  const Sweep sweep = raycast_lidar({near, far}, {near.box, far.box}, ego, cfg, 0);

  int near_hits = 0;
  for (const auto& p : sweep.points) {
    REQUIRE(p.remission != cfg.remission_vehicle);  // far wall fully occluded
    if (p.remission == cfg.remission_pedestrian) {
      ++near_hits;
      REQUIRE_THAT(p.x, Catch::Matchers::WithinAbs(10.0, 1e-9));
    }
  }
  REQUIRE(near_hits > 100);
}

TEST_CASE("empty scene returns ground rings only where range allows") {
  SceneConfig cfg;
  cfg.max_range = 100.0;
  const Pose ego = Pose::from_xy_yaw(0.0, 0.0, 0.0, 0, cfg.sensor_height);
  const Sweep sweep = raycast_lidar({}, {}, ego, cfg, 0);

  std::map<int, int> hits_per_row;
  for (const auto& p : sweep.points) {
    REQUIRE_THAT(p.z, Catch::Matchers::WithinAbs(-cfg.sensor_height, 1e-9));
    const auto cell = rv_cell_of(to_spherical(p), cfg.rv);
    REQUIRE(cell.has_value());
    hits_per_row[cell->row]++;
  }
  for (int row = 0; row < cfg.rv.rows; ++row) {
    const double elev = rv_cell_center(RVCell{row, 0}, cfg.rv).elevation;
    const bool reachable = elev < 0.0 && cfg.sensor_height / -std::sin(elev) <= cfg.max_range;
    REQUIRE(hits_per_row[row] == (reachable ? cfg.rv.cols : 0));
  }
}

TEST_CASE("simulated scenes are deterministic and well formed") {
  SceneConfig cfg;
  const auto dir = fresh_dir("determinism");

  const LabeledFrame f1 = simulate_scene(7, cfg);
  const LabeledFrame f2 = simulate_scene(7, cfg);
  const LabeledFrame f3 = simulate_scene(8, cfg);
  write_frame((dir / "a.mvff").string(), f1);
  write_frame((dir / "b.mvff").string(), f2);
  write_frame((dir / "c.mvff").string(), f3);
  REQUIRE(slurp(dir / "a.mvff") == slurp(dir / "b.mvff"));
  REQUIRE(slurp(dir / "a.mvff") != slurp(dir / "c.mvff"));

  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const LabeledFrame f = simulate_scene(seed, cfg);
    REQUIRE(static_cast<int>(f.sweeps.size()) == cfg.k_history + 1);
    for (int i = 0; i < static_cast<int>(f.sweeps.size()); ++i) {
      const Sweep& s = f.sweeps[static_cast<std::size_t>(i)];
      REQUIRE(s.index == i - cfg.k_history);
      const double t = s.index / cfg.sweep_hz;
      REQUIRE(s.pose.timestamp_us() == static_cast<std::int64_t>(t * 1e6));
      REQUIRE_THAT(s.pose.translation().z(), Catch::Matchers::WithinAbs(cfg.sensor_height, 1e-12));
      REQUIRE(!s.points.empty());
      for (const auto& p : s.points) {
        REQUIRE(std::hypot(p.x, p.y, p.z) <= cfg.max_range + 1e-6);
      }
    }
    REQUIRE(f.reference().index == 0);
    REQUIRE(f.reference().pose.timestamp_us() == 0);

    const int n_actors = static_cast<int>(f.actors.size());
    REQUIRE(n_actors >= cfg.min_vehicles + cfg.min_pedestrians + cfg.min_bikes);
    REQUIRE(n_actors <= cfg.max_vehicles + cfg.max_pedestrians + cfg.max_bikes);
    int in_roi = 0;
    for (const auto& a : f.actors) {
      REQUIRE(a.waypoints.size() == static_cast<std::size_t>(cfg.t_horizon));
      REQUIRE(a.past.size() == static_cast<std::size_t>(cfg.k_history));
      REQUIRE(a.box.length > 0.0);
      REQUIRE(a.box.width > 0.0);
      const bool inside = bev_cell_of(a.box.cx, a.box.cy, cfg.bev).has_value();
      REQUIRE(a.in_roi == inside);
      in_roi += a.in_roi ? 1 : 0;
    }
    REQUIRE(in_roi >= 1);
    REQUIRE(f.map.drivable.size() == static_cast<std::size_t>(cfg.bev.cell_count()));
    int drivable_cells = 0;
    for (auto v : f.map.drivable) drivable_cells += v;
    REQUIRE(drivable_cells > 0);
  }
}

TEST_CASE("reference sweep returns land inside labeled boxes") {
  SceneConfig cfg;
  for (std::uint64_t seed : {11, 12, 13}) {
    const LabeledFrame f = simulate_scene(seed, cfg);
    int actor_hits = 0;
    for (const auto& p : f.reference().points) {
      if (p.remission == cfg.remission_ground) continue;
      bool inside = false;
      for (const auto& a : f.actors) {
        if (point_in_box(p.x, p.y, a.box, 1e-6)) {
          inside = true;
          break;
        }
      }
      REQUIRE(inside);
      ++actor_hits;
    }
    REQUIRE(actor_hits > 0);
  }
}

TEST_CASE("zero-amplitude augmentation is the identity") {
  SceneConfig cfg;
  const LabeledFrame f = simulate_scene(21, cfg);
  Rng rng(99);
  AugmentConfig zero;
  zero.max_rotation = 0.0;
  zero.max_xy = 0.0;
  zero.max_z = 0.0;
  const LabeledFrame g = augment_frame(f, rng, zero);

  REQUIRE(g.sweeps.size() == f.sweeps.size());
  for (std::size_t i = 0; i < f.sweeps.size(); ++i) {
    REQUIRE(g.sweeps[i].points.size() == f.sweeps[i].points.size());
    REQUIRE(g.sweeps[i].pose.timestamp_us() == f.sweeps[i].pose.timestamp_us());
    REQUIRE((g.sweeps[i].pose.rotation() - f.sweeps[i].pose.rotation()).norm() < 1e-9);
    REQUIRE((g.sweeps[i].pose.translation() - f.sweeps[i].pose.translation()).norm() < 1e-9);
    for (std::size_t j = 0; j < f.sweeps[i].points.size(); ++j) {
      REQUIRE_THAT(g.sweeps[i].points[j].x,
                   Catch::Matchers::WithinAbs(f.sweeps[i].points[j].x, 1e-12));
      REQUIRE_THAT(g.sweeps[i].points[j].y,
                   Catch::Matchers::WithinAbs(f.sweeps[i].points[j].y, 1e-12));
      REQUIRE_THAT(g.sweeps[i].points[j].z,
                   Catch::Matchers::WithinAbs(f.sweeps[i].points[j].z, 1e-12));
      REQUIRE(g.sweeps[i].points[j].remission == f.sweeps[i].points[j].remission);
    }
  }
  for (std::size_t i = 0; i < f.actors.size(); ++i) {
    REQUIRE_THAT(g.actors[i].box.cx, Catch::Matchers::WithinAbs(f.actors[i].box.cx, 1e-12));
    REQUIRE_THAT(g.actors[i].box.cy, Catch::Matchers::WithinAbs(f.actors[i].box.cy, 1e-12));
    REQUIRE_THAT(g.actors[i].box.yaw, Catch::Matchers::WithinAbs(f.actors[i].box.yaw, 1e-12));
    REQUIRE(g.actors[i].in_roi == f.actors[i].in_roi);
  }
  REQUIRE(g.map.drivable == f.map.drivable);
  REQUIRE(g.map.markings == f.map.markings);
}

TEST_CASE("augmentation moves labels, points, and relative poses together") {
  SceneConfig cfg;
  const LabeledFrame f = simulate_scene(33, cfg);
  Rng rng(5);
  const LabeledFrame g = augment_frame(f, rng);

  // Recover the applied rigid transform from the first past pose.
  const Pose ref = f.reference().pose;
  REQUIRE((g.reference().pose.rotation() - ref.rotation()).norm() < 1e-12);
  const Pose rel_before = relative_pose(f.sweeps[0].pose, ref);
  const Pose rel_after = relative_pose(g.sweeps[0].pose, g.reference().pose);
  const Pose a = rel_after.compose(rel_before.inverse());

  const double psi = std::atan2(a.rotation()(1, 0), a.rotation()(0, 0));
  REQUIRE(std::abs(psi) <= 45.0 * kPi / 180.0 + 1e-9);
  REQUIRE(std::abs(a.translation().x()) <= 1.0 + 1e-6);
  REQUIRE(std::abs(a.translation().z()) <= 0.2 + 1e-6);

  // Every other past sweep picks up the same left factor.
  for (std::size_t i = 0; i + 1 < f.sweeps.size(); ++i) {
    const Pose rb = relative_pose(f.sweeps[i].pose, ref);
    const Pose ra = relative_pose(g.sweeps[i].pose, ref);
    const Pose expect = a.compose(rb);
    REQUIRE((ra.rotation() - expect.rotation()).norm() < 1e-9);
    REQUIRE((ra.translation() - expect.translation()).norm() < 1e-9);
    REQUIRE(g.sweeps[i].pose.timestamp_us() == f.sweeps[i].pose.timestamp_us());
  }

  // Reference points and labels transform by the same map.
  for (std::size_t j = 0; j < f.reference().points.size(); ++j) {
    const Point3 & p = f.reference().points[j];
    const Eigen::Vector3d moved = a.apply(p.xyz());
    REQUIRE_THAT(g.reference().points[j].x, Catch::Matchers::WithinAbs(moved.x(), 1e-9));
    REQUIRE_THAT(g.reference().points[j].y, Catch::Matchers::WithinAbs(moved.y(), 1e-9));
    REQUIRE_THAT(g.reference().points[j].z, Catch::Matchers::WithinAbs(moved.z(), 1e-9));
  }
  const double c = a.rotation()(0, 0), s = a.rotation()(1, 0);
  for (std::size_t i = 0; i < f.actors.size(); ++i) {
    const auto& before = f.actors[i];
    const auto& after = g.actors[i];
    const double ex = c * before.box.cx - s * before.box.cy + a.translation().x();
    const double ey = s * before.box.cx + c * before.box.cy + a.translation().y();
    REQUIRE_THAT(after.box.cx, Catch::Matchers::WithinAbs(ex, 1e-9));
    REQUIRE_THAT(after.box.cy, Catch::Matchers::WithinAbs(ey, 1e-9));
    REQUIRE_THAT(wrap_angle(after.box.yaw - before.box.yaw),
                 Catch::Matchers::WithinAbs(psi, 1e-9));
    REQUIRE(after.box.length == before.box.length);
    REQUIRE(after.waypoints.size() == before.waypoints.size());
    for (std::size_t t = 0; t < before.waypoints.size(); ++t) {
      const double wx = c * before.waypoints[t][0] - s * before.waypoints[t][1] +
                        a.translation().x();
      REQUIRE_THAT(after.waypoints[t][0], Catch::Matchers::WithinAbs(wx, 1e-9));
    }
  }

  // Box membership survives the shared rigid motion (hits sit exactly on box
  // faces, so allow a hair of slack on both sides).
  int preserved = 0;
  for (const auto& p : f.reference().points) {
    if (p.remission == cfg.remission_ground) continue;
    for (std::size_t i = 0; i < f.actors.size(); ++i) {
      if (!point_in_box(p.x, p.y, f.actors[i].box, 1e-6)) continue;
      const Eigen::Vector3d moved = a.apply(p.xyz());
      REQUIRE(point_in_box(moved.x(), moved.y(), g.actors[i].box, 1e-5));
      ++preserved;
    }
  }
  REQUIRE(preserved > 0);
  int drivable_cells = 0;
  for (auto v : g.map.drivable) drivable_cells += v;
  REQUIRE(drivable_cells > 0);
}

TEST_CASE("sweep files round-trip exactly") {
  const auto dir = fresh_dir("sweep_io");
  const Sweep s = tiny_sweep();
  const fs::path path = dir / "sweep.mvfs";
  write_sweep_file(path.string(), s);

  const Sweep r = read_sweep_file(path.string());
  REQUIRE(r.points.size() == s.points.size());
  REQUIRE(r.pose.timestamp_us() == s.pose.timestamp_us());
  REQUIRE((r.pose.rotation() - s.pose.rotation()).norm() == 0.0);
  REQUIRE((r.pose.translation() - s.pose.translation()).norm() == 0.0);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    REQUIRE(r.points[i].x == static_cast<float>(s.points[i].x));
    REQUIRE(r.points[i].y == static_cast<float>(s.points[i].y));
    REQUIRE(r.points[i].z == static_cast<float>(s.points[i].z));
    REQUIRE(r.points[i].remission == static_cast<float>(s.points[i].remission));
  }
}

TEST_CASE("sweep reader rejects corrupt input with precise errors") {
  const auto dir = fresh_dir("sweep_errors");
  const fs::path good = dir / "good.mvfs";
  write_sweep_file(good.string(), tiny_sweep());
  const std::vector<char> bytes = slurp(good);

  SECTION("wrong magic is a format error") {
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    spit(dir / "magic.mvfs", bad);
    REQUIRE(thrown_code([&] { read_sweep_file((dir / "magic.mvfs").string()); }) ==
            Errc::data_format);
  }
  SECTION("unknown version is a version error") {
    std::vector<char> bad = bytes;
    bad[4] = 9;  // little-endian u32 version field
    spit(dir / "version.mvfs", bad);
    REQUIRE(thrown_code([&] { read_sweep_file((dir / "version.mvfs").string()); }) ==
            Errc::data_version);
  }
  SECTION("short file is a truncation error") {
    std::vector<char> bad(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() - 5));
    spit(dir / "short.mvfs", bad);
    REQUIRE(thrown_code([&] { read_sweep_file((dir / "short.mvfs").string()); }) ==
            Errc::data_truncated);
  }
  SECTION("missing file is an io error") {
    REQUIRE(thrown_code([&] { read_sweep_file((dir / "absent.mvfs").string()); }) ==
            Errc::io_error);
  }
}

TEST_CASE("frame files round-trip byte for byte") {
  const auto dir = fresh_dir("frame_io");
  SceneConfig cfg;
  const LabeledFrame f = simulate_scene(42, cfg);
  const fs::path first = dir / "first.mvff";
  write_frame(first.string(), f);
  const LabeledFrame r = read_frame(first.string());
  REQUIRE(r.sweeps.size() == f.sweeps.size());
  REQUIRE(r.actors.size() == f.actors.size());
  REQUIRE(r.k_history == f.k_history);
  REQUIRE(r.t_horizon == f.t_horizon);
  const fs::path second = dir / "second.mvff";
  write_frame(second.string(), r);
  REQUIRE(slurp(first) == slurp(second));

  SECTION("frame reader rejects a sweep-magic payload") {
    write_sweep_file((dir / "sweep.mvfs").string(), tiny_sweep());
    REQUIRE(thrown_code([&] { read_frame((dir / "sweep.mvfs").string()); }) == Errc::data_format);
  }
  SECTION("frame version gate") {
    std::vector<char> bad = slurp(first);
    bad[4] = 3;
    spit(dir / "vers.mvff", bad);
    REQUIRE(thrown_code([&] { read_frame((dir / "vers.mvff").string()); }) == Errc::data_version);
  }
  SECTION("truncated frame") {
    const std::vector<char> bytes = slurp(first);
    std::vector<char> bad(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
    spit(dir / "trunc.mvff", bad);
    REQUIRE(thrown_code([&] { read_frame((dir / "trunc.mvff").string()); }) ==
            Errc::data_truncated);
  }
}

TEST_CASE("dataset generation writes a loadable manifest") {
  const auto dir = fresh_dir("dataset");
  SceneConfig cfg;
  const std::string manifest = generate_dataset(dir.string(), 3, 100, cfg);

  const auto entries = read_manifest(manifest);
  REQUIRE(entries.size() == 3);
  REQUIRE(entries[0].path == "frame_00000.mvff");
  REQUIRE(entries[0].k_history == cfg.k_history);
  REQUIRE(entries[0].t_horizon == cfg.t_horizon);
  REQUIRE(entries[0].classes == std::vector<std::string>{"vehicle", "pedestrian", "bike"});

  Dataset ds(manifest);
  REQUIRE(ds.size() == 3);
  const LabeledFrame direct = simulate_scene(101, cfg);
  const LabeledFrame loaded = ds.load(1);
  const fs::path cmp_a = dir / "cmp_a.bin";
  const fs::path cmp_b = dir / "cmp_b.bin";
  write_frame(cmp_a.string(), direct);
  write_frame(cmp_b.string(), loaded);
  REQUIRE(slurp(cmp_a) == slurp(cmp_b));

  SECTION("manifest parser flags bad lines") {
    std::ofstream out(dir / "broken.jsonl");
    out << "{\"frame\": \"frame_00000.mvff\", \"k\": 4, \"t\": 15, \"classes\": []}\n";
    out << "this is not json\n";
    out.close();
    REQUIRE(thrown_code([&] { read_manifest((dir / "broken.jsonl").string()); }) ==
            Errc::data_format);
  }
  SECTION("empty manifest is rejected by the dataset") {
    std::ofstream out(dir / "empty.jsonl");
    out.close();
    REQUIRE(thrown_code([&] { Dataset ds2((dir / "empty.jsonl").string()); }) ==
            Errc::empty_input);
  }
}
