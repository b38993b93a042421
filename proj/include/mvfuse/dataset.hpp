#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfuse/binio.hpp"
#include "mvfuse/common.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

inline constexpr char kSweepMagic[4] = {'M', 'V', 'F', 'S'};
inline constexpr std::uint32_t kSweepVersion = 1;
inline constexpr char kFrameMagic[4] = {'M', 'V', 'F', 'F'};
inline constexpr std::uint32_t kFrameVersion = 1;

/// Sweep record: magic "MVFS", u32 version, u32 point count, pose as 12
/// float64 (row-major 3x4 [R | t]), i64 timestamp in microseconds, then per
/// point 4 float32 (x, y, z, remission). Little-endian throughout.
inline void write_sweep_record(BinWriter& w, const Sweep& sweep) {
  w.bytes(kSweepMagic, 4);
  w.u32(kSweepVersion);
  w.u32(static_cast<std::uint32_t>(sweep.points.size()));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(sweep.pose.rotation()(r, c));
    w.f64(sweep.pose.translation()(r));
  }
  w.i64(sweep.pose.timestamp_us());
  for (const auto& p : sweep.points) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
    w.f32(static_cast<float>(p.remission));
  }
}

inline Sweep read_sweep_record(BinReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  MVF_CHECK(std::memcmp(magic, kSweepMagic, 4) == 0, Errc::data_format,
            "bad sweep magic in " + r.path());
  const std::uint32_t version = r.u32();
  MVF_CHECK(version == kSweepVersion, Errc::data_version,
            "unsupported sweep version " + std::to_string(version) + " in " + r.path());
  const std::uint32_t count = r.u32();
  MVF_CHECK(count <= (1u << 24), Errc::data_format, "unreasonable point count in " + r.path());
  Eigen::Matrix3d rot;
  Eigen::Vector3d trans;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) rot(row, col) = r.f64();
    trans(row) = r.f64();
  }
  const std::int64_t ts = r.i64();
  Sweep sweep;
  sweep.pose = Pose(rot, trans, ts);
  sweep.points.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Point3 p;
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.remission = r.f32();
    sweep.points.push_back(p);
  }
  return sweep;
}

inline void write_sweep_file(const std::string& path, const Sweep& sweep) {
  BinWriter w(path);
  write_sweep_record(w, sweep);
  w.close();
}

inline Sweep read_sweep_file(const std::string& path) {
  BinReader r(path);
  return read_sweep_record(r);
}

/// Frame container: magic "MVFF", u32 version, timing config, the embedded
/// sweep records (each prefixed by its index k), per-actor ground truth, and
/// the map raster.
inline void write_frame(const std::string& path, const LabeledFrame& frame) {
  BinWriter w(path);
  w.bytes(kFrameMagic, 4);
  w.u32(kFrameVersion);
  w.u32(static_cast<std::uint32_t>(frame.k_history));
  w.u32(static_cast<std::uint32_t>(frame.t_horizon));
  w.f64(frame.sweep_hz);
  w.f64(frame.waypoint_hz);
  w.u32(static_cast<std::uint32_t>(frame.sweeps.size()));
  for (const auto& s : frame.sweeps) {
    w.i32(s.index);
    write_sweep_record(w, s);
  }
  w.u32(static_cast<std::uint32_t>(frame.actors.size()));
  for (const auto& a : frame.actors) {
    w.u32(static_cast<std::uint32_t>(a.cls));
    w.u32(a.in_roi ? 1 : 0);
    w.f64(a.box.cx);
    w.f64(a.box.cy);
    w.f64(a.box.length);
    w.f64(a.box.width);
    w.f64(a.box.yaw);
    w.u32(static_cast<std::uint32_t>(a.waypoints.size()));
    for (const auto& wp : a.waypoints) {
      w.f64(wp[0]);
      w.f64(wp[1]);
    }
    w.u32(static_cast<std::uint32_t>(a.past.size()));
    for (const auto& p : a.past) {
      w.f64(p[0]);
      w.f64(p[1]);
    }
  }
  frame.map.validate();
  w.f64(frame.map.spec.length);
  w.f64(frame.map.spec.resolution);
  const int n = frame.map.spec.cells_per_axis();
  w.u32(static_cast<std::uint32_t>(n));
  w.bytes(frame.map.drivable.data(), frame.map.drivable.size());
  w.bytes(frame.map.markings.data(), frame.map.markings.size());
  w.close();
}

inline LabeledFrame read_frame(const std::string& path) {
  BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  MVF_CHECK(std::memcmp(magic, kFrameMagic, 4) == 0, Errc::data_format,
            "not a frame file: " + path);
  const std::uint32_t version = r.u32();
  MVF_CHECK(version == kFrameVersion, Errc::data_version,
            "unsupported frame version " + std::to_string(version) + " in " + path);
  LabeledFrame frame;
  frame.k_history = static_cast<int>(r.u32());
  frame.t_horizon = static_cast<int>(r.u32());
  frame.sweep_hz = r.f64();
  frame.waypoint_hz = r.f64();
  const std::uint32_t n_sweeps = r.u32();
  MVF_CHECK(n_sweeps >= 1 && n_sweeps <= 256, Errc::data_format,
            "unreasonable sweep count in " + path);
  for (std::uint32_t i = 0; i < n_sweeps; ++i) {
    const int index = r.i32();
    Sweep s = read_sweep_record(r);
    s.index = index;
    frame.sweeps.push_back(std::move(s));
  }
  const std::uint32_t n_actors = r.u32();
  MVF_CHECK(n_actors <= (1u << 16), Errc::data_format, "unreasonable actor count in " + path);
  for (std::uint32_t i = 0; i < n_actors; ++i) {
    LabeledActor a;
    const std::uint32_t cls = r.u32();
    MVF_CHECK(cls < static_cast<std::uint32_t>(kNumClasses), Errc::data_format,
              "unknown actor class in " + path);
    a.cls = static_cast<ActorClass>(cls);
    a.in_roi = r.u32() != 0;
    a.box.cx = r.f64();
    a.box.cy = r.f64();
    a.box.length = r.f64();
    a.box.width = r.f64();
    a.box.yaw = r.f64();
    const std::uint32_t n_wp = r.u32();
    MVF_CHECK(n_wp <= 4096, Errc::data_format, "unreasonable waypoint count in " + path);
    for (std::uint32_t t = 0; t < n_wp; ++t) {
      const double x = r.f64();
      const double y = r.f64();
      a.waypoints.push_back({x, y});
    }
    const std::uint32_t n_past = r.u32();
    MVF_CHECK(n_past <= 4096, Errc::data_format, "unreasonable past count in " + path);
    for (std::uint32_t t = 0; t < n_past; ++t) {
      const double x = r.f64();
      const double y = r.f64();
      a.past.push_back({x, y});
    }
    frame.actors.push_back(std::move(a));
  }
  frame.map.spec.length = r.f64();
  frame.map.spec.resolution = r.f64();
  frame.map.spec.validate();
  const std::uint32_t n = r.u32();
  MVF_CHECK(static_cast<int>(n) == frame.map.spec.cells_per_axis(), Errc::data_format,
            "map raster grid mismatch in " + path);
  frame.map.drivable.resize(static_cast<std::size_t>(n) * n);
  frame.map.markings.resize(static_cast<std::size_t>(n) * n);
  r.bytes(frame.map.drivable.data(), frame.map.drivable.size());
  r.bytes(frame.map.markings.data(), frame.map.markings.size());
  return frame;
}

// ---------------------------------------------------------------------------
// Manifest (one JSON object per line)
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int k_history = 0;
  int t_horizon = 0;
  std::vector<std::string> classes;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  MVF_CHECK(out.good(), Errc::io_error, "cannot write manifest: " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["frame"] = e.path;
    j["k"] = e.k_history;
    j["t"] = e.t_horizon;
    j["classes"] = e.classes;
    out << j.dump() << "\n";
  }
  MVF_CHECK(out.good(), Errc::io_error, "manifest write failure: " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  MVF_CHECK(in.good(), Errc::io_error, "cannot read manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    MVF_CHECK(!j.is_discarded(), Errc::data_format,
              "manifest line " + std::to_string(line_no) + " is not valid JSON: " + path);
    ManifestEntry e;
    try {
      e.path = j.at("frame").get<std::string>();
      e.k_history = j.at("k").get<int>();
      e.t_horizon = j.at("t").get<int>();
      e.classes = j.at("classes").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& ex) {
      fail(Errc::data_format,
           "manifest line " + std::to_string(line_no) + ": " + ex.what() + " (" + path + ")");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Frame collection backed by a manifest file.
class Dataset {
 public:
  explicit Dataset(const std::string& manifest_path)
      : dir_(std::filesystem::path(manifest_path).parent_path()),
        entries_(read_manifest(manifest_path)) {
    MVF_CHECK(!entries_.empty(), Errc::empty_input, "manifest lists no frames: " + manifest_path);
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }

  LabeledFrame load(std::size_t i) const {
    MVF_CHECK_ARG(i < entries_.size(), "frame index out of range");
    return read_frame((dir_ / entries_[i].path).string());
  }

 private:
  std::filesystem::path dir_;
  std::vector<ManifestEntry> entries_;
};

/// Generate `n_frames` scenes with consecutive seeds and write them plus a
/// manifest into `dir`. Returns the manifest path.
inline std::string generate_dataset(const std::string& dir, int n_frames, std::uint64_t base_seed,
                                    const SceneConfig& cfg) {
  MVF_CHECK_ARG(n_frames >= 1, "dataset needs at least one frame");
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n_frames; ++i) {
    const LabeledFrame frame = simulate_scene(base_seed + static_cast<std::uint64_t>(i), cfg);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05d.mvff", i);
    write_frame((std::filesystem::path(dir) / name).string(), frame);
    ManifestEntry e;
    e.path = name;
    e.k_history = frame.k_history;
    e.t_horizon = frame.t_horizon;
    e.classes = {"vehicle", "pedestrian", "bike"};
    entries.push_back(std::move(e));
  }
  const std::string manifest = (std::filesystem::path(dir) / "manifest.jsonl").string();
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace mvf
