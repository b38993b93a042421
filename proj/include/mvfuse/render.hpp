#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mvfuse/box.hpp"
#include "mvfuse/heads.hpp"
#include "mvfuse/sim.hpp"

namespace mvf {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kColorGroundTruth = {0, 200, 0};
inline constexpr Rgb kColorVehicle = {230, 40, 40};
inline constexpr Rgb kColorPedestrian = {255, 150, 30};
inline constexpr Rgb kColorBike = {40, 200, 220};

inline Rgb detection_color(ActorClass cls) {
  switch (cls) {
    case ActorClass::vehicle: return kColorVehicle;
    case ActorClass::pedestrian: return kColorPedestrian;
    case ActorClass::bike: return kColorBike;
  }
  return kColorVehicle;
}

/// Top-down RGB canvas over a square ROI. +x is right, +y is up; world
/// coordinates are in the frame the grid was built in (the reference pose).
class BevCanvas {
 public:
  BevCanvas(const BEVGridSpec& grid, int pixels_per_cell = 4)
      : grid_(grid), scale_(pixels_per_cell), side_(grid.cells_per_axis() * pixels_per_cell) {
    MVF_CHECK_ARG(pixels_per_cell >= 1, "pixels_per_cell must be positive");
    pixels_.assign(static_cast<std::size_t>(side_) * side_ * 3, 0);
  }

  int side() const { return side_; }

  void fill_cell(int ix, int iy, Rgb color) {
    for (int dy = 0; dy < scale_; ++dy)
      for (int dx = 0; dx < scale_; ++dx)
        set_pixel(ix * scale_ + dx, (grid_.cells_per_axis() - 1 - iy) * scale_ + dy, color);
  }

  void draw_point(double x, double y, Rgb color) {
    int px = 0, py = 0;
    if (to_pixel(x, y, px, py)) set_pixel(px, py, color);
  }

  void draw_line(double x0, double y0, double x1, double y1, Rgb color) {
    const double steps = 2.0 * static_cast<double>(side_);
    for (double s = 0.0; s <= steps; s += 1.0) {
      const double t = s / steps;
      draw_point(x0 + t * (x1 - x0), y0 + t * (y1 - y0), color);
    }
  }

  void draw_box(const OrientedBox& box, Rgb color) {
    const auto corners = box_corners(box);
    for (int e = 0; e < 4; ++e) {
      const auto& a = corners[static_cast<std::size_t>(e)];
      const auto& b = corners[static_cast<std::size_t>((e + 1) % 4)];
      draw_line(a[0], a[1], b[0], b[1], color);
    }
    // Heading tick from the center to the front edge midpoint.
    const double fx = box.cx + 0.5 * box.length * std::cos(box.yaw);
    const double fy = box.cy + 0.5 * box.length * std::sin(box.yaw);
    draw_line(box.cx, box.cy, fx, fy, color);
  }

  void draw_trajectory(double cx, double cy, const std::vector<Waypoint>& waypoints, Rgb color) {
    double px = cx, py = cy;
    for (const Waypoint& w : waypoints) {
      draw_line(px, py, w.x, w.y, color);
      px = w.x;
      py = w.y;
    }
  }

  /// Binary P6 output; identical input produces identical bytes.
  void write_ppm(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    MVF_CHECK(out.good(), Errc::io_error, "cannot write image: " + path);
    out << "P6\n" << side_ << ' ' << side_ << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels_.data()),
              static_cast<std::streamsize>(pixels_.size()));
    MVF_CHECK(out.good(), Errc::io_error, "image write failure: " + path);
  }

  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

 private:
  bool to_pixel(double x, double y, int& px, int& py) const {
    const double half = 0.5 * grid_.length;
    if (x < -half || x >= half || y < -half || y >= half) return false;
    px = static_cast<int>((x + half) / grid_.length * side_);
    py = side_ - 1 - static_cast<int>((y + half) / grid_.length * side_);
    return px >= 0 && px < side_ && py >= 0 && py < side_;
  }

  void set_pixel(int px, int py, Rgb color) {
    if (px < 0 || px >= side_ || py < 0 || py >= side_) return;
    const std::size_t at = (static_cast<std::size_t>(py) * side_ + px) * 3;
    pixels_[at] = color[0];
    pixels_[at + 1] = color[1];
    pixels_[at + 2] = color[2];
  }

  BEVGridSpec grid_;
  int scale_ = 1;
  int side_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Scene overview: map underlay, reference-sweep returns, ground-truth boxes
/// in green, detections in their class colors with trajectory polylines.
inline void render_frame(const LabeledFrame& frame, const std::vector<Detection>& detections,
                         const std::string& out_path, int pixels_per_cell = 4) {
  frame.map.validate();
  BevCanvas canvas(frame.map.spec, pixels_per_cell);

  const int n = frame.map.spec.cells_per_axis();
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      const std::size_t at = static_cast<std::size_t>(iy) * n + ix;
      if (frame.map.markings[at] != 0) {
        canvas.fill_cell(ix, iy, {70, 70, 70});
      } else if (frame.map.drivable[at] != 0) {
        canvas.fill_cell(ix, iy, {35, 35, 35});
      }
    }
  }

  if (!frame.sweeps.empty()) {
    const Sweep& ref = frame.reference();
    for (const Point3& p : ref.points) canvas.draw_point(p.x, p.y, {160, 160, 160});
  }

  for (const LabeledActor& actor : frame.actors) {
    if (!actor.in_roi) continue;
    canvas.draw_box(actor.box, kColorGroundTruth);
  }

  for (const Detection& d : detections) {
    const Rgb color = detection_color(d.cls);
    canvas.draw_box(d.box, color);
    canvas.draw_trajectory(d.box.cx, d.box.cy, d.trajectory, color);
  }

  canvas.write_ppm(out_path);
}

/// Range-view depth panel: one pixel per cell, brighter is closer.
template <class Real>
void render_rv_depth(const RVImageT<Real>& image, const std::string& out_path,
                     double max_range = 70.0) {
  const int rows = image.spec.rows, cols = image.spec.cols;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(rows) * cols * 3, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t cell = static_cast<std::size_t>(r) * cols + c;
      if (image.point_index[cell] < 0) continue;
      const double depth = image.depth[cell];
      const double lum = std::max(0.0, 1.0 - depth / max_range);
      const std::uint8_t v = static_cast<std::uint8_t>(std::lround(40.0 + 215.0 * lum));
      pixels[cell * 3] = v;
      pixels[cell * 3 + 1] = v;
      pixels[cell * 3 + 2] = v;
    }
  }
  std::ofstream out(out_path, std::ios::binary);
  MVF_CHECK(out.good(), Errc::io_error, "cannot write image: " + out_path);
  out << "P6\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  MVF_CHECK(out.good(), Errc::io_error, "image write failure: " + out_path);
}

}  // namespace mvf
