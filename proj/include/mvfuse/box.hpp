#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mvfuse/geometry.hpp"

namespace mvf {

/// Planar oriented box. `length` runs along the heading (yaw) axis, `width`
/// across it; yaw is measured in the frame the box is expressed in.
struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double length = 0.0;
  double width = 0.0;
  double yaw = 0.0;

  double area() const { return length * width; }
};

/// Corners in counter-clockwise order starting at (+length/2, +width/2) in
/// the box frame.
inline std::array<std::array<double, 2>, 4> box_corners(const OrientedBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = b.length / 2.0, hw = b.width / 2.0;
  const std::array<std::array<double, 2>, 4> local = {
      {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i][0] = b.cx + c * local[i][0] - s * local[i][1];
    out[i][1] = b.cy + s * local[i][0] + c * local[i][1];
  }
  return out;
}

inline bool point_in_box(double x, double y, const OrientedBox& b, double slack = 0.0) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = x - b.cx, dy = y - b.cy;
  const double bx = c * dx + s * dy;
  const double by = -s * dx + c * dy;
  return std::abs(bx) <= b.length / 2.0 + slack && std::abs(by) <= b.width / 2.0 + slack;
}

/// Signed area (positive for counter-clockwise winding).
inline double polygon_area(const std::vector<std::array<double, 2>>& poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    acc += p[0] * q[1] - q[0] * p[1];
  }
  return acc / 2.0;
}

namespace detail {

/// Sutherland-Hodgman clip of a convex polygon against the half-plane on the
/// left of the directed edge a -> b.
inline std::vector<std::array<double, 2>> clip_half_plane(
    const std::vector<std::array<double, 2>>& poly, const std::array<double, 2>& a,
    const std::array<double, 2>& b) {
  std::vector<std::array<double, 2>> out;
  const std::size_t n = poly.size();
  auto side = [&](const std::array<double, 2>& p) {
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cur = poly[i];
    const auto& nxt = poly[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
    }
  }
  return out;
}

}  // namespace detail

/// Intersection area of two oriented boxes by convex polygon clipping.
inline double box_intersection_area(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  std::vector<std::array<double, 2>> poly(ca.begin(), ca.end());
  for (int e = 0; e < 4 && !poly.empty(); ++e) {
    poly = detail::clip_half_plane(poly, cb[static_cast<std::size_t>(e)],
                                   cb[static_cast<std::size_t>((e + 1) % 4)]);
  }
  if (poly.size() < 3) return 0.0;
  const double area = polygon_area(poly);
  return std::min(std::max(area, 0.0), std::min(a.area(), b.area()));
}

/// Intersection-over-union of two oriented boxes.
inline double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  MVF_CHECK(a.area() > 0.0 && b.area() > 0.0, Errc::degenerate_input,
            "rotated_iou requires boxes with positive area");
  const double inter = box_intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double iou = inter / uni;
  return std::min(std::max(iou, 0.0), 1.0);
}

}  // namespace mvf
