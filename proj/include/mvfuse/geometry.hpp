#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "mvfuse/common.hpp"

namespace mvf {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Wrap an angle into [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

/// A LiDAR return: 3D position in some frame plus remission in [0, 1].
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double remission = 0.0;

  Eigen::Vector3d xyz() const { return {x, y, z}; }
};

struct SphericalCoord {
  double range = 0.0;      // meters, >= 0
  double azimuth = 0.0;    // radians, [-pi, pi)
  double elevation = 0.0;  // radians
};

/// Rigid transform from a sensor frame to the world frame, with capture time.
class Pose {
 public:
  Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
       std::int64_t timestamp_us = 0)
      : rotation_(rotation), translation_(translation), timestamp_us_(timestamp_us) {
    MVF_CHECK_ARG(is_orthonormal(rotation), "pose rotation must be orthonormal with det +1");
  }

  static Pose identity(std::int64_t timestamp_us = 0) {
    return Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), timestamp_us);
  }

  /// Planar pose: yaw about +z plus translation. Covers every ego/actor pose in the simulator.
  static Pose from_xy_yaw(double x, double y, double yaw, std::int64_t timestamp_us = 0,
                          double z = 0.0) {
    Eigen::Matrix3d r;
    const double c = std::cos(yaw), s = std::sin(yaw);
    r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return Pose(r, Eigen::Vector3d(x, y, z), timestamp_us);
  }

  static bool is_orthonormal(const Eigen::Matrix3d& r, double tol = 1e-9) {
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
  }

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  std::int64_t timestamp_us() const { return timestamp_us_; }
  void set_timestamp_us(std::int64_t t) { timestamp_us_ = t; }

  Pose inverse() const {
    Eigen::Matrix3d rt = rotation_.transpose();
    return Pose(rt, -(rt * translation_), timestamp_us_);
  }

  /// this ∘ other: apply `other` first, then this.
  Pose compose(const Pose& other) const {
    return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_,
                timestamp_us_);
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  Point3 apply(const Point3& p) const {
    const Eigen::Vector3d q = apply(p.xyz());
    return Point3{q.x(), q.y(), q.z(), p.remission};
  }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
  std::int64_t timestamp_us_ = 0;
};

/// Re-express a point captured in frame `from` in the coordinates of frame `to`.
inline Point3 transform_point(const Point3& p, const Pose& from, const Pose& to) {
  return to.inverse().apply(from.apply(p));
}

/// Relative transform taking `from`-frame coordinates to `to`-frame coordinates.
inline Pose relative_pose(const Pose& from, const Pose& to) {
  return to.inverse().compose(from);
}

inline SphericalCoord to_spherical(const Point3& p) {
  const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  MVF_CHECK(r > 0.0, Errc::degenerate_input, "to_spherical: zero-norm point");
  SphericalCoord s;
  s.range = r;
  s.azimuth = wrap_angle(std::atan2(p.y, p.x));
  s.elevation = std::asin(p.z / r);
  return s;
}

inline Point3 from_spherical(const SphericalCoord& s, double remission = 0.0) {
  const double ce = std::cos(s.elevation);
  return Point3{s.range * ce * std::cos(s.azimuth), s.range * ce * std::sin(s.azimuth),
                s.range * std::sin(s.elevation), remission};
}

}  // namespace mvf
