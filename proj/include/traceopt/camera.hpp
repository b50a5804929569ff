#pragma once

#include <cmath>
#include <cstddef>
#include <variant>

#include <Eigen/Core>

#include "traceopt/errors.hpp"
#include "traceopt/lie.hpp"

namespace traceopt {

using Vec2 = Eigen::Vector2d;

/// Pixel-focal pinhole camera with principal point.
struct PinholeIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
};

/// BAL-convention camera: single focal length, two radial coefficients,
/// projection along the negative z axis.
struct BalIntrinsics {
  double f = 0, k1 = 0, k2 = 0;
};

using CameraIntrinsics = std::variant<PinholeIntrinsics, BalIntrinsics>;

inline constexpr double kPinholeDepthEps = 1e-9;
inline constexpr double kBalDepthEps = 1e-12;

/// Projects a camera-frame point; the point must be in front of the camera.
inline Vec2 pinhole_project_cam(const Vec3& p, const PinholeIntrinsics& k,
                                std::size_t observation = 0) {
  if (!(p.z() > kPinholeDepthEps))
    throw CheiralityError("pinhole projection: point behind camera", observation);
  return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
}

inline Eigen::Matrix<double, 2, 3> pinhole_project_cam_jacobian(const Vec3& p,
                                                                const PinholeIntrinsics& k) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> d;
  d << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
  return d;
}

/// BAL camera on a camera-frame point: q = -(x/z, y/z), radial distortion
/// d = 1 + k1 |q|^2 + k2 |q|^4, pixel = f d q.
inline Vec2 bal_project_cam(const Vec3& p, const BalIntrinsics& k, std::size_t observation = 0) {
  if (!(std::abs(p.z()) > kBalDepthEps))
    throw CheiralityError("bal projection: point on camera plane", observation);
  const Vec2 q(-p.x() / p.z(), -p.y() / p.z());
  const double s = q.squaredNorm();
  const double d = 1.0 + s * (k.k1 + s * k.k2);
  return k.f * d * q;
}

inline Eigen::Matrix<double, 2, 3> bal_project_cam_jacobian(const Vec3& p,
                                                            const BalIntrinsics& k) {
  const double iz = 1.0 / p.z();
  const Vec2 q(-p.x() * iz, -p.y() * iz);
  const double s = q.squaredNorm();
  const double d = 1.0 + s * (k.k1 + s * k.k2);
  const double dd_ds = k.k1 + 2.0 * k.k2 * s;

  Eigen::Matrix<double, 2, 3> dq;
  dq << -iz, 0.0, p.x() * iz * iz, 0.0, -iz, p.y() * iz * iz;
  const Eigen::RowVector3d ds = 2.0 * q.transpose() * dq;
  return k.f * (d * dq + q * (dd_ds * ds));
}

/// Full projections through a pose (world point to pixel).
inline Vec2 pinhole_project(const PoseSE3& pose, const Vec3& point, const PinholeIntrinsics& k,
                            std::size_t observation = 0) {
  return pinhole_project_cam(se3_act(pose, point), k, observation);
}

inline Vec2 bal_project(const PoseSE3& pose, const Vec3& point, const BalIntrinsics& k,
                        std::size_t observation = 0) {
  return bal_project_cam(se3_act(pose, point), k, observation);
}

}  // namespace traceopt
