#pragma once

#include <cmath>
#include <cstdint>

#include "traceopt/camera.hpp"
#include "traceopt/detail/rng.hpp"
#include "traceopt/io/bal.hpp"
#include "traceopt/lie.hpp"

namespace traceopt {

/// Synthetic scene plus the ground truth it was rendered from. The problem
/// carries the perturbed initial poses and the (possibly noisy) pixels, like
/// a dataset file would.
struct SyntheticBa {
  BalProblem problem;
  std::vector<PoseSE3> true_poses;
  std::vector<Vec3> true_points;
};

namespace detail {

/// World-to-camera pose at `position` with the -z axis looking at the
/// origin (the BAL camera convention).
inline PoseSE3 look_at_origin(const Vec3& position) {
  const Vec3 z_cam = position.normalized();  // viewing direction is -z_cam
  Vec3 up(0, 0, 1);
  if (std::abs(up.dot(z_cam)) > 0.95) up = Vec3(0, 1, 0);
  const Vec3 x_cam = up.cross(z_cam).normalized();
  const Vec3 y_cam = z_cam.cross(x_cam);
  Mat3 r;
  r.row(0) = x_cam;
  r.row(1) = y_cam;
  r.row(2) = z_cam;
  const Eigen::Quaterniond q(r);
  return PoseSE3(QuatRotation(q.x(), q.y(), q.z(), q.w()), -(r * position));
}

}  // namespace detail

/// Deterministic-from-seed scene: points in a unit box around the origin,
/// cameras on a ring looking inward, every camera observing every point.
/// Pixels are exact projections plus Gaussian noise; the initial poses are
/// the true ones perturbed in the tangent.
inline SyntheticBa synth_ba(int num_cameras, int num_points, double pixel_noise_sigma,
                            double pose_perturb_sigma, std::uint64_t seed) {
  if (num_cameras < 1 || num_points < 1)
    throw std::invalid_argument("synth_ba: counts must be positive");
  detail::Rng rng(seed);
  SyntheticBa s;

  for (int p = 0; p < num_points; ++p)
    s.true_points.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                               rng.uniform(-0.5, 0.5));

  const double radius = 4.0;
  const double focal = 500.0;
  for (int c = 0; c < num_cameras; ++c) {
    const double angle = 2.0 * M_PI * c / num_cameras;
    const Vec3 position(radius * std::cos(angle), radius * std::sin(angle),
                        0.5 + 0.1 * rng.normal());
    s.true_poses.push_back(detail::look_at_origin(position));
  }

  s.problem.points = s.true_points;
  for (int c = 0; c < num_cameras; ++c) {
    const BalIntrinsics k{focal, 0.0, 0.0};
    for (int p = 0; p < num_points; ++p) {
      Observation o;
      o.camera_index = c;
      o.point_index = p;
      o.pixel = bal_project(s.true_poses[c], s.true_points[p], k);
      o.pixel.x() += pixel_noise_sigma * rng.normal();
      o.pixel.y() += pixel_noise_sigma * rng.normal();
      s.problem.observations.push_back(o);
    }
    const Tangent6 noise(
        pose_perturb_sigma * Vec3(rng.normal(), rng.normal(), rng.normal()),
        pose_perturb_sigma * Vec3(rng.normal(), rng.normal(), rng.normal()));
    const PoseSE3 init = se3_retract(s.true_poses[c], noise);
    BalCamera cam;
    cam.rodrigues = se3_log(PoseSE3(init.rotation, Vec3::Zero())).omega;
    cam.translation = init.translation;
    cam.f = focal;
    cam.k1 = 0.0;
    cam.k2 = 0.0;
    s.problem.cameras.push_back(cam);
  }
  return s;
}

}  // namespace traceopt
