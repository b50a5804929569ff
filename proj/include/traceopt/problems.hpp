#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "traceopt/camera.hpp"
#include "traceopt/lie.hpp"
#include "traceopt/trace.hpp"

namespace traceopt {

/// One image measurement: which camera saw which point, and where.
struct Observation {
  std::int32_t camera_index = 0;
  std::int32_t point_index = 0;
  Vec2 pixel{0, 0};
};

/// Relative-pose constraint between poses i and j, optionally weighted by a
/// symmetric positive-definite information matrix.
struct PgoEdge {
  std::int32_t i = 0;
  std::int32_t j = 0;
  PoseSE3 measurement;
  std::optional<Mat6> information;
};

/// A residual model traced once; parameters stream in per iteration while
/// the graph and its sparsity stay fixed.
class TracedProblem {
 public:
  TracedProblem() = default;

  /// Wraps a hand-built graph; pass invalid handles for absent groups.
  static TracedProblem adopt(TraceGraph&& graph, TracedValue poses, TracedValue points,
                             TracedValue residual) {
    TracedProblem p;
    p.graph_ = std::move(graph);
    p.poses_ = poses;
    p.points_ = points;
    p.residual_ = residual;
    if (!residual.valid()) throw std::invalid_argument("TracedProblem: residual not set");
    p.graph_.set_residual(residual);
    return p;
  }

  bool has_poses() const { return poses_.valid(); }
  bool has_points() const { return points_.valid(); }
  int num_poses() const { return has_poses() ? graph_.rows(poses_) : 0; }
  int num_points() const { return has_points() ? graph_.rows(points_) : 0; }
  bool anchor_first_pose() const { return has_poses() && graph_.group(poses_).anchor_first; }
  int residual_rows() const { return graph_.rows(residual_); }
  int residual_width() const { return graph_.width(residual_); }

  void set_parameters(std::span<const PoseSE3> poses, std::span<const Vec3> points) {
    if (has_poses()) graph_.set_leaf_poses(poses_, poses);
    if (has_points()) graph_.set_leaf_points(points_, points);
  }

  std::span<const double> evaluate() { return graph_.evaluate(); }

  JacobianPair jacobian() { return graph_.sparse_jacobian(); }

  TraceGraph& graph() { return graph_; }

 private:
  friend TracedProblem make_ba_problem(std::span<const PoseSE3>, std::span<const Vec3>,
                                       std::span<const CameraIntrinsics>,
                                       std::span<const Observation>);
  friend TracedProblem make_pgo_problem(std::span<const PoseSE3>, std::span<const PgoEdge>,
                                        bool);
  TraceGraph graph_;
  TracedValue poses_{};
  TracedValue points_{};
  TracedValue residual_{};
};

/// Reprojection model: gather poses by camera, points by observation,
/// project with the camera variant, subtract the measured pixels. One
/// 2-vector residual row per observation.
inline TracedProblem make_ba_problem(std::span<const PoseSE3> poses, std::span<const Vec3> points,
                                     std::span<const CameraIntrinsics> intrinsics,
                                     std::span<const Observation> observations) {
  if (intrinsics.size() != poses.size())
    throw std::invalid_argument("make_ba_problem: one intrinsics entry per camera required");
  if (observations.empty()) throw std::invalid_argument("make_ba_problem: no observations");

  const bool pinhole = std::holds_alternative<PinholeIntrinsics>(intrinsics[0]);
  for (const auto& k : intrinsics) {
    if (std::holds_alternative<PinholeIntrinsics>(k) != pinhole)
      throw std::invalid_argument("make_ba_problem: mixed camera variants are not supported");
  }

  const int n = static_cast<int>(observations.size());
  std::vector<std::int32_t> cam_idx(observations.size()), pt_idx(observations.size());
  std::vector<double> k_rows, obs_rows;
  k_rows.reserve(observations.size() * (pinhole ? 4 : 3));
  obs_rows.reserve(observations.size() * 2);
  for (std::size_t k = 0; k < observations.size(); ++k) {
    const Observation& o = observations[k];
    if (o.camera_index < 0 || o.camera_index >= static_cast<std::int32_t>(poses.size()))
      throw IndexError("make_ba_problem: camera index out of range", k);
    if (o.point_index < 0 || o.point_index >= static_cast<std::int32_t>(points.size()))
      throw IndexError("make_ba_problem: point index out of range", k);
    cam_idx[k] = o.camera_index;
    pt_idx[k] = o.point_index;
    if (pinhole) {
      const auto& kk = std::get<PinholeIntrinsics>(intrinsics[o.camera_index]);
      k_rows.insert(k_rows.end(), {kk.fx, kk.fy, kk.cx, kk.cy});
    } else {
      const auto& kk = std::get<BalIntrinsics>(intrinsics[o.camera_index]);
      k_rows.insert(k_rows.end(), {kk.f, kk.k1, kk.k2});
    }
    obs_rows.insert(obs_rows.end(), {o.pixel.x(), o.pixel.y()});
  }

  TracedProblem p;
  p.poses_ = p.graph_.track_poses(poses);
  p.points_ = p.graph_.track_points(points);
  const TracedValue cams = p.graph_.gather(p.poses_, cam_idx);
  const TracedValue pts = p.graph_.gather(p.points_, pt_idx);
  const TracedValue in_cam = p.graph_.se3_act(cams, pts);
  const TracedValue k_const = p.graph_.constant(n, pinhole ? 4 : 3, std::move(k_rows));
  const TracedValue proj =
      pinhole ? p.graph_.pinhole_cam(in_cam, k_const) : p.graph_.bal_cam(in_cam, k_const);
  const TracedValue obs_const = p.graph_.constant(n, 2, std::move(obs_rows));
  p.residual_ = p.graph_.sub(proj, obs_const);
  p.graph_.set_residual(p.residual_);
  return p;
}

/// Relative-pose model: residual row per edge, Log(zi^-1 zj T^-1), whitened
/// by the Cholesky transpose of the edge information matrix when present.
/// With anchor_first the first pose is held fixed (excluded from columns).
inline TracedProblem make_pgo_problem(std::span<const PoseSE3> poses,
                                      std::span<const PgoEdge> edges, bool anchor_first = true) {
  if (poses.empty()) throw std::invalid_argument("make_pgo_problem: no poses");
  if (edges.empty()) throw std::invalid_argument("make_pgo_problem: no edges");

  const int n = static_cast<int>(edges.size());
  std::vector<std::int32_t> idx_i(edges.size()), idx_j(edges.size());
  std::vector<PoseSE3> measurements(edges.size());
  bool any_information = false;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const PgoEdge& e = edges[k];
    if (e.i < 0 || e.i >= static_cast<std::int32_t>(poses.size()))
      throw IndexError("make_pgo_problem: edge endpoint i out of range", k);
    if (e.j < 0 || e.j >= static_cast<std::int32_t>(poses.size()))
      throw IndexError("make_pgo_problem: edge endpoint j out of range", k);
    if (e.i == e.j) throw std::invalid_argument("make_pgo_problem: self edge");
    idx_i[k] = e.i;
    idx_j[k] = e.j;
    measurements[k] = e.measurement;
    any_information = any_information || e.information.has_value();
  }

  TracedProblem p;
  p.poses_ = p.graph_.track_poses(poses, anchor_first);
  const TracedValue gi = p.graph_.gather(p.poses_, idx_i);
  const TracedValue gj = p.graph_.gather(p.poses_, idx_j);
  const TracedValue meas = p.graph_.constant_poses(measurements);
  TracedValue r = p.graph_.pgo_residual(gi, gj, meas);

  if (any_information) {
    std::vector<double> white(static_cast<std::size_t>(n) * 36);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      Mat6 lt = Mat6::Identity();
      if (edges[k].information) {
        const Eigen::LLT<Mat6> llt(*edges[k].information);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument("make_pgo_problem: information matrix not SPD");
        lt = llt.matrixL().transpose();
      }
      Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>>(white.data() + k * 36) = lt;
    }
    const TracedValue w = p.graph_.constant(n, 36, std::move(white));
    r = p.graph_.row_matmul(w, r);
  }
  p.residual_ = r;
  p.graph_.set_residual(r);
  return p;
}

}  // namespace traceopt
