#include "traceopt/trace.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "traceopt/problems.hpp"

using namespace traceopt;
using traceopt::testing::BaInstance;
using traceopt::testing::fd_ba_point_jacobian;
using traceopt::testing::fd_ba_pose_jacobian;
using traceopt::testing::make_random_ba;
using traceopt::testing::ref_ba_residuals;
using traceopt::testing::rel_err;

namespace {

std::vector<PoseSE3> identity_poses(int n) { return std::vector<PoseSE3>(n); }

std::vector<Vec3> random_points(detail::Rng& rng, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
  return pts;
}

}  // namespace

TEST(Track, LeafShapes) {
  TraceGraph g;
  const auto poses = identity_poses(1);
  const TracedValue vp = g.track_poses(poses);
  EXPECT_EQ(g.rows(vp), 1);
  EXPECT_EQ(g.width(vp), 7);

  detail::Rng rng(1);
  const auto pts = random_points(rng, 8);
  const TracedValue vx = g.track_points(pts);
  EXPECT_EQ(g.rows(vx), 8);
  EXPECT_EQ(g.width(vx), 3);
  EXPECT_NE(vp.node, vx.node);
}

TEST(Track, ShapeErrors) {
  TraceGraph g;
  EXPECT_THROW(g.track_poses({}), std::invalid_argument);
  EXPECT_THROW(g.constant(2, 3, std::vector<double>(5)), std::invalid_argument);
}

TEST(Gather, ReplicatesRows) {
  TraceGraph g;
  const auto poses = identity_poses(2);
  const TracedValue leaf = g.track_poses(poses);
  const std::vector<std::int32_t> idx = {0, 0, 1};
  const TracedValue v = g.gather(leaf, idx);
  EXPECT_EQ(g.rows(v), 3);
  EXPECT_EQ(g.width(v), 7);
}

TEST(Gather, OutOfRangeNamesPosition) {
  TraceGraph g;
  const auto poses = identity_poses(2);
  const TracedValue leaf = g.track_poses(poses);
  const std::vector<std::int32_t> idx = {0, 5, 1};
  try {
    g.gather(leaf, idx);
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_EQ(e.position(), 1u);
  }
}

TEST(Gather, OnArithmeticResultRejected) {
  TraceGraph g;
  detail::Rng rng(2);
  const auto pts = random_points(rng, 4);
  const TracedValue leaf = g.track_points(pts);
  const TracedValue doubled = g.scale(leaf, 2.0);
  const std::vector<std::int32_t> idx = {0, 1};
  EXPECT_THROW(g.gather(doubled, idx), UnsupportedOperationError);
}

TEST(Gather, ComposesThroughGatherChains) {
  TraceGraph g;
  detail::Rng rng(3);
  const auto pts = random_points(rng, 5);
  const TracedValue leaf = g.track_points(pts);
  const std::vector<std::int32_t> idx1 = {4, 2, 0};
  const std::vector<std::int32_t> idx2 = {2, 0};
  const TracedValue g1 = g.gather(leaf, idx1);
  const TracedValue g2 = g.gather(g1, idx2);
  const auto vals = g.values(g2);
  EXPECT_EQ(g.rows(g2), 2);
  EXPECT_EQ(Vec3(vals[0], vals[1], vals[2]), pts[0]);
  EXPECT_EQ(Vec3(vals[3], vals[4], vals[5]), pts[4]);
}

TEST(Gather, IdentityReplicationGivesBlockDiagonal) {
  TraceGraph g;
  detail::Rng rng(18);
  const auto pts = random_points(rng, 5);
  const TracedValue leaf = g.track_points(pts);
  std::vector<std::int32_t> idx(5);
  std::iota(idx.begin(), idx.end(), 0);
  const TracedValue gathered = g.gather(leaf, idx);
  const TracedValue doubled = g.scale(gathered, 2.0);
  g.set_residual(doubled);
  g.forward();
  const JacobianPair j = g.sparse_jacobian();
  ASSERT_TRUE(j.j_point.has_value());
  EXPECT_EQ(j.j_point->nnz_blocks(), 5);
  for (int r = 0; r < 5; ++r) EXPECT_EQ(j.j_point->col_idx[r], r);
  EXPECT_EQ(to_dense(*j.j_point), 2.0 * Eigen::MatrixXd::Identity(15, 15));
}

TEST(Evaluate, LeafAsResidual) {
  TraceGraph g;
  detail::Rng rng(4);
  const auto pts = random_points(rng, 3);
  const TracedValue leaf = g.track_points(pts);
  g.set_residual(leaf);
  const auto r = g.evaluate();
  EXPECT_EQ(g.num_nodes(), 1);
  ASSERT_EQ(r.size(), 9u);
  EXPECT_EQ(r[3], pts[1].x());
}

TEST(Evaluate, MinimalPinholeToy) {
  // C=1, P=8, fx=fy=200, cx=cy=100; the point on the optical axis projects
  // to the principal point.
  TraceGraph g;
  const auto poses = identity_poses(1);
  std::vector<Vec3> pts(8, Vec3(0, 0, 1));
  detail::Rng rng(5);
  for (int i = 1; i < 8; ++i)
    pts[i] = Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.5));

  const TracedValue pl = g.track_poses(poses);
  const TracedValue xl = g.track_points(pts);
  std::vector<std::int32_t> cidx(8, 0);
  std::vector<std::int32_t> pidx(8);
  std::iota(pidx.begin(), pidx.end(), 0);
  const TracedValue pc = g.se3_act(g.gather(pl, cidx), g.gather(xl, pidx));
  std::vector<double> krows;
  for (int i = 0; i < 8; ++i) krows.insert(krows.end(), {200, 200, 100, 100});
  const TracedValue proj = g.pinhole_cam(pc, g.constant(8, 4, std::move(krows)));
  std::vector<double> obs(16, 90.0);
  const TracedValue res = g.sub(proj, g.constant(8, 2, std::move(obs)));
  g.set_residual(res);

  const auto r = g.evaluate();
  EXPECT_DOUBLE_EQ(g.values(proj)[0], 100.0);
  EXPECT_DOUBLE_EQ(g.values(proj)[1], 100.0);
  EXPECT_DOUBLE_EQ(r[0], 10.0);
  EXPECT_DOUBLE_EQ(r[1], 10.0);
}

TEST(Evaluate, BaToyRowCountAndForwardOracle) {
  detail::Rng rng(6);
  BaInstance in = make_random_ba(rng, 2, 3, true, 1.1);
  in.observations.clear();
  for (auto [c, p] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 2}}) {
    Observation o;
    o.camera_index = c;
    o.point_index = p;
    o.pixel = Vec2(rng.normal(), rng.normal());
    in.observations.push_back(o);
  }
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  const auto r = prob.evaluate();
  ASSERT_EQ(r.size(), 6u);
  const auto oracle = ref_ba_residuals(in);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r[i], oracle[i], 1e-12);
}

TEST(SparseJacobian, IdentityMapOnPoints) {
  TraceGraph g;
  detail::Rng rng(7);
  const auto pts = random_points(rng, 4);
  const TracedValue leaf = g.track_points(pts);
  g.set_residual(leaf);
  g.forward();
  const JacobianPair j = g.sparse_jacobian();
  EXPECT_FALSE(j.j_pose.has_value());
  ASSERT_TRUE(j.j_point.has_value());
  const BsrMatrix& m = *j.j_point;
  EXPECT_EQ(m.block_rows, 4);
  EXPECT_EQ(m.block_cols, 4);
  EXPECT_EQ(m.nnz_blocks(), 4);
  EXPECT_EQ(to_dense(m), Eigen::MatrixXd::Identity(12, 12));
}

TEST(SparseJacobian, GatherPatternForBaToy) {
  detail::Rng rng(8);
  BaInstance in = make_random_ba(rng, 2, 3, true, 1.1);
  in.observations.clear();
  for (auto [c, p] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 2}}) {
    Observation o;
    o.camera_index = c;
    o.point_index = p;
    o.pixel = Vec2(0, 0);
    in.observations.push_back(o);
  }
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  const JacobianPair j = prob.jacobian();
  ASSERT_TRUE(j.j_pose && j.j_point);
  // One block per row; columns follow the gather indices.
  const std::vector<std::int32_t> pose_cols = {0, 0, 1};
  const std::vector<std::int32_t> point_cols = {0, 1, 2};
  EXPECT_EQ(j.j_pose->col_idx, pose_cols);
  EXPECT_EQ(j.j_point->col_idx, point_cols);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(j.j_pose->row_ptr[r + 1] - j.j_pose->row_ptr[r], 1);
    EXPECT_EQ(j.j_point->row_ptr[r + 1] - j.j_point->row_ptr[r], 1);
  }
  EXPECT_EQ(j.j_pose->br, 2);
  EXPECT_EQ(j.j_pose->bc, 6);
  EXPECT_EQ(j.j_point->bc, 3);

  // Values against central finite differences.
  EXPECT_LT(rel_err(to_dense(*j.j_pose), fd_ba_pose_jacobian(in)), 1e-6);
  EXPECT_LT(rel_err(to_dense(*j.j_point), fd_ba_point_jacobian(in)), 1e-6);
}

TEST(SparseJacobian, MinimalToyAgainstFiniteDifferences) {
  detail::Rng rng(9);
  BaInstance in = make_random_ba(rng, 1, 8, true, 1.1);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  const JacobianPair j = prob.jacobian();
  EXPECT_LT(rel_err(to_dense(*j.j_pose), fd_ba_pose_jacobian(in)), 1e-6);
  EXPECT_LT(rel_err(to_dense(*j.j_point), fd_ba_point_jacobian(in)), 1e-6);
}

TEST(SparseJacobian, RandomInstancesBothCameraModels) {
  detail::Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const bool pinhole = trial % 2 == 0;
    const int c = 1 + static_cast<int>(rng.index(5));
    const int p = 1 + static_cast<int>(rng.index(20));
    const BaInstance in = make_random_ba(rng, c, p, pinhole);
    TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
    prob.evaluate();
    const JacobianPair j = prob.jacobian();
    EXPECT_LT(rel_err(to_dense(*j.j_pose), fd_ba_pose_jacobian(in)), 1e-6) << "trial " << trial;
    EXPECT_LT(rel_err(to_dense(*j.j_point), fd_ba_point_jacobian(in)), 1e-6)
        << "trial " << trial;
  }
}

TEST(SparseJacobian, PatternValueSeparation) {
  detail::Rng rng(11);
  const BaInstance in = make_random_ba(rng, 3, 10, true);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  const JacobianPair j1 = prob.jacobian();

  // New parameter values: pattern identical, values generally different.
  BaInstance moved = in;
  for (auto& pose : moved.poses)
    pose = se3_retract(pose, Tangent6(0.01 * Vec3::Ones(), 0.01 * Vec3::Ones()));
  for (auto& pt : moved.points) pt += Vec3(0.01, -0.02, 0.03);
  prob.set_parameters(moved.poses, moved.points);
  prob.evaluate();
  const JacobianPair j2 = prob.jacobian();
  EXPECT_TRUE(j2.j_pose->same_pattern(*j1.j_pose));
  EXPECT_TRUE(j2.j_point->same_pattern(*j1.j_point));
  EXPECT_NE(j2.j_pose->values, j1.j_pose->values);
}

TEST(SparseJacobian, GatherIndicesDoNotChangeBlockValues) {
  // Two entities with identical values: swapping which one a row gathers
  // moves the block column but not the block values.
  detail::Rng rng(12);
  const Vec3 point(0.1, -0.2, 1.0);
  const std::vector<Vec3> pts = {point, point};
  const std::vector<PoseSE3> poses = identity_poses(1);
  const std::vector<CameraIntrinsics> kk = {PinholeIntrinsics{200, 200, 100, 100}};

  auto build = [&](std::int32_t which) {
    Observation o;
    o.camera_index = 0;
    o.point_index = which;
    o.pixel = Vec2(7, 9);
    TracedProblem prob = make_ba_problem(poses, pts, kk, std::vector<Observation>{o});
    prob.evaluate();
    return prob.jacobian();
  };
  const JacobianPair ja = build(0);
  const JacobianPair jb = build(1);
  EXPECT_EQ(ja.j_point->values, jb.j_point->values);
  EXPECT_EQ(ja.j_point->col_idx[0], 0);
  EXPECT_EQ(jb.j_point->col_idx[0], 1);
}

TEST(SparseJacobian, DuplicateObservationsGiveIndependentRows) {
  detail::Rng rng(13);
  BaInstance in = make_random_ba(rng, 1, 2, true, 1.1);
  Observation dup = in.observations[0];
  in.observations.push_back(dup);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  const JacobianPair j = prob.jacobian();
  const int n = static_cast<int>(in.observations.size());
  EXPECT_EQ(j.j_pose->block_rows, n);
  EXPECT_EQ(j.j_pose->nnz_blocks(), n);
  // Last row duplicates the first observation's block values.
  const int bs = 12;
  for (int t = 0; t < bs; ++t)
    EXPECT_DOUBLE_EQ(j.j_pose->block(j.j_pose->row_ptr[n - 1])[t], j.j_pose->block(0)[t]);
}

TEST(SparseJacobian, MemoryIsObservationProportional) {
  detail::Rng rng(14);
  const BaInstance in = make_random_ba(rng, 5, 20, true);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  const JacobianPair j = prob.jacobian();
  const auto n = static_cast<std::int64_t>(in.observations.size());
  EXPECT_EQ(j.j_pose->nnz_blocks(), n);
  EXPECT_EQ(j.j_point->nnz_blocks(), n);
  EXPECT_EQ(j.j_pose->values.size(), static_cast<std::size_t>(n) * 12);
  EXPECT_EQ(j.j_point->values.size(), static_cast<std::size_t>(n) * 6);
}

TEST(SparseJacobian, BackwardVisitsReverseCreationOrderOnce) {
  detail::Rng rng(15);
  const BaInstance in = make_random_ba(rng, 2, 5, true);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  prob.evaluate();
  prob.jacobian();
  const auto& order = prob.graph().last_backward_order();
  ASSERT_FALSE(order.empty());
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_LT(order[i], order[i - 1]);
  std::vector<std::int32_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_TRUE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST(SparseJacobian, DeterministicAcrossThreadCounts) {
  detail::Rng rng(16);
  const BaInstance in = make_random_ba(rng, 4, 30, false);
  TracedProblem prob = make_ba_problem(in.poses, in.points, in.intrinsics, in.observations);
  set_num_threads(1);
  prob.evaluate();
  const JacobianPair j1 = prob.jacobian();
  set_num_threads(3);
  prob.evaluate();
  const JacobianPair j3 = prob.jacobian();
  set_num_threads(1);
  EXPECT_EQ(j1.j_pose->values, j3.j_pose->values);
  EXPECT_EQ(j1.j_point->values, j3.j_point->values);
}

TEST(TraceOps, ScaleSquareAddChainAgainstFd) {
  // r = (2 p)^2 - p for tracked points; checks the elementwise derivatives.
  detail::Rng rng(17);
  const auto pts = random_points(rng, 3);
  TraceGraph g;
  const TracedValue leaf = g.track_points(pts);
  const TracedValue r = g.sub(g.square(g.scale(leaf, 2.0)), leaf);
  g.set_residual(r);
  g.forward();
  const JacobianPair j = g.sparse_jacobian();
  ASSERT_TRUE(j.j_point.has_value());
  const Eigen::MatrixXd dense = to_dense(*j.j_point);

  const double h = 1e-6;
  for (int p = 0; p < 3; ++p) {
    for (int t = 0; t < 3; ++t) {
      auto plus = pts, minus = pts;
      plus[p][t] += h;
      minus[p][t] -= h;
      auto eval = [&](const std::vector<Vec3>& x) {
        std::vector<double> out;
        for (const auto& v : x)
          for (int i = 0; i < 3; ++i) out.push_back(4 * v[i] * v[i] - v[i]);
        return out;
      };
      const auto rp = eval(plus);
      const auto rm = eval(minus);
      for (int row = 0; row < 9; ++row)
        EXPECT_NEAR(dense(row, 3 * p + t), (rp[row] - rm[row]) / (2 * h), 1e-5);
    }
  }
}
