#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "traceopt/bsr.hpp"
#include "traceopt/camera.hpp"
#include "traceopt/detail/parallel.hpp"
#include "traceopt/errors.hpp"
#include "traceopt/lie.hpp"

namespace traceopt {

enum class GroupKind { pose, point3 };

/// One optimized parameter family: a batch of poses or of 3D points.
struct ParamGroup {
  int id = 0;
  GroupKind kind = GroupKind::point3;
  int count = 0;
  int tangent_dim = 0;       // 6 for poses, 3 for points
  bool anchor_first = false;  // pose gauge fix: entity 0 carries no columns
};

/// Handle to a node in a TraceGraph.
struct TracedValue {
  std::int32_t node = -1;
  bool valid() const { return node >= 0; }
};

/// The two Jacobian halves of a traced residual: blocks per pose column and
/// per point column. Conceptually J = [j_pose | j_point].
struct JacobianPair {
  std::optional<BsrMatrix> j_pose;
  std::optional<BsrMatrix> j_point;
};

/// Incrementally built computational DAG. Leaves are tracked parameter batches;
/// gather nodes replicate entities per residual row and define the Jacobian
/// sparsity pattern; the closed set of arithmetic ops generates block
/// values. Creation order is the topological order.
class TraceGraph {
 public:
  enum class Op : std::int8_t {
    none,
    se3_act,
    pinhole_cam,  // camera-frame point -> pixel, pinhole constants per row
    bal_cam,      // camera-frame point -> pixel, BAL constants per row
    pgo_residual,
    add,
    sub,
    scale,
    square,
    row_matmul,  // constant square matrix per row times value
  };

  // ---- leaves and constants -------------------------------------------

  TracedValue track_poses(std::span<const PoseSE3> poses, bool anchor_first = false) {
    if (poses.empty()) throw std::invalid_argument("track_poses: empty group");
    if (pose_leaf_ >= 0) throw std::invalid_argument("track_poses: pose group already tracked");
    Node n;
    n.prov = Prov::leaf;
    n.rows = static_cast<int>(poses.size());
    n.width = 7;
    n.tangent = 6;
    n.group.id = next_group_id_++;
    n.group.kind = GroupKind::pose;
    n.group.count = n.rows;
    n.group.tangent_dim = 6;
    n.group.anchor_first = anchor_first;
    n.values.resize(static_cast<std::size_t>(n.rows) * 7);
    const TracedValue v = push(std::move(n));
    pose_leaf_ = v.node;
    set_leaf_poses(v, poses);
    return v;
  }

  TracedValue track_points(std::span<const Vec3> points) {
    if (points.empty()) throw std::invalid_argument("track_points: empty group");
    if (point_leaf_ >= 0) throw std::invalid_argument("track_points: point group already tracked");
    Node n;
    n.prov = Prov::leaf;
    n.rows = static_cast<int>(points.size());
    n.width = 3;
    n.tangent = 3;
    n.group.id = next_group_id_++;
    n.group.kind = GroupKind::point3;
    n.group.count = n.rows;
    n.group.tangent_dim = 3;
    n.values.resize(static_cast<std::size_t>(n.rows) * 3);
    const TracedValue v = push(std::move(n));
    point_leaf_ = v.node;
    set_leaf_points(v, points);
    return v;
  }

  TracedValue constant(int rows, int width, std::vector<double> data) {
    if (rows <= 0 || width <= 0 || data.size() != static_cast<std::size_t>(rows) * width)
      throw std::invalid_argument("constant: shape mismatch");
    Node n;
    n.prov = Prov::constant;
    n.rows = rows;
    n.width = width;
    n.tangent = 0;
    n.values = std::move(data);
    return push(std::move(n));
  }

  TracedValue constant_poses(std::span<const PoseSE3> poses) {
    std::vector<double> data(poses.size() * 7);
    for (std::size_t i = 0; i < poses.size(); ++i) write_pose(data.data() + i * 7, poses[i]);
    return constant(static_cast<int>(poses.size()), 7, std::move(data));
  }

  // ---- structure -------------------------------------------------------

  /// Replicates entities of a leaf (or of another gather) per output row.
  /// This is the only operation that shapes the sparsity pattern.
  TracedValue gather(TracedValue src, std::span<const std::int32_t> indices) {
    const Node& s = node(src);
    if (s.prov != Prov::leaf && s.prov != Prov::gather)
      throw UnsupportedOperationError(
          "gather: tensor indexing is only supported on tracked parameters");
    if (indices.empty()) throw std::invalid_argument("gather: empty index list");
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] < 0 || indices[k] >= s.rows)
        throw IndexError("gather: index out of range at position " + std::to_string(k), k);
    }
    Node n;
    n.prov = Prov::gather;
    n.rows = static_cast<int>(indices.size());
    n.width = s.width;
    n.tangent = s.tangent;
    if (s.prov == Prov::leaf) {
      n.leaf = src.node;
      n.leaf_idx.assign(indices.begin(), indices.end());
    } else {
      n.leaf = s.leaf;
      n.leaf_idx.resize(indices.size());
      for (std::size_t k = 0; k < indices.size(); ++k)
        n.leaf_idx[k] = s.leaf_idx[indices[k]];
    }
    n.values.resize(static_cast<std::size_t>(n.rows) * n.width);
    TracedValue v = push(std::move(n));
    forward_node(v.node);
    return v;
  }

  // ---- arithmetic ops (closed registry) --------------------------------

  TracedValue se3_act(TracedValue pose, TracedValue point) {
    check_pose_valued(pose, "se3_act");
    if (node(point).width != 3) throw std::invalid_argument("se3_act: point width must be 3");
    return arith(Op::se3_act, {pose, point}, 3);
  }

  /// intrinsics: constant node, 4 per row (fx, fy, cx, cy).
  TracedValue pinhole_cam(TracedValue cam_point, TracedValue intrinsics) {
    require_constant(intrinsics, 4, "pinhole_cam");
    if (node(cam_point).width != 3)
      throw std::invalid_argument("pinhole_cam: input width must be 3");
    return arith(Op::pinhole_cam, {cam_point, intrinsics}, 2);
  }

  /// intrinsics: constant node, 3 per row (f, k1, k2).
  TracedValue bal_cam(TracedValue cam_point, TracedValue intrinsics) {
    require_constant(intrinsics, 3, "bal_cam");
    if (node(cam_point).width != 3) throw std::invalid_argument("bal_cam: input width must be 3");
    return arith(Op::bal_cam, {cam_point, intrinsics}, 2);
  }

  /// measurements: constant node, 7 per row; output Log(zi^-1 zj T^-1).
  TracedValue pgo_residual(TracedValue pose_i, TracedValue pose_j, TracedValue measurement) {
    check_pose_valued(pose_i, "pgo_residual");
    check_pose_valued(pose_j, "pgo_residual");
    require_constant(measurement, 7, "pgo_residual");
    return arith(Op::pgo_residual, {pose_i, pose_j, measurement}, 6);
  }

  TracedValue add(TracedValue a, TracedValue b) { return elementwise(Op::add, a, b); }
  TracedValue sub(TracedValue a, TracedValue b) { return elementwise(Op::sub, a, b); }

  TracedValue scale(TracedValue a, double s) {
    Node& an = node(a);
    check_not_pose(a, "scale");
    Node n = arith_node(Op::scale, {a}, an.width);
    n.scalar = s;
    TracedValue v = push(std::move(n));
    forward_node(v.node);
    return v;
  }

  TracedValue square(TracedValue a) {
    check_not_pose(a, "square");
    return arith(Op::square, {a}, node(a).width);
  }

  /// mats: constant node of width w*w (row-major per row); output M_k x_k.
  TracedValue row_matmul(TracedValue mats, TracedValue a) {
    const int w = node(a).width;
    check_not_pose(a, "row_matmul");
    require_constant(mats, w * w, "row_matmul");
    return arith(Op::row_matmul, {a, mats}, w);
  }

  // ---- evaluation -------------------------------------------------------

  void set_residual(TracedValue v) {
    if (node(v).prov == Prov::constant)
      throw std::invalid_argument("set_residual: residual cannot be a constant");
    residual_ = v;
  }

  TracedValue residual() const { return residual_; }

  void set_leaf_poses(TracedValue leaf, std::span<const PoseSE3> poses) {
    Node& n = node(leaf);
    if (n.prov != Prov::leaf || n.group.kind != GroupKind::pose)
      throw std::invalid_argument("set_leaf_poses: not a pose leaf");
    if (static_cast<int>(poses.size()) != n.rows)
      throw std::invalid_argument("set_leaf_poses: count mismatch");
    for (std::size_t i = 0; i < poses.size(); ++i)
      write_pose(n.values.data() + i * 7, poses[i]);
  }

  void set_leaf_points(TracedValue leaf, std::span<const Vec3> points) {
    Node& n = node(leaf);
    if (n.prov != Prov::leaf || n.group.kind != GroupKind::point3)
      throw std::invalid_argument("set_leaf_points: not a point leaf");
    if (static_cast<int>(points.size()) != n.rows)
      throw std::invalid_argument("set_leaf_points: count mismatch");
    for (std::size_t i = 0; i < points.size(); ++i) {
      double* dst = n.values.data() + i * 3;
      dst[0] = points[i].x();
      dst[1] = points[i].y();
      dst[2] = points[i].z();
    }
  }

  /// Recomputes every node from the current leaf values, in creation order.
  void forward() {
    for (std::int32_t id = 0; id < static_cast<std::int32_t>(nodes_.size()); ++id)
      forward_node(id);
  }

  /// Forward pass, returning the residual values.
  std::span<const double> evaluate() {
    forward();
    return residual_values();
  }

  std::span<const double> values(TracedValue v) const { return node(v).values; }

  std::span<const double> residual_values() const {
    if (!residual_.valid()) throw std::invalid_argument("residual not set");
    return node(residual_).values;
  }

  int rows(TracedValue v) const { return node(v).rows; }
  int width(TracedValue v) const { return node(v).width; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  const ParamGroup& group(TracedValue leaf) const {
    const Node& n = node(leaf);
    if (n.prov != Prov::leaf) throw std::invalid_argument("group: not a leaf");
    return n.group;
  }

  /// Single batched reverse pass: visits each node once in reverse creation
  /// order, accumulating row-local Jacobian blocks; gather indices place the
  /// blocks. The dense Jacobian is never formed.
  JacobianPair sparse_jacobian();

  /// Node ids visited by the last backward pass, in visit order (test hook).
  const std::vector<std::int32_t>& last_backward_order() const { return backward_order_; }

 private:
  enum class Prov : std::int8_t { leaf, constant, gather, arith };

  struct Node {
    Prov prov = Prov::constant;
    Op op = Op::none;
    int rows = 0;
    int width = 0;
    int tangent = 0;  // differentiation width; 0 for constants
    std::int32_t parents[3] = {-1, -1, -1};
    int n_parents = 0;
    std::int32_t leaf = -1;               // gather: resolved root leaf
    std::vector<std::int32_t> leaf_idx;   // gather: composed indices into leaf
    std::vector<double> values;
    double scalar = 0.0;
    ParamGroup group;  // leaf only
  };

  Node& node(TracedValue v) {
    if (!v.valid() || v.node >= static_cast<std::int32_t>(nodes_.size()))
      throw std::invalid_argument("invalid traced value");
    return nodes_[static_cast<std::size_t>(v.node)];
  }
  const Node& node(TracedValue v) const {
    if (!v.valid() || v.node >= static_cast<std::int32_t>(nodes_.size()))
      throw std::invalid_argument("invalid traced value");
    return nodes_[static_cast<std::size_t>(v.node)];
  }

  TracedValue push(Node n) {
    nodes_.push_back(std::move(n));
    return TracedValue{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  static void write_pose(double* dst, const PoseSE3& p) {
    dst[0] = p.translation.x();
    dst[1] = p.translation.y();
    dst[2] = p.translation.z();
    dst[3] = p.rotation.x();
    dst[4] = p.rotation.y();
    dst[5] = p.rotation.z();
    dst[6] = p.rotation.w();
  }

  static PoseSE3 read_pose(const double* src) {
    PoseSE3 p;
    p.translation = Vec3(src[0], src[1], src[2]);
    p.rotation = QuatRotation::from_unit(src[3], src[4], src[5], src[6]);
    return p;
  }

  void check_pose_valued(TracedValue v, const char* what) const {
    const Node& n = node(v);
    const bool pose_valued =
        n.width == 7 && n.tangent == 6 && (n.prov == Prov::leaf || n.prov == Prov::gather);
    if (!pose_valued)
      throw std::invalid_argument(std::string(what) + ": expected a pose-valued input");
  }

  void check_not_pose(TracedValue v, const char* what) const {
    if (node(v).width == 7 && node(v).tangent == 6)
      throw UnsupportedOperationError(std::string(what) +
                                      ": elementwise ops on raw pose storage are not in the "
                                      "op registry");
  }

  void require_constant(TracedValue v, int width, const char* what) const {
    const Node& n = node(v);
    if (n.prov != Prov::constant || n.width != width)
      throw std::invalid_argument(std::string(what) + ": expected a constant of width " +
                                  std::to_string(width));
  }

  Node arith_node(Op op, std::initializer_list<TracedValue> parents, int out_width) {
    Node n;
    n.prov = Prov::arith;
    n.op = op;
    n.width = out_width;
    n.tangent = out_width;
    n.rows = -1;
    for (TracedValue p : parents) {
      const Node& pn = node(p);
      if (pn.prov != Prov::constant) {
        if (n.rows < 0) n.rows = pn.rows;
        if (pn.rows != n.rows)
          throw std::invalid_argument("arithmetic op: row count mismatch between inputs");
      }
      n.parents[n.n_parents++] = p.node;
    }
    if (n.rows < 0) throw std::invalid_argument("arithmetic op: needs a traced input");
    for (TracedValue p : parents) {
      const Node& pn = node(p);
      if (pn.prov == Prov::constant && pn.rows != n.rows)
        throw std::invalid_argument("arithmetic op: constant row count mismatch");
    }
    n.values.resize(static_cast<std::size_t>(n.rows) * n.width);
    return n;
  }

  TracedValue arith(Op op, std::initializer_list<TracedValue> parents, int out_width) {
    TracedValue v = push(arith_node(op, parents, out_width));
    forward_node(v.node);
    return v;
  }

  TracedValue elementwise(Op op, TracedValue a, TracedValue b) {
    check_not_pose(a, op == Op::add ? "add" : "sub");
    check_not_pose(b, op == Op::add ? "add" : "sub");
    if (node(a).width != node(b).width)
      throw std::invalid_argument("elementwise op: width mismatch");
    return arith(op, {a, b}, node(a).width);
  }

  void forward_node(std::int32_t id);

  struct LeafAccumulator;
  void emit_blocks(const Node& n, std::vector<double>&& adjoint, LeafAccumulator& acc);

  std::vector<Node> nodes_;
  TracedValue residual_{};
  std::int32_t pose_leaf_ = -1;
  std::int32_t point_leaf_ = -1;
  int next_group_id_ = 0;
  std::vector<std::int32_t> backward_order_;
};

// ---- forward implementations ---------------------------------------------

inline void TraceGraph::forward_node(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  switch (n.prov) {
    case Prov::leaf:
    case Prov::constant:
      return;  // values held directly
    case Prov::gather: {
      const Node& leaf = nodes_[static_cast<std::size_t>(n.leaf)];
      const int w = n.width;
      detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t k = begin; k < end; ++k) {
          const double* src = leaf.values.data() + std::int64_t{n.leaf_idx[k]} * w;
          double* dst = n.values.data() + k * w;
          for (int i = 0; i < w; ++i) dst[i] = src[i];
        }
      });
      return;
    }
    case Prov::arith:
      break;
  }

  const Node& p0 = nodes_[static_cast<std::size_t>(n.parents[0])];
  const Node* p1 = n.n_parents > 1 ? &nodes_[static_cast<std::size_t>(n.parents[1])] : nullptr;
  const Node* p2 = n.n_parents > 2 ? &nodes_[static_cast<std::size_t>(n.parents[2])] : nullptr;

  switch (n.op) {
    case Op::se3_act: {
      detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t k = begin; k < end; ++k) {
          const PoseSE3 pose = read_pose(p0.values.data() + k * 7);
          const Vec3 pt(p1->values[k * 3], p1->values[k * 3 + 1], p1->values[k * 3 + 2]);
          const Vec3 y = traceopt::se3_act(pose, pt);
          double* dst = n.values.data() + k * 3;
          dst[0] = y.x();
          dst[1] = y.y();
          dst[2] = y.z();
        }
      });
      return;
    }
    case Op::pinhole_cam: {
      for (std::int64_t k = 0; k < n.rows; ++k) {
        const Vec3 pc(p0.values[k * 3], p0.values[k * 3 + 1], p0.values[k * 3 + 2]);
        const double* kk = p1->values.data() + k * 4;
        const Vec2 px = pinhole_project_cam(pc, {kk[0], kk[1], kk[2], kk[3]},
                                            static_cast<std::size_t>(k));
        n.values[k * 2] = px.x();
        n.values[k * 2 + 1] = px.y();
      }
      return;
    }
    case Op::bal_cam: {
      for (std::int64_t k = 0; k < n.rows; ++k) {
        const Vec3 pc(p0.values[k * 3], p0.values[k * 3 + 1], p0.values[k * 3 + 2]);
        const double* kk = p1->values.data() + k * 3;
        const Vec2 px =
            bal_project_cam(pc, {kk[0], kk[1], kk[2]}, static_cast<std::size_t>(k));
        n.values[k * 2] = px.x();
        n.values[k * 2 + 1] = px.y();
      }
      return;
    }
    case Op::pgo_residual: {
      detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t k = begin; k < end; ++k) {
          const PoseSE3 zi = read_pose(p0.values.data() + k * 7);
          const PoseSE3 zj = read_pose(p1->values.data() + k * 7);
          const PoseSE3 t = read_pose(p2->values.data() + k * 7);
          const Tangent6 r =
              se3_log(se3_compose(se3_compose(se3_inverse(zi), zj), se3_inverse(t)));
          Eigen::Map<Vec6>(n.values.data() + k * 6) = r.vec();
        }
      });
      return;
    }
    case Op::add:
    case Op::sub: {
      const double sign = n.op == Op::add ? 1.0 : -1.0;
      const std::int64_t total = std::int64_t{n.rows} * n.width;
      detail::parallel_for(total, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i)
          n.values[i] = p0.values[i] + sign * p1->values[i];
      });
      return;
    }
    case Op::scale: {
      const std::int64_t total = std::int64_t{n.rows} * n.width;
      for (std::int64_t i = 0; i < total; ++i) n.values[i] = n.scalar * p0.values[i];
      return;
    }
    case Op::square: {
      const std::int64_t total = std::int64_t{n.rows} * n.width;
      for (std::int64_t i = 0; i < total; ++i) n.values[i] = p0.values[i] * p0.values[i];
      return;
    }
    case Op::row_matmul: {
      const int w = n.width;
      detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t k = begin; k < end; ++k) {
          const double* m = p1->values.data() + k * w * w;
          const double* x = p0.values.data() + k * w;
          double* dst = n.values.data() + k * w;
          for (int i = 0; i < w; ++i) {
            double s = 0.0;
            for (int j = 0; j < w; ++j) s += m[i * w + j] * x[j];
            dst[i] = s;
          }
        }
      });
      return;
    }
    case Op::none:
      throw UnsupportedOperationError("forward: unregistered operation");
  }
}

// ---- backward implementation ----------------------------------------------

struct TraceGraph::LeafAccumulator {
  struct Contribution {
    const std::vector<std::int32_t>* indices = nullptr;  // null = identity rows
    std::vector<double> blocks;                          // rows * out_w * tangent
  };
  std::vector<Contribution> pose;
  std::vector<Contribution> point;
};

inline void TraceGraph::emit_blocks(const Node& n, std::vector<double>&& adjoint,
                                    LeafAccumulator& acc) {
  const Node& leaf = n.prov == Prov::gather ? nodes_[static_cast<std::size_t>(n.leaf)] : n;
  LeafAccumulator::Contribution c;
  c.indices = n.prov == Prov::gather ? &n.leaf_idx : nullptr;
  c.blocks = std::move(adjoint);  // rows * out_width * tangent, already row-local
  if (leaf.group.kind == GroupKind::pose) {
    acc.pose.push_back(std::move(c));
  } else {
    acc.point.push_back(std::move(c));
  }
}

inline JacobianPair TraceGraph::sparse_jacobian() {
  if (!residual_.valid()) throw std::invalid_argument("sparse_jacobian: residual not set");
  const std::int32_t res_id = residual_.node;
  const Node& res = nodes_[static_cast<std::size_t>(res_id)];
  const int ow = res.width;
  const int nrows = res.rows;

  std::vector<std::vector<double>> adjoint(nodes_.size());
  backward_order_.clear();

  // Seed: d residual / d residual = identity per row.
  {
    if (res.prov == Prov::constant)
      throw std::invalid_argument("sparse_jacobian: residual is constant");
    if (res.width == 7 && res.tangent == 6)
      throw UnsupportedOperationError(
          "sparse_jacobian: raw pose storage cannot be a residual");
    auto& a = adjoint[static_cast<std::size_t>(res_id)];
    a.assign(static_cast<std::size_t>(nrows) * ow * ow, 0.0);
    for (std::int64_t k = 0; k < nrows; ++k)
      for (int i = 0; i < ow; ++i) a[(k * ow + i) * ow + i] = 1.0;
  }

  LeafAccumulator acc;

  for (std::int32_t id = res_id; id >= 0; --id) {
    auto& adj = adjoint[static_cast<std::size_t>(id)];
    if (adj.empty()) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    backward_order_.push_back(id);

    switch (n.prov) {
      case Prov::constant:
        break;  // no gradient flows into constants
      case Prov::leaf:
      case Prov::gather:
        emit_blocks(n, std::move(adj), acc);
        break;
      case Prov::arith: {
        const Node& p0 = nodes_[static_cast<std::size_t>(n.parents[0])];
        const Node* p1 =
            n.n_parents > 1 ? &nodes_[static_cast<std::size_t>(n.parents[1])] : nullptr;
        const int nw = n.width;

        auto parent_adj = [&](int which) -> std::vector<double>& {
          const std::int32_t pid = n.parents[which];
          const Node& pn = nodes_[static_cast<std::size_t>(pid)];
          auto& pa = adjoint[static_cast<std::size_t>(pid)];
          if (pa.empty())
            pa.assign(static_cast<std::size_t>(pn.rows) * ow * pn.tangent, 0.0);
          return pa;
        };

        using RowMat =
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
        using ConstRowMat = Eigen::Map<
            const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

        switch (n.op) {
          case Op::se3_act: {
            auto& a_pose = parent_adj(0);
            auto& a_point = parent_adj(1);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                const PoseSE3 pose = read_pose(p0.values.data() + k * 7);
                const Vec3 y(n.values[k * 3], n.values[k * 3 + 1], n.values[k * 3 + 2]);
                Eigen::Matrix<double, 3, 6> d_pose;
                d_pose.leftCols<3>() = Mat3::Identity();
                d_pose.rightCols<3>() = -skew(y);
                const Mat3 d_point = pose.rotation.matrix();
                ConstRowMat up(adj.data() + k * ow * 3, ow, 3);
                RowMat(a_pose.data() + k * ow * 6, ow, 6).noalias() += up * d_pose;
                RowMat(a_point.data() + k * ow * 3, ow, 3).noalias() += up * d_point;
              }
            });
            break;
          }
          case Op::pinhole_cam: {
            auto& a_in = parent_adj(0);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                const Vec3 pc(p0.values[k * 3], p0.values[k * 3 + 1], p0.values[k * 3 + 2]);
                const double* kk = p1->values.data() + k * 4;
                const auto d =
                    pinhole_project_cam_jacobian(pc, {kk[0], kk[1], kk[2], kk[3]});
                ConstRowMat up(adj.data() + k * ow * 2, ow, 2);
                RowMat(a_in.data() + k * ow * 3, ow, 3).noalias() += up * d;
              }
            });
            break;
          }
          case Op::bal_cam: {
            auto& a_in = parent_adj(0);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                const Vec3 pc(p0.values[k * 3], p0.values[k * 3 + 1], p0.values[k * 3 + 2]);
                const double* kk = p1->values.data() + k * 3;
                const auto d = bal_project_cam_jacobian(pc, {kk[0], kk[1], kk[2]});
                ConstRowMat up(adj.data() + k * ow * 2, ow, 2);
                RowMat(a_in.data() + k * ow * 3, ow, 3).noalias() += up * d;
              }
            });
            break;
          }
          case Op::pgo_residual: {
            auto& a_i = parent_adj(0);
            auto& a_j = parent_adj(1);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                const PoseSE3 zi = read_pose(p0.values.data() + k * 7);
                const Tangent6 r(Vec6(Eigen::Map<const Vec6>(n.values.data() + k * 6)));
                const Mat6 d_j = se3_left_jacobian_inv(r) * se3_adjoint(se3_inverse(zi));
                ConstRowMat up(adj.data() + k * ow * 6, ow, 6);
                RowMat(a_j.data() + k * ow * 6, ow, 6).noalias() += up * d_j;
                RowMat(a_i.data() + k * ow * 6, ow, 6).noalias() -= up * d_j;
              }
            });
            break;
          }
          case Op::add:
          case Op::sub: {
            const double sign = n.op == Op::add ? 1.0 : -1.0;
            for (int which = 0; which < 2; ++which) {
              const Node& pn = nodes_[static_cast<std::size_t>(n.parents[which])];
              if (pn.prov == Prov::constant) continue;
              auto& pa = parent_adj(which);
              const double s = which == 0 ? 1.0 : sign;
              const std::int64_t total = std::int64_t{n.rows} * ow * nw;
              detail::parallel_for(total, [&](std::int64_t begin, std::int64_t end) {
                for (std::int64_t i = begin; i < end; ++i) pa[i] += s * adj[i];
              });
            }
            break;
          }
          case Op::scale: {
            auto& pa = parent_adj(0);
            const std::int64_t total = std::int64_t{n.rows} * ow * nw;
            for (std::int64_t i = 0; i < total; ++i) pa[i] += n.scalar * adj[i];
            break;
          }
          case Op::square: {
            auto& pa = parent_adj(0);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                for (int i = 0; i < ow; ++i)
                  for (int j = 0; j < nw; ++j)
                    pa[(k * ow + i) * nw + j] +=
                        adj[(k * ow + i) * nw + j] * 2.0 * p0.values[k * nw + j];
              }
            });
            break;
          }
          case Op::row_matmul: {
            auto& pa = parent_adj(0);
            detail::parallel_for(n.rows, [&](std::int64_t begin, std::int64_t end) {
              for (std::int64_t k = begin; k < end; ++k) {
                ConstRowMat up(adj.data() + k * ow * nw, ow, nw);
                ConstRowMat m(p1->values.data() + k * nw * nw, nw, nw);
                RowMat(pa.data() + k * ow * nw, ow, nw).noalias() += up * m;
              }
            });
            break;
          }
          case Op::none:
            throw UnsupportedOperationError("sparse_jacobian: unregistered operation");
        }
        break;
      }
    }
    adj.clear();
    adj.shrink_to_fit();
  }

  // Assemble the per-leaf BSR matrices: row k holds one block per gather
  // path, at the recorded column; duplicate columns merge by summation.
  JacobianPair out;
  auto build = [&](std::vector<LeafAccumulator::Contribution>& contribs,
                   const Node& leaf) -> BsrMatrix {
    const int tan = leaf.tangent;
    const bool anchored = leaf.group.anchor_first;
    const int bcols = leaf.group.count - (anchored ? 1 : 0);
    const int bs = ow * tan;

    struct Slot {
      std::int32_t col;
      const double* block;
    };
    BsrMatrix m = BsrMatrix::empty(nrows, bcols, ow, tan);
    m.row_ptr.assign(static_cast<std::size_t>(nrows) + 1, 0);

    auto collect_row = [&](std::int64_t k, std::vector<Slot>& row) {
      row.clear();
      for (const auto& c : contribs) {
        const std::int32_t ent = c.indices ? (*c.indices)[static_cast<std::size_t>(k)]
                                           : static_cast<std::int32_t>(k);
        if (anchored && ent == 0) continue;
        const std::int32_t col = anchored ? ent - 1 : ent;
        row.push_back({col, c.blocks.data() + k * bs});
      }
      std::sort(row.begin(), row.end(),
                [](const Slot& a, const Slot& b) { return a.col < b.col; });
    };

    detail::parallel_for(nrows, [&](std::int64_t begin, std::int64_t end) {
      std::vector<Slot> row;
      row.reserve(contribs.size());
      for (std::int64_t k = begin; k < end; ++k) {
        collect_row(k, row);
        std::int64_t merged = 0;
        for (std::size_t i = 0; i < row.size(); ++i)
          if (i == 0 || row[i].col != row[i - 1].col) ++merged;
        m.row_ptr[static_cast<std::size_t>(k) + 1] = merged;
      }
    });
    for (std::int64_t k = 0; k < nrows; ++k) m.row_ptr[k + 1] += m.row_ptr[k];
    m.col_idx.resize(static_cast<std::size_t>(m.row_ptr.back()));
    m.values.assign(static_cast<std::size_t>(m.row_ptr.back()) * bs, 0.0);
    detail::parallel_for(nrows, [&](std::int64_t begin, std::int64_t end) {
      std::vector<Slot> row;
      row.reserve(contribs.size());
      for (std::int64_t k = begin; k < end; ++k) {
        collect_row(k, row);
        std::int64_t slot = m.row_ptr[k];
        for (std::size_t i = 0; i < row.size(); ++i) {
          if (i > 0 && row[i].col == row[i - 1].col) {
            double* dst = m.block(slot - 1);
            for (int t = 0; t < bs; ++t) dst[t] += row[i].block[t];
          } else {
            m.col_idx[slot] = row[i].col;
            double* dst = m.block(slot);
            for (int t = 0; t < bs; ++t) dst[t] = row[i].block[t];
            ++slot;
          }
        }
      }
    });
    return m;
  };

  if (!acc.pose.empty())
    out.j_pose = build(acc.pose, nodes_[static_cast<std::size_t>(pose_leaf_)]);
  else if (pose_leaf_ >= 0) {
    const Node& leaf = nodes_[static_cast<std::size_t>(pose_leaf_)];
    out.j_pose = BsrMatrix::empty(
        nrows, leaf.group.count - (leaf.group.anchor_first ? 1 : 0), ow, 6);
  }
  if (!acc.point.empty())
    out.j_point = build(acc.point, nodes_[static_cast<std::size_t>(point_leaf_)]);
  else if (point_leaf_ >= 0) {
    const Node& leaf = nodes_[static_cast<std::size_t>(point_leaf_)];
    out.j_point = BsrMatrix::empty(nrows, leaf.group.count, ow, 3);
  }
  return out;
}

}  // namespace traceopt
