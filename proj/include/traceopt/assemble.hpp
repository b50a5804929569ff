#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "traceopt/bsr.hpp"
#include "traceopt/csr.hpp"
#include "traceopt/spgemm.hpp"
#include "traceopt/trace.hpp"

namespace traceopt {

/// Builds the damped-normal-equation inputs A = J^T J and b = -J^T r from a
/// JacobianPair. The normal matrix is a 2x2 block arrangement of four sparse
/// products (pose-pose, pose-point, point-pose, point-point), flattened into
/// one scalar CSR for the solvers. Everything pattern-dependent — transpose
/// plans, multiplication tables, the block-to-scalar scatter, and the
/// diagonal positions — is computed once and reused while the sparsity stays
/// fixed.
class NormalEquations {
 public:
  bool initialized() const { return initialized_; }

  void initialize(const JacobianPair& j) {
    quadrants_.clear();
    quadrant_offsets_.clear();
    has_pose_ = j.j_pose.has_value();
    has_point_ = j.j_point.has_value();
    if (!has_pose_ && !has_point_)
      throw std::invalid_argument("NormalEquations: empty Jacobian");

    pose_cols_ = has_pose_ ? j.j_pose->block_cols : 0;
    point_cols_ = has_point_ ? j.j_point->block_cols : 0;
    pose_scalar_cols_ = has_pose_ ? std::int64_t{pose_cols_} * j.j_pose->bc : 0;
    point_scalar_cols_ = has_point_ ? std::int64_t{point_cols_} * j.j_point->bc : 0;
    n_ = pose_scalar_cols_ + point_scalar_cols_;

    if (has_pose_) pose_t_plan_ = transpose_symbolic(*j.j_pose);
    if (has_point_) point_t_plan_ = transpose_symbolic(*j.j_point);
    BsrMatrix jpt, jlt;
    if (has_pose_) transpose_numeric(pose_t_plan_, *j.j_pose, jpt);
    if (has_point_) transpose_numeric(point_t_plan_, *j.j_point, jlt);

    // Quadrants in scalar-row order: [CC CL; LC LL].
    if (has_pose_) add_quadrant(jpt, *j.j_pose, 0, 0);
    if (has_pose_ && has_point_) {
      add_quadrant(jpt, *j.j_point, 0, pose_scalar_cols_);
      add_quadrant(jlt, *j.j_pose, pose_scalar_cols_, 0);
    }
    if (has_point_) add_quadrant(jlt, *j.j_point, pose_scalar_cols_, pose_scalar_cols_);

    build_csr_pattern();
    diag_pos_ = csr_diag_positions(a_);
    initialized_ = true;
  }

  /// Numeric phase: recomputes A values and b for the fixed pattern.
  void assemble(const JacobianPair& j, std::span<const double> residuals) {
    if (!initialized_) throw std::invalid_argument("NormalEquations: not initialized");
    BsrMatrix jpt, jlt;
    if (has_pose_) transpose_numeric(pose_t_plan_, *j.j_pose, jpt);
    if (has_point_) transpose_numeric(point_t_plan_, *j.j_point, jlt);

    std::size_t q = 0;
    if (has_pose_) run_quadrant(q++, jpt, *j.j_pose);
    if (has_pose_ && has_point_) {
      run_quadrant(q++, jpt, *j.j_point);
      run_quadrant(q++, jlt, *j.j_pose);
    }
    if (has_point_) run_quadrant(q++, jlt, *j.j_point);

    b_.assign(static_cast<std::size_t>(n_), 0.0);
    if (has_pose_) {
      const std::vector<double> bp = spmv(jpt, residuals);
      for (std::int64_t i = 0; i < pose_scalar_cols_; ++i) b_[i] = -bp[i];
    }
    if (has_point_) {
      const std::vector<double> bl = spmv(jlt, residuals);
      for (std::int64_t i = 0; i < point_scalar_cols_; ++i) b_[pose_scalar_cols_ + i] = -bl[i];
    }
  }

  const CsrMatrix& matrix() const { return a_; }
  std::span<const double> rhs() const { return b_; }
  std::int64_t n() const { return n_; }
  int block_cols_total() const { return pose_cols_ + point_cols_; }
  std::int64_t pose_scalar_cols() const { return pose_scalar_cols_; }

  /// Damped copy of A: diagonal clamped into [clamp_min, clamp_max], then
  /// scaled by (1 + lambda). Off-diagonal entries untouched.
  CsrMatrix damped(double lambda, double clamp_min, double clamp_max) const {
    CsrMatrix out = a_;
    for (std::int64_t p : diag_pos_) {
      const double d = std::clamp(out.values[p], clamp_min, clamp_max);
      out.values[p] = d * (1.0 + lambda);
    }
    return out;
  }

 private:
  struct Quadrant {
    SymbolicProduct table;
    BsrMatrix value;
    std::vector<std::int64_t> row_starts;  // per stored block row-slice -> CSR value index
  };

  void add_quadrant(const BsrMatrix& a, const BsrMatrix& b, std::int64_t row_off,
                    std::int64_t col_off) {
    Quadrant q;
    q.table = spgemm_symbolic(a, b);
    quadrant_offsets_.push_back({row_off, col_off});
    quadrants_.push_back(std::move(q));
  }

  void run_quadrant(std::size_t qi, const BsrMatrix& a, const BsrMatrix& b) {
    Quadrant& q = quadrants_[qi];
    spgemm_numeric(q.table, a, b, q.value);
    // Scatter block scalars into the CSR values via the cached row starts.
    const int br = q.value.br, bc = q.value.bc;
    const std::int64_t nb = q.value.nnz_blocks();
    detail::parallel_for(nb, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t blk = begin; blk < end; ++blk) {
        const double* src = q.value.block(blk);
        for (int i = 0; i < br; ++i) {
          double* dst = a_.values.data() + q.row_starts[blk * br + i];
          for (int j = 0; j < bc; ++j) dst[j] = src[i * bc + j];
        }
      }
    });
  }

  void build_csr_pattern() {
    a_ = CsrMatrix{};
    a_.n_rows = n_;
    a_.n_cols = n_;
    a_.row_ptr.assign(static_cast<std::size_t>(n_) + 1, 0);

    // Count scalar entries per row. Quadrants tile disjoint column ranges,
    // so each scalar row is the concatenation of its quadrants' rows.
    for (std::size_t qi = 0; qi < quadrants_.size(); ++qi) {
      const auto& t = quadrants_[qi].table;
      const auto [row_off, col_off] = quadrant_offsets_[qi];
      for (int r = 0; r < t.block_rows; ++r) {
        const std::int64_t blocks = t.row_ptr[r + 1] - t.row_ptr[r];
        for (int i = 0; i < t.br; ++i)
          a_.row_ptr[row_off + std::int64_t{r} * t.br + i + 1] += blocks * t.bc;
      }
    }
    for (std::int64_t r = 0; r < n_; ++r) a_.row_ptr[r + 1] += a_.row_ptr[r];
    a_.col_idx.resize(static_cast<std::size_t>(a_.row_ptr.back()));
    a_.values.assign(a_.col_idx.size(), 0.0);

    std::vector<std::int64_t> cursor(a_.row_ptr.begin(), a_.row_ptr.end() - 1);
    // Fill column indices in quadrant order; CC precedes CL on pose rows and
    // LC precedes LL on point rows, matching ascending scalar columns.
    for (std::size_t qi = 0; qi < quadrants_.size(); ++qi) {
      Quadrant& q = quadrants_[qi];
      const auto& t = q.table;
      const auto [row_off, col_off] = quadrant_offsets_[qi];
      q.row_starts.assign(static_cast<std::size_t>(t.nnz_blocks()) * t.br, 0);
      for (int r = 0; r < t.block_rows; ++r) {
        for (std::int64_t blk = t.row_ptr[r]; blk < t.row_ptr[r + 1]; ++blk) {
          const std::int64_t col0 = col_off + std::int64_t{t.col_idx[blk]} * t.bc;
          for (int i = 0; i < t.br; ++i) {
            const std::int64_t row = row_off + std::int64_t{r} * t.br + i;
            q.row_starts[blk * t.br + i] = cursor[row];
            for (int jj = 0; jj < t.bc; ++jj)
              a_.col_idx[cursor[row] + jj] = static_cast<std::int32_t>(col0 + jj);
            cursor[row] += t.bc;
          }
        }
      }
    }
  }

  bool initialized_ = false;
  bool has_pose_ = false, has_point_ = false;
  int pose_cols_ = 0, point_cols_ = 0;
  std::int64_t pose_scalar_cols_ = 0, point_scalar_cols_ = 0, n_ = 0;
  TransposePlan pose_t_plan_, point_t_plan_;
  std::vector<Quadrant> quadrants_;
  std::vector<std::pair<std::int64_t, std::int64_t>> quadrant_offsets_;
  CsrMatrix a_;
  std::vector<double> b_;
  std::vector<std::int64_t> diag_pos_;
};

}  // namespace traceopt
