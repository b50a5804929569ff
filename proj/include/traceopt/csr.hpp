#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "traceopt/detail/parallel.hpp"

namespace traceopt {

/// Scalar compressed-sparse-row matrix; the solver-facing flattening of the
/// block-sparse normal equations.
struct CsrMatrix {
  std::int64_t n_rows = 0;
  std::int64_t n_cols = 0;
  std::vector<std::int64_t> row_ptr;
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;

  std::int64_t nnz() const { return static_cast<std::int64_t>(col_idx.size()); }
};

inline std::vector<double> spmv(const CsrMatrix& a, std::span<const double> x) {
  if (static_cast<std::int64_t>(x.size()) != a.n_cols)
    throw std::invalid_argument("spmv: vector length mismatch");
  std::vector<double> y(static_cast<std::size_t>(a.n_rows), 0.0);
  detail::parallel_for(a.n_rows, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t r = begin; r < end; ++r) {
      double s = 0.0;
      for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p)
        s += a.values[p] * x[a.col_idx[p]];
      y[r] = s;
    }
  });
  return y;
}

/// Value index of each diagonal entry; missing diagonals are an error.
inline std::vector<std::int64_t> csr_diag_positions(const CsrMatrix& a) {
  if (a.n_rows != a.n_cols) throw std::invalid_argument("diagonal op: matrix not square");
  std::vector<std::int64_t> pos(static_cast<std::size_t>(a.n_rows), -1);
  for (std::int64_t r = 0; r < a.n_rows; ++r) {
    for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p) {
      if (a.col_idx[p] == r) {
        pos[r] = p;
        break;
      }
    }
    if (pos[r] < 0) throw std::invalid_argument("diagonal op: missing diagonal entry");
  }
  return pos;
}

inline Eigen::MatrixXd to_dense(const CsrMatrix& a, std::int64_t max_elements = 16'000'000) {
  if (a.n_rows * a.n_cols > max_elements)
    throw std::invalid_argument("to_dense: exceeds oracle size limit");
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(a.n_rows, a.n_cols);
  for (std::int64_t r = 0; r < a.n_rows; ++r)
    for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p)
      dense(r, a.col_idx[p]) = a.values[p];
  return dense;
}

inline CsrMatrix csr_from_dense(const Eigen::MatrixXd& dense, double drop_tol = 0.0) {
  CsrMatrix m;
  m.n_rows = dense.rows();
  m.n_cols = dense.cols();
  m.row_ptr.push_back(0);
  for (std::int64_t r = 0; r < m.n_rows; ++r) {
    for (std::int64_t c = 0; c < m.n_cols; ++c) {
      if (std::abs(dense(r, c)) > drop_tol) {
        m.col_idx.push_back(static_cast<std::int32_t>(c));
        m.values.push_back(dense(r, c));
      }
    }
    m.row_ptr.push_back(m.nnz());
  }
  return m;
}

}  // namespace traceopt
