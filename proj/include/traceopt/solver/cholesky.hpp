#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "traceopt/bsr.hpp"
#include "traceopt/csr.hpp"
#include "traceopt/errors.hpp"

namespace traceopt {

struct SolveStats {
  std::int64_t iterations = 0;  // 0 for the direct solver
  double relative_residual = 0.0;
  bool converged = false;
  std::vector<double> residual_history;  // PCG only: preconditioned norms
};

/// Pattern-only analysis of A = L L^T, cached across numeric factorizations:
/// elimination ordering, elimination tree, and the per-column fill pattern
/// of L. Also keeps the gather map from the input values into the permuted
/// upper triangle so numeric phases do no index work beyond a copy.
struct SymbolicFactor {
  std::int64_t n = 0;
  std::vector<std::int32_t> perm;      // perm[new] = old
  std::vector<std::int32_t> inv_perm;  // inv_perm[old] = new
  std::vector<std::int32_t> parent;    // elimination tree (permuted indices)
  std::vector<std::int64_t> l_col_ptr;
  std::vector<std::int32_t> l_row_idx;
  // Permuted upper triangle of A stored by column, with source value slots.
  std::vector<std::int64_t> upper_col_ptr;
  std::vector<std::int32_t> upper_row_idx;
  std::vector<std::int64_t> upper_src;
  std::int64_t a_nnz = 0;

  std::int64_t l_nnz() const { return static_cast<std::int64_t>(l_row_idx.size()); }
};

namespace detail {

/// Natural ordering below this size; approximate minimum degree above.
inline constexpr std::int64_t kNaturalOrderingLimit = 64;

inline std::vector<std::int32_t> fill_reducing_ordering(const CsrMatrix& a) {
  const std::int64_t n = a.n_rows;
  std::vector<std::int32_t> perm(static_cast<std::size_t>(n));
  if (n <= kNaturalOrderingLimit) {
    std::iota(perm.begin(), perm.end(), 0);
    return perm;
  }
  Eigen::SparseMatrix<double, Eigen::ColMajor, std::int32_t> pattern(n, n);
  {
    std::vector<Eigen::Triplet<double, std::int32_t>> trips;
    trips.reserve(static_cast<std::size_t>(a.nnz()));
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p)
        trips.emplace_back(static_cast<std::int32_t>(r), a.col_idx[p], 1.0);
    pattern.setFromTriplets(trips.begin(), trips.end());
  }
  Eigen::AMDOrdering<std::int32_t> amd;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, std::int32_t> p;
  amd(pattern, p);
  for (std::int64_t k = 0; k < n; ++k) perm[k] = p.indices()[k];
  return perm;
}

}  // namespace detail

/// Symbolic Cholesky analysis of a structurally symmetric SPD pattern.
inline SymbolicFactor cholesky_symbolic(const CsrMatrix& a) {
  if (a.n_rows != a.n_cols) throw std::invalid_argument("cholesky_symbolic: matrix not square");
  sparse_stats().cholesky_symbolic.fetch_add(1);
  const std::int64_t n = a.n_rows;

  SymbolicFactor sym;
  sym.n = n;
  sym.a_nnz = a.nnz();
  sym.perm = detail::fill_reducing_ordering(a);
  sym.inv_perm.resize(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) sym.inv_perm[sym.perm[k]] = static_cast<std::int32_t>(k);

  // Permuted upper triangle, by column, remembering where each value lives.
  std::vector<std::int64_t> col_count(static_cast<std::size_t>(n) + 1, 0);
  std::vector<bool> has_diag(static_cast<std::size_t>(n), false);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p) {
      const std::int32_t i = sym.inv_perm[r];
      const std::int32_t j = sym.inv_perm[a.col_idx[p]];
      if (i == j) has_diag[static_cast<std::size_t>(i)] = true;
      if (i <= j) ++col_count[static_cast<std::size_t>(j) + 1];
    }
  }
  for (std::int64_t k = 0; k < n; ++k) {
    if (!has_diag[static_cast<std::size_t>(k)])
      throw std::invalid_argument("cholesky_symbolic: structurally singular (empty diagonal)");
  }
  sym.upper_col_ptr.assign(col_count.begin(), col_count.end());
  std::partial_sum(sym.upper_col_ptr.begin(), sym.upper_col_ptr.end(), sym.upper_col_ptr.begin());
  sym.upper_row_idx.resize(static_cast<std::size_t>(sym.upper_col_ptr.back()));
  sym.upper_src.resize(sym.upper_row_idx.size());
  {
    std::vector<std::int64_t> cursor(sym.upper_col_ptr.begin(), sym.upper_col_ptr.end() - 1);
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p) {
        const std::int32_t i = sym.inv_perm[r];
        const std::int32_t j = sym.inv_perm[a.col_idx[p]];
        if (i > j) continue;
        const std::int64_t slot = cursor[static_cast<std::size_t>(j)]++;
        sym.upper_row_idx[slot] = i;
        sym.upper_src[slot] = p;
      }
    }
  }

  // Elimination tree with path compression (ancestor array).
  sym.parent.assign(static_cast<std::size_t>(n), -1);
  std::vector<std::int32_t> ancestor(static_cast<std::size_t>(n), -1);
  for (std::int64_t k = 0; k < n; ++k) {
    for (std::int64_t p = sym.upper_col_ptr[k]; p < sym.upper_col_ptr[k + 1]; ++p) {
      std::int32_t i = sym.upper_row_idx[p];
      while (i != -1 && i < k) {
        const std::int32_t next = ancestor[i];
        ancestor[i] = static_cast<std::int32_t>(k);
        if (next == -1) sym.parent[i] = static_cast<std::int32_t>(k);
        i = next;
      }
    }
  }

  // Row subtree walks give both column counts and the fill pattern of L.
  std::vector<std::int64_t> l_count(static_cast<std::size_t>(n), 1);  // diagonal
  std::vector<std::int32_t> mark(static_cast<std::size_t>(n), -1);
  std::vector<std::int32_t> stack(static_cast<std::size_t>(n));
  std::vector<std::vector<std::int32_t>> rows_of_col;  // transient, column-major fill
  for (std::int64_t k = 0; k < n; ++k) {
    mark[k] = static_cast<std::int32_t>(k);
    for (std::int64_t p = sym.upper_col_ptr[k]; p < sym.upper_col_ptr[k + 1]; ++p) {
      std::int32_t i = sym.upper_row_idx[p];
      int len = 0;
      while (mark[i] != static_cast<std::int32_t>(k)) {
        stack[len++] = i;
        mark[i] = static_cast<std::int32_t>(k);
        i = sym.parent[i];
      }
      while (len > 0) ++l_count[stack[--len]];
    }
  }
  sym.l_col_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::int64_t j = 0; j < n; ++j) sym.l_col_ptr[j + 1] = sym.l_col_ptr[j] + l_count[j];
  sym.l_row_idx.resize(static_cast<std::size_t>(sym.l_col_ptr.back()));
  {
    std::vector<std::int64_t> cursor(sym.l_col_ptr.begin(), sym.l_col_ptr.end() - 1);
    std::fill(mark.begin(), mark.end(), -1);
    for (std::int64_t k = 0; k < n; ++k) {
      sym.l_row_idx[cursor[k]++] = static_cast<std::int32_t>(k);  // L(k,k)
      mark[k] = static_cast<std::int32_t>(k);
      for (std::int64_t p = sym.upper_col_ptr[k]; p < sym.upper_col_ptr[k + 1]; ++p) {
        std::int32_t i = sym.upper_row_idx[p];
        int len = 0;
        while (mark[i] != static_cast<std::int32_t>(k)) {
          stack[len++] = i;
          mark[i] = static_cast<std::int32_t>(k);
          i = sym.parent[i];
        }
        while (len > 0) sym.l_row_idx[cursor[stack[--len]]++] = static_cast<std::int32_t>(k);
      }
    }
  }
  return sym;
}

namespace detail {

/// Up-looking numeric factorization over the cached pattern. Returns the
/// values of L aligned with sym.l_row_idx; throws NotSpdError on a
/// non-positive pivot.
inline std::vector<double> cholesky_factorize(const SymbolicFactor& sym, const CsrMatrix& a) {
  if (a.n_rows != sym.n || a.nnz() != sym.a_nnz)
    throw std::invalid_argument("cholesky_factorize: matrix does not match symbolic pattern");
  sparse_stats().cholesky_numeric.fetch_add(1);
  const std::int64_t n = sym.n;
  std::vector<double> lx(sym.l_row_idx.size(), 0.0);
  std::vector<std::int64_t> cursor(sym.l_col_ptr.begin(), sym.l_col_ptr.end() - 1);
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  std::vector<std::int32_t> mark(static_cast<std::size_t>(n), -1);
  std::vector<std::int32_t> stack(static_cast<std::size_t>(n));
  std::vector<std::int32_t> pattern(static_cast<std::size_t>(n));

  for (std::int64_t k = 0; k < n; ++k) {
    // Row pattern of L(k, :) via the elimination tree, in topological order.
    int top = static_cast<int>(n);
    mark[k] = static_cast<std::int32_t>(k);
    double diag = 0.0;
    for (std::int64_t p = sym.upper_col_ptr[k]; p < sym.upper_col_ptr[k + 1]; ++p) {
      const std::int32_t row = sym.upper_row_idx[p];
      const double v = a.values[sym.upper_src[p]];
      if (row == k) {
        diag += v;
        continue;
      }
      x[row] += v;  // duplicates accumulate
      std::int32_t i = row;
      int len = 0;
      while (mark[i] != static_cast<std::int32_t>(k)) {
        stack[len++] = i;
        mark[i] = static_cast<std::int32_t>(k);
        i = sym.parent[i];
      }
      while (len > 0) pattern[--top] = stack[--len];
    }
    double d = diag;
    for (int t = top; t < n; ++t) {
      const std::int32_t j = pattern[t];
      const double ljj = lx[sym.l_col_ptr[j]];
      const double lkj = x[j] / ljj;
      x[j] = 0.0;
      for (std::int64_t p = sym.l_col_ptr[j] + 1; p < cursor[j]; ++p)
        x[sym.l_row_idx[p]] -= lx[p] * lkj;
      d -= lkj * lkj;
      lx[cursor[j]++] = lkj;  // L(k, j) lands in column j
    }
    if (!(d > 0.0)) throw NotSpdError("cholesky: non-positive pivot", static_cast<int>(k));
    lx[cursor[k]++] = std::sqrt(d);
  }
  return lx;
}

inline void lower_solve(const SymbolicFactor& sym, const std::vector<double>& lx,
                        std::vector<double>& x) {
  for (std::int64_t j = 0; j < sym.n; ++j) {
    x[j] /= lx[sym.l_col_ptr[j]];
    for (std::int64_t p = sym.l_col_ptr[j] + 1; p < sym.l_col_ptr[j + 1]; ++p)
      x[sym.l_row_idx[p]] -= lx[p] * x[j];
  }
}

inline void upper_solve(const SymbolicFactor& sym, const std::vector<double>& lx,
                        std::vector<double>& x) {
  for (std::int64_t j = sym.n - 1; j >= 0; --j) {
    for (std::int64_t p = sym.l_col_ptr[j] + 1; p < sym.l_col_ptr[j + 1]; ++p)
      x[j] -= lx[p] * x[sym.l_row_idx[p]];
    x[j] /= lx[sym.l_col_ptr[j]];
  }
}

}  // namespace detail

/// Numeric factorize + two triangular solves on the cached symbolic pattern.
inline std::pair<std::vector<double>, SolveStats> cholesky_solve(const SymbolicFactor& sym,
                                                                 const CsrMatrix& a,
                                                                 std::span<const double> b) {
  if (static_cast<std::int64_t>(b.size()) != sym.n)
    throw std::invalid_argument("cholesky_solve: rhs length mismatch");
  const std::vector<double> lx = detail::cholesky_factorize(sym, a);

  std::vector<double> y(static_cast<std::size_t>(sym.n));
  for (std::int64_t k = 0; k < sym.n; ++k) y[k] = b[sym.perm[k]];
  detail::lower_solve(sym, lx, y);
  detail::upper_solve(sym, lx, y);
  std::vector<double> x(static_cast<std::size_t>(sym.n));
  for (std::int64_t k = 0; k < sym.n; ++k) x[sym.perm[k]] = y[k];

  SolveStats stats;
  const std::vector<double> ax = spmv(a, x);
  double rn = 0.0, bn = 0.0;
  for (std::int64_t i = 0; i < sym.n; ++i) {
    const double d = ax[i] - b[i];
    rn += d * d;
    bn += b[i] * b[i];
  }
  stats.relative_residual = bn > 0.0 ? std::sqrt(rn / bn) : std::sqrt(rn);
  stats.converged = stats.relative_residual <= 1e-10;
  return {std::move(x), stats};
}

}  // namespace traceopt
