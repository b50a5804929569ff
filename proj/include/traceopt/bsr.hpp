#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "traceopt/detail/parallel.hpp"

namespace traceopt {

/// Counters behind the cache-reuse assertions: symbolic phases must run once
/// per pattern, numeric phases every iteration.
struct SparseStats {
  std::atomic<std::int64_t> spgemm_symbolic{0};
  std::atomic<std::int64_t> spgemm_numeric{0};
  std::atomic<std::int64_t> cholesky_symbolic{0};
  std::atomic<std::int64_t> cholesky_numeric{0};

  void reset() {
    spgemm_symbolic = 0;
    spgemm_numeric = 0;
    cholesky_symbolic = 0;
    cholesky_numeric = 0;
  }
};

inline SparseStats& sparse_stats() {
  static SparseStats stats;
  return stats;
}

/// Block-Sparse-Row matrix: dense br x bc blocks (row-major within a block),
/// CSR-style indexing at block granularity. Column indices are strictly
/// increasing within each block row; explicitly stored zero blocks are kept.
struct BsrMatrix {
  int block_rows = 0;
  int block_cols = 0;
  int br = 0;
  int bc = 0;
  std::vector<std::int64_t> row_ptr;  // length block_rows + 1
  std::vector<std::int32_t> col_idx;  // per stored block
  std::vector<double> values;         // nnz_blocks * br * bc

  BsrMatrix() = default;

  static BsrMatrix empty(int block_rows, int block_cols, int br, int bc) {
    BsrMatrix m;
    m.block_rows = block_rows;
    m.block_cols = block_cols;
    m.br = br;
    m.bc = bc;
    m.row_ptr.assign(static_cast<std::size_t>(block_rows) + 1, 0);
    return m;
  }

  std::int64_t nnz_blocks() const { return static_cast<std::int64_t>(col_idx.size()); }
  int block_size() const { return br * bc; }
  std::int64_t rows() const { return std::int64_t{block_rows} * br; }
  std::int64_t cols() const { return std::int64_t{block_cols} * bc; }

  double* block(std::int64_t b) { return values.data() + b * block_size(); }
  const double* block(std::int64_t b) const { return values.data() + b * block_size(); }

  bool same_pattern(const BsrMatrix& o) const {
    return block_rows == o.block_rows && block_cols == o.block_cols && br == o.br &&
           bc == o.bc && row_ptr == o.row_ptr && col_idx == o.col_idx;
  }

  void check_valid() const {
    if (row_ptr.size() != static_cast<std::size_t>(block_rows) + 1 || row_ptr.front() != 0 ||
        row_ptr.back() != nnz_blocks()) {
      throw std::invalid_argument("BsrMatrix: bad row_ptr");
    }
    for (int r = 0; r < block_rows; ++r) {
      if (row_ptr[r] > row_ptr[r + 1]) throw std::invalid_argument("BsrMatrix: row_ptr not monotone");
      for (std::int64_t b = row_ptr[r]; b < row_ptr[r + 1]; ++b) {
        if (col_idx[b] < 0 || col_idx[b] >= block_cols)
          throw std::invalid_argument("BsrMatrix: column out of range");
        if (b > row_ptr[r] && col_idx[b] <= col_idx[b - 1])
          throw std::invalid_argument("BsrMatrix: columns not strictly increasing");
      }
    }
    if (values.size() != static_cast<std::size_t>(nnz_blocks()) * block_size())
      throw std::invalid_argument("BsrMatrix: values length mismatch");
  }
};

struct BlockTriplet {
  int row = 0;
  int col = 0;
  std::vector<double> block;
};

/// Assembles a valid BSR matrix from unordered block triplets; duplicate
/// (row, col) entries are summed.
inline BsrMatrix bsr_from_triplets(int block_rows, int block_cols, int br, int bc,
                                   std::vector<BlockTriplet> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const BlockTriplet& a, const BlockTriplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  BsrMatrix m = BsrMatrix::empty(block_rows, block_cols, br, bc);
  const int bs = br * bc;
  for (std::size_t i = 0; i < triplets.size();) {
    const auto& t = triplets[i];
    if (t.row < 0 || t.row >= block_rows || t.col < 0 || t.col >= block_cols)
      throw std::invalid_argument("bsr_from_triplets: block index out of range");
    if (static_cast<int>(t.block.size()) != bs)
      throw std::invalid_argument("bsr_from_triplets: block shape mismatch");
    m.col_idx.push_back(t.col);
    m.values.insert(m.values.end(), t.block.begin(), t.block.end());
    double* dst = m.values.data() + (m.col_idx.size() - 1) * bs;
    std::size_t j = i + 1;
    while (j < triplets.size() && triplets[j].row == t.row && triplets[j].col == t.col) {
      for (int k = 0; k < bs; ++k) dst[k] += triplets[j].block[k];
      ++j;
    }
    ++m.row_ptr[t.row + 1];
    i = j;
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

/// Pattern-and-permutation plan for a transpose; numeric re-runs only move
/// values.
struct TransposePlan {
  int block_rows = 0, block_cols = 0, br = 0, bc = 0;
  std::vector<std::int64_t> row_ptr;
  std::vector<std::int32_t> col_idx;
  std::vector<std::int64_t> src_block;  // source block feeding each output block
};

inline TransposePlan transpose_symbolic(const BsrMatrix& a) {
  TransposePlan p;
  p.block_rows = a.block_cols;
  p.block_cols = a.block_rows;
  p.br = a.bc;
  p.bc = a.br;
  p.row_ptr.assign(static_cast<std::size_t>(p.block_rows) + 1, 0);
  for (std::int32_t c : a.col_idx) ++p.row_ptr[c + 1];
  std::partial_sum(p.row_ptr.begin(), p.row_ptr.end(), p.row_ptr.begin());
  p.col_idx.resize(a.col_idx.size());
  p.src_block.resize(a.col_idx.size());
  std::vector<std::int64_t> cursor(p.row_ptr.begin(), p.row_ptr.end() - 1);
  for (int r = 0; r < a.block_rows; ++r) {
    for (std::int64_t b = a.row_ptr[r]; b < a.row_ptr[r + 1]; ++b) {
      const std::int64_t slot = cursor[a.col_idx[b]]++;
      p.col_idx[slot] = r;
      p.src_block[slot] = b;
    }
  }
  return p;
}

inline void transpose_numeric(const TransposePlan& plan, const BsrMatrix& a, BsrMatrix& out) {
  out.block_rows = plan.block_rows;
  out.block_cols = plan.block_cols;
  out.br = plan.br;
  out.bc = plan.bc;
  out.row_ptr = plan.row_ptr;
  out.col_idx = plan.col_idx;
  out.values.resize(plan.src_block.size() * static_cast<std::size_t>(plan.br) * plan.bc);
  const std::int64_t n = static_cast<std::int64_t>(plan.src_block.size());
  detail::parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t b = begin; b < end; ++b) {
      const double* src = a.block(plan.src_block[b]);
      double* dst = out.block(b);
      for (int r = 0; r < a.br; ++r)
        for (int c = 0; c < a.bc; ++c) dst[c * a.br + r] = src[r * a.bc + c];
    }
  });
}

inline BsrMatrix transpose(const BsrMatrix& a) {
  BsrMatrix out;
  transpose_numeric(transpose_symbolic(a), a, out);
  return out;
}

/// y = A x with a fixed accumulation order inside each row.
inline std::vector<double> spmv(const BsrMatrix& a, std::span<const double> x) {
  if (static_cast<std::int64_t>(x.size()) != a.cols())
    throw std::invalid_argument("spmv: vector length mismatch");
  std::vector<double> y(static_cast<std::size_t>(a.rows()), 0.0);
  detail::parallel_for(a.block_rows, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t r = begin; r < end; ++r) {
      double* yr = y.data() + r * a.br;
      for (std::int64_t b = a.row_ptr[r]; b < a.row_ptr[r + 1]; ++b) {
        const double* blk = a.block(b);
        const double* xc = x.data() + std::int64_t{a.col_idx[b]} * a.bc;
        for (int i = 0; i < a.br; ++i) {
          double s = 0.0;
          for (int j = 0; j < a.bc; ++j) s += blk[i * a.bc + j] * xc[j];
          yr[i] += s;
        }
      }
    }
  });
  return y;
}

/// Locates the diagonal block of each block row; every one must be stored.
inline std::vector<std::int64_t> diag_block_indices(const BsrMatrix& a) {
  if (a.block_rows != a.block_cols || a.br != a.bc)
    throw std::invalid_argument("diagonal op: matrix not square at block level");
  std::vector<std::int64_t> out(static_cast<std::size_t>(a.block_rows));
  for (int r = 0; r < a.block_rows; ++r) {
    std::int64_t found = -1;
    for (std::int64_t b = a.row_ptr[r]; b < a.row_ptr[r + 1]; ++b) {
      if (a.col_idx[b] == r) {
        found = b;
        break;
      }
    }
    if (found < 0) throw std::invalid_argument("diagonal op: missing diagonal block");
    out[static_cast<std::size_t>(r)] = found;
  }
  return out;
}

/// Returns A with every scalar diagonal entry d replaced by d * (1 + lambda).
inline BsrMatrix diag_scale_add(const BsrMatrix& a, double lambda) {
  const auto diag = diag_block_indices(a);
  BsrMatrix out = a;
  for (std::int64_t b : diag) {
    double* blk = out.block(b);
    for (int i = 0; i < out.br; ++i) blk[i * out.bc + i] *= (1.0 + lambda);
  }
  return out;
}

/// Returns A with every scalar diagonal entry clamped into [min, max].
inline BsrMatrix diag_clamp(const BsrMatrix& a, double min, double max) {
  if (min > max) throw std::invalid_argument("diag_clamp: min > max");
  const auto diag = diag_block_indices(a);
  BsrMatrix out = a;
  for (std::int64_t b : diag) {
    double* blk = out.block(b);
    for (int i = 0; i < out.br; ++i)
      blk[i * out.bc + i] = std::clamp(blk[i * out.bc + i], min, max);
  }
  return out;
}

inline std::vector<double> bsr_diagonal(const BsrMatrix& a) {
  const auto diag = diag_block_indices(a);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(a.rows()));
  for (std::int64_t b : diag) {
    const double* blk = a.block(b);
    for (int i = 0; i < a.br; ++i) out.push_back(blk[i * a.bc + i]);
  }
  return out;
}

/// Scatters the blocks into a dense matrix; refuses degenerate blowups.
inline Eigen::MatrixXd to_dense(const BsrMatrix& a, std::int64_t max_elements = 16'000'000) {
  if (a.rows() * a.cols() > max_elements)
    throw std::invalid_argument("to_dense: exceeds oracle size limit");
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  for (int r = 0; r < a.block_rows; ++r) {
    for (std::int64_t b = a.row_ptr[r]; b < a.row_ptr[r + 1]; ++b) {
      const double* blk = a.block(b);
      for (int i = 0; i < a.br; ++i)
        for (int j = 0; j < a.bc; ++j)
          dense(std::int64_t{r} * a.br + i, std::int64_t{a.col_idx[b]} * a.bc + j) =
              blk[i * a.bc + j];
    }
  }
  return dense;
}

/// Inverse of to_dense for test round-trips: stores only blocks with at
/// least one nonzero entry.
inline BsrMatrix from_dense(const Eigen::MatrixXd& dense, int br, int bc) {
  if (dense.rows() % br != 0 || dense.cols() % bc != 0)
    throw std::invalid_argument("from_dense: dimensions not divisible by block shape");
  const int block_rows = static_cast<int>(dense.rows()) / br;
  const int block_cols = static_cast<int>(dense.cols()) / bc;
  std::vector<BlockTriplet> triplets;
  for (int r = 0; r < block_rows; ++r) {
    for (int c = 0; c < block_cols; ++c) {
      const auto blk = dense.block(std::int64_t{r} * br, std::int64_t{c} * bc, br, bc);
      if (blk.cwiseAbs().maxCoeff() == 0.0) continue;
      BlockTriplet t;
      t.row = r;
      t.col = c;
      t.block.resize(static_cast<std::size_t>(br) * bc);
      for (int i = 0; i < br; ++i)
        for (int j = 0; j < bc; ++j) t.block[static_cast<std::size_t>(i) * bc + j] = blk(i, j);
      triplets.push_back(std::move(t));
    }
  }
  return bsr_from_triplets(block_rows, block_cols, br, bc, std::move(triplets));
}

/// Scalar-expanded Matrix Market coordinate dump for external inspection.
inline void write_matrix_market(const BsrMatrix& a, std::ostream& os) {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << a.rows() << " " << a.cols() << " " << a.nnz_blocks() * a.block_size() << "\n";
  os.precision(17);
  for (int r = 0; r < a.block_rows; ++r) {
    for (std::int64_t b = a.row_ptr[r]; b < a.row_ptr[r + 1]; ++b) {
      const double* blk = a.block(b);
      for (int i = 0; i < a.br; ++i)
        for (int j = 0; j < a.bc; ++j)
          os << (std::int64_t{r} * a.br + i + 1) << " "
             << (std::int64_t{a.col_idx[b]} * a.bc + j + 1) << " " << blk[i * a.bc + j]
             << "\n";
    }
  }
}

}  // namespace traceopt
