#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "traceopt/bsr.hpp"
#include "traceopt/detail/parallel.hpp"

namespace traceopt {

/// Cached blueprint of a sparse product C = A B: the output pattern plus,
/// for every output block, the ordered list of (A block, B block) pairs to
/// multiply-accumulate. Depends only on the input patterns, so one table
/// serves every iteration of an optimizer with fixed sparsity.
struct SymbolicProduct {
  int block_rows = 0, block_cols = 0;
  int br = 0, bc = 0;
  int inner = 0;  // shared block dimension (A.bc == B.br)
  std::vector<std::int64_t> row_ptr;
  std::vector<std::int32_t> col_idx;
  std::vector<std::int64_t> pair_ptr;  // pairs of output block b: [pair_ptr[b], pair_ptr[b+1])
  std::vector<std::int64_t> a_block;
  std::vector<std::int64_t> b_block;
  std::int64_t a_nnz = 0, b_nnz = 0;  // input sizes the table was built for

  std::int64_t nnz_blocks() const { return static_cast<std::int64_t>(col_idx.size()); }
};

/// Symbolic phase: boolean product of the two patterns. Pairs are ordered by
/// the shared index k, giving a fixed accumulation order.
inline SymbolicProduct spgemm_symbolic(const BsrMatrix& a, const BsrMatrix& b) {
  if (a.block_cols != b.block_rows || a.bc != b.br)
    throw std::invalid_argument("spgemm_symbolic: dimension mismatch");
  sparse_stats().spgemm_symbolic.fetch_add(1);

  SymbolicProduct p;
  p.block_rows = a.block_rows;
  p.block_cols = b.block_cols;
  p.br = a.br;
  p.bc = b.bc;
  p.inner = a.bc;
  p.a_nnz = a.nnz_blocks();
  p.b_nnz = b.nnz_blocks();
  p.row_ptr.assign(static_cast<std::size_t>(a.block_rows) + 1, 0);
  p.pair_ptr.push_back(0);

  struct Entry {
    std::int32_t j;
    std::int32_t k;
    std::int64_t ab;
    std::int64_t bb;
  };
  std::vector<Entry> row_entries;
  for (int i = 0; i < a.block_rows; ++i) {
    row_entries.clear();
    for (std::int64_t ab = a.row_ptr[i]; ab < a.row_ptr[i + 1]; ++ab) {
      const std::int32_t k = a.col_idx[ab];
      for (std::int64_t bb = b.row_ptr[k]; bb < b.row_ptr[k + 1]; ++bb) {
        row_entries.push_back({b.col_idx[bb], k, ab, bb});
      }
    }
    std::sort(row_entries.begin(), row_entries.end(), [](const Entry& x, const Entry& y) {
      return x.j != y.j ? x.j < y.j : x.k < y.k;
    });
    for (std::size_t e = 0; e < row_entries.size();) {
      const std::int32_t j = row_entries[e].j;
      p.col_idx.push_back(j);
      ++p.row_ptr[i + 1];
      while (e < row_entries.size() && row_entries[e].j == j) {
        p.a_block.push_back(row_entries[e].ab);
        p.b_block.push_back(row_entries[e].bb);
        ++e;
      }
      p.pair_ptr.push_back(static_cast<std::int64_t>(p.a_block.size()));
    }
  }
  for (std::size_t i = 1; i < p.row_ptr.size(); ++i) p.row_ptr[i] += p.row_ptr[i - 1];
  return p;
}

/// Numeric phase: multiply-accumulate following the cached table. The inputs
/// must carry the same patterns the table was built from.
inline void spgemm_numeric(const SymbolicProduct& table, const BsrMatrix& a, const BsrMatrix& b,
                           BsrMatrix& out) {
  if (a.bc != table.inner || b.br != table.inner || a.br != table.br || b.bc != table.bc ||
      a.nnz_blocks() != table.a_nnz || b.nnz_blocks() != table.b_nnz) {
    throw std::invalid_argument("spgemm_numeric: inputs do not match symbolic table");
  }
  sparse_stats().spgemm_numeric.fetch_add(1);

  out.block_rows = table.block_rows;
  out.block_cols = table.block_cols;
  out.br = table.br;
  out.bc = table.bc;
  out.row_ptr = table.row_ptr;
  out.col_idx = table.col_idx;
  out.values.assign(static_cast<std::size_t>(table.nnz_blocks()) * table.br * table.bc, 0.0);

  const int br = table.br, bc = table.bc, bk = table.inner;
  detail::parallel_for(table.nnz_blocks(), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t ob = begin; ob < end; ++ob) {
      double* dst = out.block(ob);
      for (std::int64_t pr = table.pair_ptr[ob]; pr < table.pair_ptr[ob + 1]; ++pr) {
        const double* ablk = a.block(table.a_block[pr]);
        const double* bblk = b.block(table.b_block[pr]);
        for (int r = 0; r < br; ++r) {
          for (int c = 0; c < bc; ++c) {
            double s = dst[r * bc + c];
            for (int t = 0; t < bk; ++t) s += ablk[r * bk + t] * bblk[t * bc + c];
            dst[r * bc + c] = s;
          }
        }
      }
    }
  });
}

inline BsrMatrix spgemm_numeric(const SymbolicProduct& table, const BsrMatrix& a,
                                const BsrMatrix& b) {
  BsrMatrix out;
  spgemm_numeric(table, a, b, out);
  return out;
}

/// One-shot product for callers without a cache.
inline BsrMatrix spgemm(const BsrMatrix& a, const BsrMatrix& b) {
  return spgemm_numeric(spgemm_symbolic(a, b), a, b);
}

}  // namespace traceopt
