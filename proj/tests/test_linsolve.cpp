#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "traceopt/detail/rng.hpp"
#include "traceopt/solver/cholesky.hpp"
#include "traceopt/solver/pcg.hpp"

using namespace traceopt;

namespace {

CsrMatrix diag_csr(const std::vector<double>& d) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return csr_from_dense(m);
}

// Sparse SPD by diagonal dominance over a random symmetric pattern.
CsrMatrix random_sparse_spd(detail::Rng& rng, int n, double density) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (rng.uniform() < density) {
        const double v = rng.normal();
        m(i, j) = v;
        m(j, i) = v;
      }
    }
  }
  for (int i = 0; i < n; ++i) m(i, i) = m.row(i).cwiseAbs().sum() + 1.0 + rng.uniform();
  return csr_from_dense(m);
}

std::vector<double> random_vector(detail::Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST(CholeskySymbolic, DiagonalPatternIsForest) {
  const CsrMatrix a = diag_csr({1, 2, 3, 4});
  const SymbolicFactor sym = cholesky_symbolic(a);
  EXPECT_EQ(sym.l_nnz(), 4);
  for (std::int32_t p : sym.parent) EXPECT_EQ(p, -1);
  for (std::int64_t j = 0; j < 4; ++j) EXPECT_EQ(sym.l_col_ptr[j + 1] - sym.l_col_ptr[j], 1);
}

TEST(CholeskySymbolic, ArrowheadFillsLastRow) {
  const int n = 6;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 10.0;
  for (int i = 0; i < n - 1; ++i) {
    m(n - 1, i) = 1.0;
    m(i, n - 1) = 1.0;
  }
  const SymbolicFactor sym = cholesky_symbolic(csr_from_dense(m));
  // Natural ordering at this size: every column reaches the last row.
  for (std::int64_t j = 0; j < n; ++j)
    EXPECT_EQ(sym.l_row_idx[sym.l_col_ptr[j + 1] - 1], n - 1) << "column " << j;
  EXPECT_EQ(sym.l_nnz(), 2 * n - 1);
}

TEST(CholeskySymbolic, TridiagonalHasNoFill) {
  const int n = 5;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 4.0;
  for (int i = 0; i + 1 < n; ++i) {
    m(i, i + 1) = -1.0;
    m(i + 1, i) = -1.0;
  }
  const SymbolicFactor sym = cholesky_symbolic(csr_from_dense(m));
  EXPECT_EQ(sym.l_nnz(), 2 * n - 1);  // band only
  for (int j = 0; j + 1 < n; ++j) EXPECT_EQ(sym.parent[j], j + 1);
}

TEST(CholeskySymbolic, StructurallySingularRejected) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  m(0, 2) = 1.0;
  m(2, 0) = 1.0;  // (2,2) empty
  EXPECT_THROW(cholesky_symbolic(csr_from_dense(m)), std::invalid_argument);
}

TEST(CholeskySolve, IdentityReturnsRhs) {
  const CsrMatrix a = diag_csr({1, 1, 1});
  const SymbolicFactor sym = cholesky_symbolic(a);
  const std::vector<double> b = {3.0, -1.0, 2.5};
  const auto [x, stats] = cholesky_solve(sym, a, b);
  EXPECT_EQ(x, b);
  EXPECT_TRUE(stats.converged);
  EXPECT_EQ(stats.iterations, 0);
}

TEST(CholeskySolve, KnownTwoByTwo) {
  Eigen::MatrixXd m(2, 2);
  m << 4, 2, 2, 3;
  const CsrMatrix a = csr_from_dense(m);
  const SymbolicFactor sym = cholesky_symbolic(a);
  const std::vector<double> b = {2.0, 5.0};
  const auto [x, stats] = cholesky_solve(sym, a, b);
  EXPECT_NEAR(x[0], -0.5, 1e-14);
  EXPECT_NEAR(x[1], 2.0, 1e-14);
  EXPECT_LE(stats.relative_residual, 1e-10);
}

TEST(CholeskySolve, RandomSpd200AgainstDenseOracle) {
  detail::Rng rng(21);
  const CsrMatrix a = random_sparse_spd(rng, 200, 0.05);  // AMD path (n > 64)
  const SymbolicFactor sym = cholesky_symbolic(a);
  const std::vector<double> b = random_vector(rng, 200);
  const auto [x, stats] = cholesky_solve(sym, a, b);
  EXPECT_LE(stats.relative_residual, 1e-10);

  const Eigen::MatrixXd dense = to_dense(a);
  Eigen::Map<const Eigen::VectorXd> bv(b.data(), 200);
  const Eigen::VectorXd oracle = dense.llt().solve(bv);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), 200);
  EXPECT_LE((xv - oracle).norm() / oracle.norm(), 1e-8);
}

TEST(CholeskySolve, NonSpdReportsPivot) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
  m.diagonal() << 2.0, -1.0, 3.0;
  const CsrMatrix a = csr_from_dense(m);
  const SymbolicFactor sym = cholesky_symbolic(a);
  const std::vector<double> b = {1, 1, 1};
  try {
    cholesky_solve(sym, a, b);
    FAIL() << "expected NotSpdError";
  } catch (const NotSpdError& e) {
    EXPECT_EQ(e.pivot(), 1);
  }
}

TEST(CholeskySolve, SymbolicReusedAcross100Solves) {
  detail::Rng rng(22);
  const CsrMatrix base = random_sparse_spd(rng, 40, 0.2);
  sparse_stats().reset();
  const SymbolicFactor sym = cholesky_symbolic(base);
  CsrMatrix a = base;
  for (int i = 0; i < 100; ++i) {
    for (auto& pos : csr_diag_positions(a)) a.values[pos] += 0.01;
    const std::vector<double> b = random_vector(rng, 40);
    const auto [x, stats] = cholesky_solve(sym, a, b);
    EXPECT_LE(stats.relative_residual, 1e-10);
  }
  EXPECT_EQ(sparse_stats().cholesky_symbolic.load(), 1);
  EXPECT_EQ(sparse_stats().cholesky_numeric.load(), 100);
}

TEST(JacobiPreconditioner, BasicsAndErrors) {
  const CsrMatrix eye = diag_csr({1, 1, 1});
  const std::vector<double> ones = {1, 1, 1};
  EXPECT_EQ(jacobi_preconditioner(eye), ones);

  const CsrMatrix d = diag_csr({2, 4});
  const std::vector<double> expected = {0.5, 0.25};
  EXPECT_EQ(jacobi_preconditioner(d), expected);

  detail::Rng rng(23);
  const CsrMatrix a = random_sparse_spd(rng, 30, 0.2);
  const auto m = jacobi_preconditioner(a);
  const Eigen::MatrixXd dense = to_dense(a);
  for (int i = 0; i < 30; ++i) EXPECT_DOUBLE_EQ(m[i], 1.0 / dense(i, i));

  EXPECT_THROW(jacobi_preconditioner(diag_csr({1, 0, 1})), std::invalid_argument);
}

TEST(Pcg, IdentityConvergesInOneIteration) {
  const CsrMatrix a = diag_csr({1, 1, 1, 1});
  const std::vector<double> b = {1, 2, 3, 4};
  const auto m = jacobi_preconditioner(a);
  const auto [x, stats] = pcg_solve(a, b, m, 1e-10, 100);
  EXPECT_TRUE(stats.converged);
  EXPECT_EQ(stats.iterations, 1);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x[i], b[i], 1e-14);
}

TEST(Pcg, KnownTwoByTwoFiniteTermination) {
  Eigen::MatrixXd mm(2, 2);
  mm << 4, 2, 2, 3;
  const CsrMatrix a = csr_from_dense(mm);
  const std::vector<double> b = {2.0, 5.0};
  const auto m = jacobi_preconditioner(a);
  const auto [x, stats] = pcg_solve(a, b, m, 1e-10, 100);
  EXPECT_TRUE(stats.converged);
  EXPECT_LE(stats.iterations, 2);  // exact in n steps
  EXPECT_NEAR(x[0], -0.5, 1e-9);
  EXPECT_NEAR(x[1], 2.0, 1e-9);
}

TEST(Pcg, MatchesCholeskyOnNormalMatrix) {
  detail::Rng rng(24);
  // Dense-ish normal matrix J^T J + damping, n ~ 100.
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(300, 100);
  for (int r = 0; r < 300; ++r)
    for (int c = 0; c < 100; ++c)
      if (rng.uniform() < 0.07) j(r, c) = rng.normal();
  Eigen::MatrixXd n = j.transpose() * j;
  n.diagonal().array() += 1.0;
  const CsrMatrix a = csr_from_dense(n, 0.0);
  const std::vector<double> b = random_vector(rng, 100);

  const SymbolicFactor sym = cholesky_symbolic(a);
  const auto [xc, cs] = cholesky_solve(sym, a, b);
  const auto m = jacobi_preconditioner(a);
  const auto [xp, ps] = pcg_solve(a, b, m, 1e-10, 1000);
  EXPECT_TRUE(ps.converged);

  double diff = 0.0, norm = 0.0;
  for (int i = 0; i < 100; ++i) {
    diff += (xc[i] - xp[i]) * (xc[i] - xp[i]);
    norm += xc[i] * xc[i];
  }
  EXPECT_LE(std::sqrt(diff / norm), 1e-6);
}

TEST(Pcg, ZeroRhsReturnsZero) {
  const CsrMatrix a = diag_csr({2, 3});
  const std::vector<double> b = {0, 0};
  const auto [x, stats] = pcg_solve(a, b, {}, 1e-8, 10);
  EXPECT_TRUE(stats.converged);
  EXPECT_EQ(stats.iterations, 0);
  EXPECT_EQ(x[0], 0.0);
}

TEST(Pcg, NanBreaksDown) {
  CsrMatrix a = diag_csr({1, 1});
  a.values[0] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> b = {1, 1};
  EXPECT_THROW(pcg_solve(a, b, {}, 1e-8, 10), NumericalBreakdownError);
}

TEST(Pcg, PreconditionedNormMonotone) {
  detail::Rng rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    const CsrMatrix a = random_sparse_spd(rng, 60, 0.1);
    const std::vector<double> b = random_vector(rng, 60);
    const auto m = jacobi_preconditioner(a);
    const auto [x, stats] = pcg_solve(a, b, m, 1e-10, 500);
    ASSERT_TRUE(stats.converged);
    for (std::size_t i = 1; i < stats.residual_history.size(); ++i) {
      EXPECT_LE(stats.residual_history[i],
                stats.residual_history[i - 1] * (1.0 + 1e-12))
          << "trial " << trial << " step " << i;
    }
  }
}

TEST(Pcg, PreconditioningHelpsIllConditioned) {
  detail::Rng rng(26);
  const int n = 120;
  // Diagonal spread of 1e6 with weak symmetric coupling.
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = std::pow(10.0, 6.0 * i / (n - 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (rng.uniform() < 0.05) {
        const double v = 0.01 * rng.normal() * std::sqrt(m(i, i) * m(j, j));
        m(i, j) = v;
        m(j, i) = v;
      }
    }
  }
  const CsrMatrix a = csr_from_dense(m);
  const std::vector<double> b = random_vector(rng, n);
  const auto jac = jacobi_preconditioner(a);
  const auto [xp, ps] = pcg_solve(a, b, jac, 1e-8, 20000);
  const auto [xu, us] = pcg_solve(a, b, {}, 1e-8, 20000);
  ASSERT_TRUE(ps.converged);
  EXPECT_GE(us.iterations, ps.iterations);
}

TEST(CrossSolver, AgreementOnRandomFamily) {
  detail::Rng rng(27);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10 + static_cast<int>(rng.index(90));
    const CsrMatrix a = random_sparse_spd(rng, n, 0.1);
    const std::vector<double> b = random_vector(rng, n);
    const SymbolicFactor sym = cholesky_symbolic(a);
    const auto [xc, cs] = cholesky_solve(sym, a, b);
    const auto [xp, ps] = pcg_solve(a, b, jacobi_preconditioner(a), 1e-10, 10 * n + 200);
    ASSERT_TRUE(ps.converged);
    double diff = 0.0, norm = 0.0;
    for (int i = 0; i < n; ++i) {
      diff += (xc[i] - xp[i]) * (xc[i] - xp[i]);
      norm += xc[i] * xc[i];
    }
    EXPECT_LE(std::sqrt(diff) / std::sqrt(norm), 1e-6) << "trial " << trial;
  }
}
