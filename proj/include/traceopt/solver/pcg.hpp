#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "traceopt/csr.hpp"
#include "traceopt/errors.hpp"
#include "traceopt/solver/cholesky.hpp"

namespace traceopt {

/// Reciprocal diagonal of A, the Jacobi preconditioner.
inline std::vector<double> jacobi_preconditioner(const CsrMatrix& a) {
  const auto pos = csr_diag_positions(a);
  std::vector<double> m(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double d = a.values[pos[i]];
    if (!(d > 0.0))
      throw std::invalid_argument("jacobi_preconditioner: non-positive diagonal entry");
    m[i] = 1.0 / d;
  }
  return m;
}

/// Preconditioned conjugate gradient for SPD systems. `precond` holds the
/// inverse diagonal; pass an empty span to run unpreconditioned. Convergence
/// is declared on the recurrence residual and then verified against the true
/// residual; on disagreement the recurrence restarts from the true one.
inline std::pair<std::vector<double>, SolveStats> pcg_solve(const CsrMatrix& a,
                                                            std::span<const double> b,
                                                            std::span<const double> precond,
                                                            double tol,
                                                            std::int64_t max_iters) {
  if (a.n_rows != a.n_cols) throw std::invalid_argument("pcg_solve: matrix not square");
  if (static_cast<std::int64_t>(b.size()) != a.n_rows)
    throw std::invalid_argument("pcg_solve: rhs length mismatch");
  if (!precond.empty() && static_cast<std::int64_t>(precond.size()) != a.n_rows)
    throw std::invalid_argument("pcg_solve: preconditioner length mismatch");
  if (!(tol > 0.0)) throw std::invalid_argument("pcg_solve: tolerance must be positive");

  const std::int64_t n = a.n_rows;
  const auto dot = [n](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += u[i] * v[i];
    return s;
  };
  const auto apply_precond = [&](const std::vector<double>& r, std::vector<double>& z) {
    if (precond.empty()) {
      z = r;
    } else {
      for (std::int64_t i = 0; i < n; ++i) z[i] = precond[i] * r[i];
    }
  };

  SolveStats stats;
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  std::vector<double> r(b.begin(), b.end());
  const double bnorm = std::sqrt(dot(r, r));
  if (bnorm == 0.0) {
    stats.converged = true;
    return {std::move(x), stats};
  }

  std::vector<double> z(static_cast<std::size_t>(n));
  apply_precond(r, z);
  std::vector<double> p = z;
  double rz = dot(r, z);
  stats.residual_history.push_back(std::sqrt(rz));

  for (std::int64_t it = 1; it <= max_iters; ++it) {
    const std::vector<double> ap = spmv(a, p);
    const double pap = dot(p, ap);
    const double alpha = rz / pap;
    if (!std::isfinite(alpha)) throw NumericalBreakdownError("pcg: non-finite step size");
    for (std::int64_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    stats.iterations = it;

    const double rnorm = std::sqrt(dot(r, r));
    if (!std::isfinite(rnorm)) throw NumericalBreakdownError("pcg: non-finite residual");
    if (rnorm <= tol * bnorm) {
      // Recurrence says done; confirm with the true residual.
      const std::vector<double> ax = spmv(a, x);
      double tn = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = b[i] - ax[i];
        r[i] = d;
        tn += d * d;
      }
      const double true_norm = std::sqrt(tn);
      if (true_norm <= tol * bnorm) {
        stats.relative_residual = true_norm / bnorm;
        stats.converged = true;
        apply_precond(r, z);
        stats.residual_history.push_back(std::sqrt(std::abs(dot(r, z))));
        return {std::move(x), stats};
      }
      // Restart the recurrence from the exact residual.
      apply_precond(r, z);
      rz = dot(r, z);
      p = z;
      stats.residual_history.push_back(std::sqrt(rz));
      continue;
    }

    apply_precond(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    if (!std::isfinite(beta)) throw NumericalBreakdownError("pcg: non-finite direction update");
    for (std::int64_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    rz = rz_new;
    stats.residual_history.push_back(std::sqrt(rz));
  }

  const std::vector<double> ax = spmv(a, x);
  double tn = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = b[i] - ax[i];
    tn += d * d;
  }
  stats.relative_residual = std::sqrt(tn) / bnorm;
  stats.converged = stats.relative_residual <= tol;
  return {std::move(x), stats};
}

}  // namespace traceopt
