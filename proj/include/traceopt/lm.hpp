#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "traceopt/assemble.hpp"
#include "traceopt/errors.hpp"
#include "traceopt/problems.hpp"
#include "traceopt/solver/cholesky.hpp"
#include "traceopt/solver/pcg.hpp"

namespace traceopt {

enum class SolverChoice { cholesky, pcg };
enum class TerminationReason { plateau, max_iters, solver_failure };

struct LmConfig {
  double initial_damping = 1e-6;
  double damping_min = 1e-16;
  double damping_max = 1e16;
  double damping_up = 2.0;
  double damping_down = 0.5;
  double clamp_min = 1e-6;
  double clamp_max = 1e32;
  int max_iterations = 10;
  int plateau_patience = 3;
  double plateau_rel_tol = 1e-6;
  SolverChoice solver = SolverChoice::cholesky;
  double pcg_tol = 1e-8;
  std::int64_t pcg_max_iters = 0;  // 0: max(250, 2 * block columns)
  bool use_caches = true;          // false re-derives symbolic artifacts per step

  void validate() const {
    if (!(damping_min <= initial_damping && initial_damping <= damping_max))
      throw std::invalid_argument("LmConfig: damping out of bounds");
    if (!(damping_up > 0.0 && damping_down > 0.0))
      throw std::invalid_argument("LmConfig: damping factors must be positive");
    if (plateau_patience < 1) throw std::invalid_argument("LmConfig: patience must be >= 1");
  }
};

/// Mutable optimizer state: parameters, damping, accepted-cost history and
/// the cached symbolic artifacts for the fixed sparsity pattern.
struct LmState {
  std::vector<PoseSE3> poses;
  std::vector<Vec3> points;
  double lambda = 1e-6;
  std::vector<double> cost_history;  // initial cost plus each accepted step
  int iterations = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  NormalEquations normal;
  std::optional<SymbolicFactor> factor;
};

struct LmIterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double mse = 0.0;
  double lambda = 0.0;  // damping used by this iteration's solve
  bool accepted = true;
  double cum_time_s = 0.0;
};

struct LmReport {
  double final_cost = 0.0;
  double final_mse = 0.0;
  int iterations = 0;
  std::vector<LmIterationRecord> trajectory;  // entry 0 is the initial state
  TerminationReason reason = TerminationReason::max_iters;
};

namespace detail {

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

/// Last `patience` relative improvements of the accepted-cost history are
/// all below tol.
inline bool plateau_stagnation(std::span<const double> history, int patience, double tol) {
  const std::size_t n = history.size();
  if (n < static_cast<std::size_t>(patience) + 1) return false;
  for (std::size_t i = n - static_cast<std::size_t>(patience); i < n; ++i) {
    const double prev = history[i - 1];
    const double improvement = prev > 0.0 ? (prev - history[i]) / prev : 0.0;
    if (improvement >= tol) return false;
  }
  return true;
}

}  // namespace detail

/// True when the run is out of budget or the accepted costs have stagnated
/// for `patience` consecutive steps.
inline bool stop_on_plateau(std::span<const double> history, const LmConfig& config) {
  if (history.empty()) throw std::invalid_argument("stop_on_plateau: empty history");
  if (history.size() >= static_cast<std::size_t>(config.max_iterations)) return true;
  return detail::plateau_stagnation(history, config.plateau_patience, config.plateau_rel_tol);
}

/// One damped Gauss-Newton step: residual and Jacobian via the trace, the
/// four-product normal matrix with cached symbolics, damping by clamped
/// diagonal scaling, a linear solve, and a tentative retraction judged by
/// the fresh cost. Returns whether the step was accepted; a rejected step
/// only changes lambda and the counters.
inline bool lm_step(TracedProblem& model, LmState& state, const LmConfig& config) {
  config.validate();
  model.set_parameters(state.poses, state.points);
  const std::span<const double> r = model.evaluate();
  const double cost = detail::squared_norm(r);
  if (state.cost_history.empty()) state.cost_history.push_back(cost);

  const JacobianPair jac = model.jacobian();
  if (!state.normal.initialized() || !config.use_caches) state.normal.initialize(jac);
  state.normal.assemble(jac, r);

  const double lambda_used = state.lambda;
  const CsrMatrix damped = state.normal.damped(lambda_used, config.clamp_min, config.clamp_max);

  std::vector<double> delta;
  bool solver_ok = true;
  try {
    if (config.solver == SolverChoice::cholesky) {
      if (!state.factor.has_value() || !config.use_caches)
        state.factor = cholesky_symbolic(damped);
      auto [x, stats] = cholesky_solve(*state.factor, damped, state.normal.rhs());
      delta = std::move(x);
    } else {
      const std::vector<double> precond = jacobi_preconditioner(damped);
      const std::int64_t budget =
          config.pcg_max_iters > 0
              ? config.pcg_max_iters
              : std::max<std::int64_t>(250, 2 * state.normal.block_cols_total());
      auto [x, stats] = pcg_solve(damped, state.normal.rhs(), precond, config.pcg_tol, budget);
      delta = std::move(x);
    }
  } catch (const NotSpdError&) {
    solver_ok = false;
  } catch (const NumericalBreakdownError&) {
    solver_ok = false;
  } catch (const std::invalid_argument&) {
    solver_ok = false;  // e.g. non-positive diagonal handed to the preconditioner
  }

  bool accepted = false;
  if (solver_ok) {
    // Tentative update on copies; state parameters stay intact on rejection.
    std::vector<PoseSE3> new_poses = state.poses;
    std::vector<Vec3> new_points = state.points;
    const std::int64_t pose_scalars = state.normal.pose_scalar_cols();
    if (model.has_poses()) {
      const std::size_t first = model.anchor_first_pose() ? 1 : 0;
      for (std::size_t p = first; p < new_poses.size(); ++p) {
        const double* d = delta.data() + (p - first) * 6;
        new_poses[p] = se3_retract(state.poses[p],
                                   Tangent6(Vec3(d[0], d[1], d[2]), Vec3(d[3], d[4], d[5])));
      }
    }
    if (model.has_points()) {
      for (std::size_t p = 0; p < new_points.size(); ++p) {
        const double* d = delta.data() + pose_scalars + p * 3;
        new_points[p] += Vec3(d[0], d[1], d[2]);
      }
    }

    double new_cost = std::numeric_limits<double>::infinity();
    try {
      model.set_parameters(new_poses, new_points);
      new_cost = detail::squared_norm(model.evaluate());
    } catch (const CheiralityError&) {
      new_cost = std::numeric_limits<double>::infinity();  // step left the valid domain
    }

    if (new_cost < cost) {
      state.poses = std::move(new_poses);
      state.points = std::move(new_points);
      state.cost_history.push_back(new_cost);
      ++state.accepted_steps;
      accepted = true;
    }
  }

  if (accepted) {
    state.lambda = std::max(state.lambda * config.damping_down, config.damping_min);
  } else {
    ++state.rejected_steps;
    state.lambda = std::min(state.lambda * config.damping_up, config.damping_max);
  }
  ++state.iterations;
  return accepted;
}

/// Full driver: steps until the accepted costs plateau, the iteration budget
/// runs out, or damping saturates without progress. `final_state`, when
/// given, receives the optimized parameters and counters.
inline LmReport optimize(TracedProblem& model, std::span<const PoseSE3> init_poses,
                         std::span<const Vec3> init_points, const LmConfig& config,
                         LmState* final_state = nullptr) {
  config.validate();
  LmState state;
  state.poses.assign(init_poses.begin(), init_poses.end());
  state.points.assign(init_points.begin(), init_points.end());
  state.lambda = config.initial_damping;

  const double n_obs = static_cast<double>(model.residual_rows());
  LmReport report;

  model.set_parameters(state.poses, state.points);
  const double initial_cost = detail::squared_norm(model.evaluate());
  state.cost_history.push_back(initial_cost);
  report.trajectory.push_back({0, initial_cost, initial_cost / n_obs, state.lambda, true, 0.0});

  const auto t0 = std::chrono::steady_clock::now();
  report.reason = TerminationReason::max_iters;
  while (state.iterations < config.max_iterations) {
    const double lambda_used = state.lambda;
    const bool lambda_saturated = state.lambda >= config.damping_max;
    const bool accepted = lm_step(model, state, config);
    const double cost = state.cost_history.back();
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.trajectory.push_back(
        {state.iterations, cost, cost / n_obs, lambda_used, accepted, elapsed});

    if (!accepted && lambda_saturated) {
      report.reason = TerminationReason::solver_failure;
      break;
    }
    if (cost == 0.0 ||
        detail::plateau_stagnation(state.cost_history, config.plateau_patience,
                                   config.plateau_rel_tol)) {
      report.reason = TerminationReason::plateau;
      break;
    }
  }

  report.iterations = state.iterations;
  report.final_cost = state.cost_history.back();
  report.final_mse = report.final_cost / n_obs;

  // Leave the model holding the optimized parameters.
  model.set_parameters(state.poses, state.points);
  model.evaluate();
  if (final_state) *final_state = std::move(state);
  return report;
}

}  // namespace traceopt
