#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "traceopt/io/bal.hpp"
#include "traceopt/io/g2o.hpp"
#include "traceopt/io/synthetic.hpp"
#include "traceopt/lm.hpp"

namespace traceopt {

namespace detail {

struct CliOptions {
  std::string input;
  std::string synthetic;  // "CxP"
  std::string solver = "cholesky";
  int max_iters = 50;
  double damping = 1e-6;
  double pcg_tol = 1e-8;
  std::uint64_t seed = 0;
  double pixel_noise = 0.0;
  double pose_noise = 0.05;
  std::string csv_path;
  int threads = 1;
};

inline void add_common_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--solver", o.solver, "Linear solver")
      ->check(CLI::IsMember({"cholesky", "pcg"}))
      ->capture_default_str();
  cmd->add_option("--max-iters", o.max_iters, "Iteration budget")->capture_default_str();
  cmd->add_option("--damping", o.damping, "Initial damping lambda")->capture_default_str();
  cmd->add_option("--pcg-tol", o.pcg_tol, "PCG relative tolerance")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Seed for synthetic problems")->capture_default_str();
  cmd->add_option("--csv", o.csv_path, "Write per-iteration CSV to this path");
  cmd->add_option("--threads", o.threads, "Worker threads for batched kernels")
      ->capture_default_str();
}

inline LmConfig config_from(const CliOptions& o) {
  LmConfig config;
  config.initial_damping = o.damping;
  config.max_iterations = o.max_iters;
  config.solver = o.solver == "pcg" ? SolverChoice::pcg : SolverChoice::cholesky;
  config.pcg_tol = o.pcg_tol;
  return config;
}

inline bool parse_cxp(const std::string& s, int& c, int& p) {
  const auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    c = std::stoi(s.substr(0, x));
    p = std::stoi(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return c > 0 && p > 0;
}

inline void write_csv(const std::string& path, const LmReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open CSV output '" + path + "'");
  out << "iter,cost,mse,lambda,accepted,cum_time_s\n";
  char buf[256];
  for (const auto& rec : report.trajectory) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%d,%.6f\n", rec.iteration, rec.cost,
                  rec.mse, rec.lambda, rec.accepted ? 1 : 0, rec.cum_time_s);
    out << buf;
  }
}

inline const char* reason_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::plateau:
      return "plateau";
    case TerminationReason::max_iters:
      return "max_iters";
    case TerminationReason::solver_failure:
      return "solver_failure";
  }
  return "unknown";
}

inline int run_and_report(TracedProblem& problem, std::span<const PoseSE3> poses,
                          std::span<const Vec3> points, const CliOptions& o,
                          const std::string& dataset, std::ostream& out) {
  const LmConfig config = config_from(o);
  const auto t0 = std::chrono::steady_clock::now();
  const LmReport report = optimize(problem, poses, points, config);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  char line[512];
  std::snprintf(line, sizeof(line),
                "dataset=%s solver=%s iterations=%d final_cost=%.9g final_mse=%.9g "
                "termination=%s time_s=%.3f\n",
                dataset.c_str(), o.solver.c_str(), report.iterations, report.final_cost,
                report.final_mse, reason_name(report.reason), wall);
  out << line;
  if (!o.csv_path.empty()) write_csv(o.csv_path, report);
  return report.reason == TerminationReason::solver_failure ? 3 : 0;
}

}  // namespace detail

/// Entry point behind the benchmark binary; exposed for tests.
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Sparse Levenberg-Marquardt benchmark for bundle adjustment and pose graphs"};
  app.require_subcommand(1);

  detail::CliOptions ba_opts, pgo_opts;
  CLI::App* ba = app.add_subcommand("ba", "Bundle adjustment on a BAL file or synthetic scene");
  ba->add_option("--input", ba_opts.input, "BAL problem file");
  ba->add_option("--synthetic", ba_opts.synthetic, "Synthetic scene CxP, e.g. 3x50");
  ba->add_option("--pixel-noise", ba_opts.pixel_noise, "Synthetic pixel noise sigma")
      ->capture_default_str();
  ba->add_option("--pose-noise", ba_opts.pose_noise, "Synthetic pose perturbation sigma")
      ->capture_default_str();
  detail::add_common_flags(ba, ba_opts);

  CLI::App* pgo = app.add_subcommand("pgo", "Pose graph optimization on a g2o file");
  pgo->add_option("--input", pgo_opts.input, "g2o pose graph file")->required();
  detail::add_common_flags(pgo, pgo_opts);

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 1;
  }

  try {
    if (ba->parsed()) {
      set_num_threads(ba_opts.threads);
      BalProblem problem;
      std::string dataset;
      if (!ba_opts.synthetic.empty()) {
        int c = 0, p = 0;
        if (!detail::parse_cxp(ba_opts.synthetic, c, p)) {
          err << "bad --synthetic value '" << ba_opts.synthetic << "' (expected CxP)\n";
          return 1;
        }
        problem = synth_ba(c, p, ba_opts.pixel_noise, ba_opts.pose_noise, ba_opts.seed).problem;
        dataset = "synthetic-" + ba_opts.synthetic;
      } else if (!ba_opts.input.empty()) {
        std::ifstream in(ba_opts.input);
        if (!in) {
          err << "cannot open '" << ba_opts.input << "'\n";
          return 2;
        }
        problem = parse_bal(in);
        dataset = ba_opts.input;
      } else {
        err << "ba: one of --input or --synthetic is required\n";
        return 1;
      }
      TracedProblem traced = make_ba_problem(problem);
      return detail::run_and_report(traced, problem.poses(), problem.points, ba_opts, dataset,
                                    out);
    }

    set_num_threads(pgo_opts.threads);
    std::ifstream in(pgo_opts.input);
    if (!in) {
      err << "cannot open '" << pgo_opts.input << "'\n";
      return 2;
    }
    const PoseGraph graph = parse_g2o(in);
    for (const auto& w : graph.warnings) err << "warning: " << w << "\n";
    TracedProblem traced = make_pgo_problem(graph, true);
    return detail::run_and_report(traced, graph.vertices, {}, pgo_opts, pgo_opts.input, out);
  } catch (const ParseError& e) {
    err << "parse error (line " << e.line() << "): " << e.what() << "\n";
    return 2;
  } catch (const CheiralityError& e) {
    err << "data error: " << e.what() << " (observation " << e.observation() << ")\n";
    return 2;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace traceopt
