#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qseig/analysis.hpp"
#include "qseig/config.hpp"
#include "qseig/io.hpp"
#include "qseig/scheme.hpp"
#include "qseig/verify.hpp"

namespace qseig {

namespace exit_code {
inline constexpr int kConverged = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kMaxSteps = 2;
inline constexpr int kDiverged = 3;
inline constexpr int kInvariantFailure = 4;
inline constexpr int kReferenceFailure = 5;
}  // namespace exit_code

inline int exit_code_for(Termination t) {
  switch (t) {
    case Termination::ToleranceMet:
      return exit_code::kConverged;
    case Termination::MaxSteps:
      return exit_code::kMaxSteps;
    case Termination::Diverged:
      return exit_code::kDiverged;
  }
  return exit_code::kDiverged;
}

struct CommandContext {
  int threads = 1;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  /// Above this many bytes the err_u backfill replays the run instead of
  /// keeping every iterate in memory.
  std::size_t state_memory_budget = std::size_t{512} << 20;
};

/// Assembled problem with its prepared inverse and lambda_1.
struct Problem {
  Discretization d;
  std::unique_ptr<InverseOperator> g;

  Problem(const RunConfig& cfg, int threads) : d(cfg.problem.build()) {
    g = std::make_unique<InverseOperator>(d, cfg.solver.method_for(d.size()), threads);
    estimate_lambda1(d, *g, cfg.scheme.lambda1_tol);
  }
};

/// Reference eigenvalues per config, or nullopt for `reference = none`.
inline std::optional<Eigen::VectorXd> load_reference(const RunConfig& cfg, const Problem& p) {
  switch (cfg.reference.kind) {
    case ReferenceKind::None:
      return std::nullopt;
    case ReferenceKind::Oracle:
      return reference_subspace_iteration(p.d, *p.g, cfg.n_eig, cfg.reference.tol, cfg.reference.max_iter)
          .report.eigenvalues;
    case ReferenceKind::File: {
      const BlockState block = read_state(cfg.reference.file);
      require(block.rows() == p.d.size() && block.cols() >= cfg.n_eig, ErrorKind::DimensionMismatch,
              "reference state does not match the problem size");
      return extract_eigenvalues(p.d, *p.g, block).eigenvalues;
    }
  }
  return std::nullopt;
}

inline BlockState initial_state(const RunConfig& cfg, const Problem& p) {
  if (cfg.scheme.init == InitKind::File) {
    BlockState u = read_state(cfg.scheme.init_file);
    require(u.rows() == p.d.size() && u.cols() == cfg.n_eig, ErrorKind::DimensionMismatch,
            "initial state does not match the problem size and n_eig");
    return u;
  }
  return init_state(p.d, cfg.n_eig, cfg.scheme.to_scheme().init);
}

struct SolveOutcome {
  RunHistory history;
  EigenReport report;
  std::vector<double> err_u;
  std::optional<RateFit> grad_rate;
  std::optional<RateFit> orth_rate;
  std::string grad_rate_note;
  std::string orth_rate_note;
  int exit_code = 0;
};

inline std::optional<RateFit> try_fit(const std::vector<double>& series, const std::string& name, std::string& note) {
  try {
    return fit_exponential_rate(series, 0.7, name);
  } catch (const Error& e) {
    note = e.what();
    return std::nullopt;
  }
}

/// Runs the scheme from u0 and gathers everything the report needs. err_u is
/// only filled when `with_err_u` is set.
inline SolveOutcome solve_from(const RunConfig& cfg, const Problem& p, const BlockState& u0,
                               const std::optional<Eigen::VectorXd>& reference, bool with_err_u,
                               const CommandContext& ctx) {
  const SchemeConfig sc = cfg.scheme.to_scheme();
  SolveOutcome o;

  const auto bytes_per_state = static_cast<std::size_t>(u0.rows() * u0.cols()) * sizeof(double);
  const bool keep = with_err_u &&
                    static_cast<double>(bytes_per_state) * static_cast<double>(sc.max_steps + 1) <=
                        static_cast<double>(ctx.state_memory_budget);
  std::vector<BlockState> states;
  StepObserver observer;
  if (keep) {
    states.push_back(u0);
    observer = [&](std::int64_t, const BlockState& u) { states.push_back(u); };
  }
  o.history = run(p.d, *p.g, sc, u0, observer);

  if (with_err_u) {
    const BlockState& end = o.history.final_state;
    o.err_u.reserve(o.history.records.size());
    if (keep) {
      for (const auto& r : o.history.records)
        o.err_u.push_back(eigenvector_error(states[static_cast<std::size_t>(r.step_index)], end, p.d));
    } else {
      // replay: the run is deterministic, so the same iterates come back
      Iterate cur = make_iterate(*p.g, u0);
      std::int64_t at = 0;
      for (const auto& r : o.history.records) {
        while (at < r.step_index) {
          cur = step(p.d, *p.g, cur, sc.tau, at + 1).next;
          ++at;
        }
        o.err_u.push_back(eigenvector_error(cur.U, end, p.d));
      }
    }
  }

  o.report = extract_eigenvalues(p.d, *p.g, o.history.final_state);
  if (reference) o.report.relative_errors = relative_errors(o.report.eigenvalues, *reference);

  std::vector<double> grad_a, orth;
  for (const auto& r : o.history.records) {
    grad_a.push_back(r.grad_norm_a);
    orth.push_back(r.orth_error);
  }
  o.grad_rate = try_fit(grad_a, "grad_norm_a", o.grad_rate_note);
  o.orth_rate = try_fit(orth, "orth_error", o.orth_rate_note);
  o.exit_code = exit_code_for(o.history.terminated_by);
  return o;
}

inline std::string format_report(const RunConfig& cfg, const Problem& p, const SolveOutcome& o) {
  std::ostringstream r;
  const RunHistory& h = o.history;
  r << "terminated_by: " << to_string(h.terminated_by) << "\n";
  r << "steps: " << h.records.back().step_index << "\n";
  r << "green_solves: " << h.records.back().green_solves << "\n";
  r << "tau: " << format17(cfg.scheme.tau) << "\n";
  r << "final_grad_norm_l2: " << format17(h.records.back().grad_norm) << "\n";
  r << "final_orth_error: " << format17(h.records.back().orth_error) << "\n";
  r << "energy_unshifted: " << format17(h.records.back().energy_unshifted) << "\n";
  r << "sigma: " << format17(p.d.sigma) << "\n";
  if (p.d.lambda1_est) r << "lambda1_unshifted: " << format17(*p.d.lambda1_est - p.d.sigma) << "\n";
  if (h.bounds) {
    const StepBounds& b = *h.bounds;
    r << "tau_nonexpansion: " << format17(b.tau_nonexpansion) << "\n";
    r << "tau_quasi_stiefel: " << format17(b.tau_quasi_stiefel) << "\n";
    r << "tau_contraction: " << format17(b.tau_contraction) << "\n";
    r << "tau_energy_estimate: " << format17(b.tau_energy) << "\n";
    r << "c_e_estimate: " << format17(b.c_e) << "\n";
  }
  for (const auto& w : h.warnings) r << "warning: " << w << "\n";
  auto rate = [&](const char* label, const std::optional<RateFit>& f, const std::string& note) {
    if (f) {
      r << label << ": slope_per_step " << format17(f->slope_per_step) << " r_squared "
        << format17(f->r_squared) << " window " << f->window.first << "-" << f->window.second << "\n";
    } else {
      r << label << ": n/a (" << note << ")\n";
    }
  };
  rate("rate_grad_norm_a", o.grad_rate, o.grad_rate_note);
  rate("rate_orth_error", o.orth_rate, o.orth_rate_note);
  r << "\n" << eigen_table(o.report);
  return r.str();
}

// ---------------------------------------------------------------------------

namespace detail {

/// Maps library errors to exit codes and prints them.
template <class F>
int guarded(const CommandContext& ctx, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    *ctx.err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    if (e.kind() == ErrorKind::NotPositiveDefinite) {
      *ctx.err << "hint: raise problem.sigma so that the shifted operator is positive definite\n";
    }
    return exit_code::kConfigError;
  } catch (const std::exception& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return exit_code::kConfigError;
  }
}

/// Runs the reference computation, mapping its failures to exit code 5.
inline std::optional<Eigen::VectorXd> reference_or_fail(const RunConfig& cfg, const Problem& p,
                                                        const CommandContext& ctx, int& code) {
  try {
    code = 0;
    return load_reference(cfg, p);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoConvergence && e.kind() != ErrorKind::GapTooSmall) throw;
    *ctx.err << "reference failed (" << to_string(e.kind()) << "): " << e.what() << "\n";
    code = exit_code::kReferenceFailure;
    return std::nullopt;
  }
}

}  // namespace detail

inline int cmd_solve(const RunConfig& cfg, const CommandContext& ctx = {}) {
  return detail::guarded(ctx, [&] {
    for (const auto* path : {&cfg.output.history_csv, &cfg.output.report, &cfg.output.state})
      require_writable(*path);
    const Problem p(cfg, ctx.threads);
    int ref_code = 0;
    const auto reference = detail::reference_or_fail(cfg, p, ctx, ref_code);
    if (ref_code) return ref_code;
    const BlockState u0 = initial_state(cfg, p);

    const StepBounds b = compute_step_bounds(p.d, u0);
    *ctx.err << "lambda1 (shifted) = " << format17(b.lambda1) << ", tau_quasi_stiefel = "
             << format17(b.tau_quasi_stiefel) << ", tau_energy (estimate) = " << format17(b.tau_energy) << "\n";

    const SolveOutcome o = solve_from(cfg, p, u0, reference, !cfg.output.history_csv.empty(), ctx);
    for (const auto& w : o.history.warnings) *ctx.err << "warning: " << w << "\n";

    const std::string report = format_report(cfg, p, o);
    if (!cfg.output.history_csv.empty()) atomic_write(cfg.output.history_csv, history_csv(o.history.records, o.err_u));
    if (!cfg.output.report.empty()) atomic_write(cfg.output.report, report);
    if (!cfg.output.state.empty()) write_state(cfg.output.state, o.history.final_state);
    if (cfg.output.summary) *ctx.out << report;
    return o.exit_code;
  });
}

/// Runs the configured problem once per tau from the same U0 and tabulates err_i.
inline int cmd_tau_sweep(const RunConfig& cfg, const std::vector<double>& taus, const CommandContext& ctx = {}) {
  if (taus.size() < 2) {
    *ctx.err << "error: tau-sweep needs at least two tau values\n";
    return exit_code::kConfigError;
  }
  for (double t : taus) {
    if (!(t > 0) || !std::isfinite(t)) {
      *ctx.err << "error: tau values must be positive\n";
      return exit_code::kConfigError;
    }
  }
  return detail::guarded(ctx, [&] {
    require_writable(cfg.output.sweep_csv);
    const Problem p(cfg, ctx.threads);
    int ref_code = 0;
    const auto reference = detail::reference_or_fail(cfg, p, ctx, ref_code);
    if (ref_code) return ref_code;
    const BlockState u0 = initial_state(cfg, p);

    std::vector<SolveOutcome> runs;
    int first_failure = 0;
    for (double tau : taus) {
      RunConfig c = cfg;
      c.scheme.tau = tau;
      *ctx.err << "tau = " << format17(tau) << " ..." << std::endl;
      runs.push_back(solve_from(c, p, u0, reference, false, ctx));
      if (runs.back().exit_code != 0 && first_failure == 0) first_failure = runs.back().exit_code;
    }

    std::ostringstream csv;
    csv << "index";
    for (double tau : taus) csv << ",tau_" << format17(tau);
    csv << ",max_over_min,independent\n";
    bool all_independent = true;
    for (int i = 0; i < cfg.n_eig; ++i) {
      csv << (i + 1);
      double lo = std::numeric_limits<double>::infinity();
      double hi = 0.0;
      for (const auto& r : runs) {
        const double e = r.report.relative_errors ? (*r.report.relative_errors)(i)
                                                  : std::numeric_limits<double>::quiet_NaN();
        csv << "," << format17(e);
        lo = std::min(lo, e);
        hi = std::max(hi, e);
      }
      if (reference) {
        const bool ok = hi <= 10.0 * lo;
        all_independent = all_independent && ok;
        csv << "," << format17(lo > 0 ? hi / lo : (hi > 0 ? std::numeric_limits<double>::infinity() : 1.0)) << ","
            << (ok ? "pass" : "fail") << "\n";
      } else {
        csv << ",nan,n/a\n";
      }
    }
    csv << "steps";
    bool decreasing = true;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto steps = runs[k].history.records.back().step_index;
      csv << "," << steps;
      if (k > 0 && taus[k] > taus[k - 1] && !(steps < runs[k - 1].history.records.back().step_index))
        decreasing = false;
    }
    csv << ",," << (decreasing ? "pass" : "fail") << "\n";
    csv << "terminated_by";
    for (const auto& r : runs) csv << "," << to_string(r.history.terminated_by);
    csv << ",,\n";

    if (!cfg.output.sweep_csv.empty()) {
      atomic_write(cfg.output.sweep_csv, csv.str());
    } else {
      *ctx.out << csv.str();
    }
    if (cfg.output.summary) {
      *ctx.err << "tau independence: " << (reference ? (all_independent ? "pass" : "fail") : "n/a")
               << "; step counts decreasing: " << (decreasing ? "pass" : "fail") << "\n";
    }
    if (first_failure) return first_failure;
    if (!decreasing || (reference && !all_independent)) return exit_code::kInvariantFailure;
    return exit_code::kConverged;
  });
}

inline std::string format_checks(const std::vector<CheckResult>& checks) {
  std::ostringstream o;
  std::size_t width = 0;
  for (const auto& c : checks) width = std::max(width, c.name.size());
  for (const auto& c : checks) {
    o << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width)) << c.name
      << "  measured " << std::setw(24) << format17(c.measured) << " threshold " << format17(c.threshold);
    if (!c.detail.empty()) o << "  (" << c.detail << ")";
    o << "\n";
  }
  return o.str();
}

inline int cmd_verify(const RunConfig& cfg, const CommandContext& ctx = {}, const VerifyOptions& opt = {}) {
  return detail::guarded(ctx, [&] {
    const std::vector<CheckResult> checks = verify_all(cfg, opt, ctx.err);
    *ctx.out << format_checks(checks);
    std::size_t failed = 0;
    for (const auto& c : checks) failed += c.passed ? 0 : 1;
    *ctx.out << (checks.size() - failed) << "/" << checks.size() << " invariants hold\n";
    if (!cfg.output.report.empty()) atomic_write(cfg.output.report, format_checks(checks));
    return failed == 0 ? exit_code::kConverged : exit_code::kInvariantFailure;
  });
}

/// Computes the oracle eigenpairs; writes the eigenvalue table and the block.
inline int cmd_reference(const RunConfig& cfg, const CommandContext& ctx = {}) {
  return detail::guarded(ctx, [&] {
    const std::string block_path = !cfg.reference.file.empty() ? cfg.reference.file : cfg.output.state;
    require_writable(cfg.output.report);
    require_writable(block_path);
    const Problem p(cfg, ctx.threads);
    ReferenceResult ref;
    try {
      ref = reference_subspace_iteration(p.d, *p.g, cfg.n_eig, cfg.reference.tol, cfg.reference.max_iter);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoConvergence && e.kind() != ErrorKind::GapTooSmall) throw;
      *ctx.err << "reference failed (" << to_string(e.kind()) << "): " << e.what() << "\n";
      return exit_code::kReferenceFailure;
    }
    const std::string table = eigen_table(ref.report);
    if (!cfg.output.report.empty()) atomic_write(cfg.output.report, table);
    if (!block_path.empty()) write_state(block_path, ref.block);
    if (cfg.output.summary) *ctx.out << "sweeps: " << ref.sweeps << "\n" << table;
    return exit_code::kConverged;
  });
}

}  // namespace qseig
