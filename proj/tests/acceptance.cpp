// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//
// Step budgets default to what fits a desk run on one core. Set
// QSEIG_ACCEPT_FULL=1 to use the full budgets instead (hours).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "qseig/analysis.hpp"
#include "qseig/config.hpp"
#include "qseig/scheme.hpp"
#include "qseig/verify.hpp"

using namespace qseig;

namespace {

// pinned tolerances
constexpr double kEigErrTol = 1e-8;
constexpr double kPatternTol = 0.05;
constexpr double kTauRatio = 10.0;
constexpr double kEnergySlack = 1e-10;
constexpr double kQuasiStiefelSlack = 1e-8;
constexpr double kContractionSlack = 1e-10;
constexpr double kFinalOrth = 1e-9;
constexpr double kDriftTol = 1e-9;
constexpr double kMinR2 = 0.98;
constexpr double kSlopeSlack = 0.05;
constexpr double kFitWindow = 0.7;
constexpr double kContinuousDist = 1e-6;
constexpr double kContinuousOrth = 1e-6;
constexpr double kContinuousSeconds = 10.0;
constexpr double kSpectralSlack = 1e-9;
constexpr int kSpectralSamples = 200;
constexpr double kGroundLow = -0.55;
constexpr double kGroundHigh = -0.40;
constexpr double kReferenceTol = 1e-10;
constexpr int kReferenceMaxIter = 200000;

struct Budget {
  std::int64_t desk_steps;      // 79 x 79 runs
  std::int64_t coarse_steps;    // 40 x 40 runs
  std::int64_t energy_steps;    // separate run inside tau_energy
  std::int64_t stiefel_steps;   // separate run inside tau_quasi_stiefel
  std::int64_t contraction_cap; // run inside tau_contraction until ||O|| <= kFinalOrth
  std::int64_t hydrogen_steps;
};

Budget budget() {
  const char* full = std::getenv("QSEIG_ACCEPT_FULL");
  if (full && std::string(full) == "1") return {100000, 100000, 5000, 20000, 200000, 20000};
  return {7000, 30000, 500, 2000, 20000, 20000};
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Line {
  int id;
  bool passed;
  bool gating;
  std::string text;
};

std::vector<Line> lines;
double worst_drift = 0.0;

void report(int id, bool passed, const std::string& text, bool gating = true) {
  lines.push_back({id, passed, gating, text});
  std::printf("%s  %2d  %s%s\n", passed ? "PASS" : "FAIL", id, text.c_str(), gating ? "" : "  [informational]");
  std::fflush(stdout);
}

void progress(const std::string& s) {
  std::fprintf(stderr, "... %s\n", s.c_str());
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

struct Setup {
  ProblemConfig cfg;
  Discretization d;
  std::unique_ptr<InverseOperator> g;

  explicit Setup(const ProblemConfig& c) : cfg(c), d(c.build()) {
    g = std::make_unique<InverseOperator>(d, solver::Direct{});
    estimate_lambda1(d, *g, 1e-12);
  }
};

ProblemConfig harmonic(int points) {
  ProblemConfig p;
  p.dim = 2;
  p.lower = {-5.5, -5.5};
  p.upper = {5.5, 5.5};
  p.points = {points, points};
  p.potential = PotentialKind::Harmonic;
  p.harmonic_coeff = 0.5;
  p.c_lap = 0.5;
  p.sigma = 0.0;
  return p;
}

struct Run {
  RunHistory h;
  Eigen::VectorXd err;
  Eigen::VectorXd values;
  double seconds = 0.0;
};

Run solve(const Setup& s, const BlockState& u0, double tau, double eps, std::int64_t max_steps,
          const Eigen::VectorXd& reference) {
  SchemeConfig c;
  c.tau = tau;
  c.eps = eps;
  c.max_steps = max_steps;
  const auto t0 = Clock::now();
  Run r;
  r.h = run(s.d, *s.g, c, u0);
  r.seconds = seconds_since(t0);
  const EigenReport rep = extract_eigenvalues(s.d, *s.g, r.h.final_state);
  r.values = rep.eigenvalues;
  r.err = relative_errors(rep.eigenvalues, reference);
  for (const auto& rec : r.h.records) worst_drift = std::max(worst_drift, rec.predictor_gram_drift_rel);
  return r;
}

/// Plain stepping without a stopping rule; `stop` ends the march early.
std::vector<StepDiagnostics> march(const Setup& s, const BlockState& u0, double tau, std::int64_t steps,
                                   const std::function<bool(const StepDiagnostics&)>& stop = {}) {
  std::vector<StepDiagnostics> out;
  Iterate cur = make_iterate(*s.g, u0);
  out.push_back(diagnose(s.d, *s.g, cur, 0));
  for (std::int64_t n = 1; n <= steps; ++n) {
    StepOutcome o = step(s.d, *s.g, cur, tau, n);
    worst_drift = std::max(worst_drift, o.diag.predictor_gram_drift_rel);
    out.push_back(o.diag);
    cur = std::move(o.next);
    if (!std::isfinite(o.diag.energy)) break;
    if (stop && stop(o.diag)) break;
  }
  return out;
}

Eigen::VectorXd reference_values(const Setup& s, int n) {
  return reference_subspace_iteration(s.d, *s.g, n, kReferenceTol, kReferenceMaxIter).report.eigenvalues;
}

}  // namespace

int main() {
  const Budget b = budget();
  const auto start = Clock::now();
  constexpr int kN = 8;
  constexpr std::uint64_t kSeed = 42;

  progress("desk problem: 79 x 79 harmonic oscillator");
  const Setup desk(harmonic(79));
  const Eigen::VectorXd desk_ref = reference_values(desk, kN);
  const BlockState desk_u0 = init_state(desk.d, kN, init::QuasiStiefelScaled{kSeed});
  const StepBounds desk_bounds = compute_step_bounds(desk.d, desk_u0);

  // 1
  progress("criterion 1: tau = 0.1 run, budget " + std::to_string(b.desk_steps) + " steps");
  const Run run1 = solve(desk, desk_u0, 0.1, 1e-5, b.desk_steps, desk_ref);
  {
    const double pattern[kN] = {1, 2, 2, 3, 3, 3, 4, 4};
    double pattern_dev = 0.0;
    for (int i = 0; i < kN; ++i) pattern_dev = std::max(pattern_dev, std::abs(run1.values(i) - pattern[i]));
    const double max_err = run1.err.maxCoeff();
    const bool ok = run1.h.terminated_by == Termination::ToleranceMet && max_err <= kEigErrTol &&
                    pattern_dev <= kPatternTol;
    report(1, ok,
           std::string("desk reproduction: ") + to_string(run1.h.terminated_by) + " after " +
               std::to_string(run1.h.records.back().step_index) + " steps, grad " +
               fmt("%.3e", run1.h.records.back().grad_norm) + ", max err_i " + fmt("%.3e", max_err) + " (<= " +
               fmt("%.0e", kEigErrTol) + "), pattern deviation " + fmt("%.4f", pattern_dev) + " (<= " +
               fmt("%.2f", kPatternTol) + "), " + fmt("%.1f", run1.seconds) + " s");
  }

  // 2
  {
    const std::vector<double> taus = {0.01, 0.1, 0.5, 1.0};
    bool ok = true;
    std::string text = "tau independence:";
    for (int points : {40, 79}) {
      const bool is_desk = points == 79;
      std::unique_ptr<Setup> own;
      if (!is_desk) own = std::make_unique<Setup>(harmonic(points));
      const Setup& s = is_desk ? desk : *own;
      const Eigen::VectorXd ref = is_desk ? desk_ref : reference_values(s, kN);
      const BlockState u0 = is_desk ? desk_u0 : init_state(s.d, kN, init::QuasiStiefelScaled{kSeed});
      const std::int64_t cap = is_desk ? b.desk_steps : b.coarse_steps;
      std::vector<Run> runs;
      for (double tau : taus) {
        if (is_desk && tau == 0.1) {
          runs.push_back(run1);
          continue;
        }
        progress("criterion 2: " + std::to_string(points) + "^2, tau = " + fmt("%g", tau));
        runs.push_back(solve(s, u0, tau, 1e-5, cap, ref));
      }
      bool converged = true;
      bool decreasing = true;
      double worst_ratio = 0.0;
      for (std::size_t k = 0; k < runs.size(); ++k) {
        converged = converged && runs[k].h.terminated_by == Termination::ToleranceMet;
        if (k > 0 && !(runs[k].h.records.back().step_index < runs[k - 1].h.records.back().step_index))
          decreasing = false;
      }
      for (int i = 0; i < kN; ++i) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (const auto& r : runs) {
          lo = std::min(lo, r.err(i));
          hi = std::max(hi, r.err(i));
        }
        worst_ratio = std::max(worst_ratio, lo > 0 ? hi / lo : (hi > 0 ? std::numeric_limits<double>::infinity() : 1.0));
      }
      const bool grid_ok = converged && decreasing && worst_ratio <= kTauRatio;
      ok = ok && grid_ok;
      text += " " + std::to_string(points) + "^2 [steps";
      for (const auto& r : runs)
        text += " " + std::to_string(r.h.records.back().step_index) + "/" + to_string(r.h.terminated_by);
      text += "; max_tau/min_tau err " + fmt("%.3g", worst_ratio) + "; steps decreasing " +
              (decreasing ? "yes" : "no") + "]";
    }
    report(2, ok, text + " (ratio <= " + fmt("%g", kTauRatio) + ", all ToleranceMet)");
  }

  // 3
  {
    const double tau = 0.9 * desk_bounds.tau_energy;
    progress("criterion 3: tau = " + fmt("%.3e", tau));
    const auto hist = march(desk, desk_u0, tau, b.energy_steps);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < hist.size(); ++i)
      worst = std::max(worst, (hist[i].energy - hist[i - 1].energy) / std::abs(hist[i - 1].energy));
    report(3, worst <= kEnergySlack,
           "monotone energy at tau = 0.9 tau_energy = " + fmt("%.3e", tau) + " over " +
               std::to_string(hist.size() - 1) + " steps: max relative rise " + fmt("%.3e", worst) + " (<= " +
               fmt("%.0e", kEnergySlack) + ")");
  }

  // 4
  {
    const double tau = 0.9 * desk_bounds.tau_quasi_stiefel;
    progress("criterion 4: tau = " + fmt("%.3e", tau));
    const auto hist = march(desk, desk_u0, tau, b.stiefel_steps);
    double lowest = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t i = 0; i < hist.size(); ++i)
      if (hist[i].lambda_min_gram < lowest) {
        lowest = hist[i].lambda_min_gram;
        at = i;
      }
    report(4, lowest >= 1.0 - kQuasiStiefelSlack,
           "quasi-Stiefel preservation at tau = 0.9 tau_quasi_stiefel = " + fmt("%.3e", tau) + " over " +
               std::to_string(hist.size() - 1) + " steps: min lambda_min(<U,U>) " + fmt("%.12f", lowest) +
               " at step " + std::to_string(at) + " (>= 1 - " + fmt("%.0e", kQuasiStiefelSlack) + ")");
  }

  // 5
  {
    const double tau = 0.9 * desk_bounds.tau_contraction;
    const double omega = 1.0 - tau / desk_bounds.energy0;
    progress("criterion 5: tau = " + fmt("%.3e", tau));
    const auto hist =
        march(desk, desk_u0, tau, b.contraction_cap, [](const StepDiagnostics& s) { return s.orth_error <= kFinalOrth; });
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < hist.size(); ++i)
      worst = std::max(worst, hist[i].orth_error * hist[i].orth_error -
                                  omega * hist[i - 1].orth_error * hist[i - 1].orth_error);
    const double final_orth = hist.back().orth_error;
    report(5, worst <= kContractionSlack && final_orth <= kFinalOrth,
           "orthogonality contraction at tau = 0.9 tau_contraction = " + fmt("%.3e", tau) +
               ": max(||O+||^2 - omega ||O||^2) " + fmt("%.3e", worst) + " (<= " + fmt("%.0e", kContractionSlack) +
               "), final ||O|| " + fmt("%.3e", final_orth) + " after " + std::to_string(hist.size() - 1) +
               " steps (<= " + fmt("%.0e", kFinalOrth) + ")");
  }

  // 7 (uses run 1; printed after 6)
  Line rates{7, false, true, ""};
  {
    std::vector<double> grad, orth;
    for (const auto& r : run1.h.records) {
      grad.push_back(r.grad_norm_a);
      orth.push_back(r.orth_error);
    }
    const double tau = 0.1;
    const double bound = std::log(1.0 - tau / desk_bounds.energy0) / 2.0 + kSlopeSlack;
    std::string text = "exponential rates on run 1:";
    bool ok = true;
    try {
      const RateFit fg = fit_exponential_rate(grad, kFitWindow, "grad_norm_a");
      const RateFit fo = fit_exponential_rate(orth, kFitWindow, "orth_error");
      ok = fg.r_squared >= kMinR2 && fg.slope_per_step < 0 && fo.r_squared >= kMinR2 && fo.slope_per_step < 0 &&
           fo.slope_per_step <= bound;
      text += " grad_norm_a slope " + fmt("%.3e", fg.slope_per_step) + " R^2 " + fmt("%.4f", fg.r_squared) +
              "; orth_error slope " + fmt("%.3e", fo.slope_per_step) + " R^2 " + fmt("%.4f", fo.r_squared) +
              " (slope <= " + fmt("%.3e", bound) + ", R^2 >= " + fmt("%.2f", kMinR2) + ")";
    } catch (const Error& e) {
      ok = false;
      text += std::string(" fit failed: ") + e.what();
    }
    rates.passed = ok;
    rates.text = text;
  }

  // 10 (before 6 so its drift counts)
  Line hydrogen{10, false, false, ""};
  {
    progress("criterion 10: soft Coulomb 21^3");
    ProblemConfig p;
    p.dim = 3;
    p.lower = {-20, -20, -20};
    p.upper = {20, 20, 20};
    p.points = {21, 21, 21};
    p.potential = PotentialKind::SoftCoulomb;
    p.charge = 1.0;
    p.c_lap = 0.5;
    p.sigma = 1.0;
    try {
      const Setup h(p);
      const Eigen::VectorXd ref = reference_values(h, 5);
      const Run r = solve(h, init_state(h.d, 5, init::QuasiStiefelScaled{kSeed}), 0.5, 1e-5, b.hydrogen_steps, ref);
      const double ground = r.values(0);
      hydrogen.passed = r.h.terminated_by == Termination::ToleranceMet && ground > kGroundLow && ground < kGroundHigh;
      hydrogen.text = std::string("coarse soft Coulomb 21^3, tau = 0.5: ") + to_string(r.h.terminated_by) +
                      " after " + std::to_string(r.h.records.back().step_index) + " steps, ground " +
                      fmt("%.6f", ground) + " in (" + fmt("%.2f", kGroundLow) + ", " + fmt("%.2f", kGroundHigh) +
                      "), " + fmt("%.1f", r.seconds) + " s";
    } catch (const Error& e) {
      hydrogen.text = std::string("coarse soft Coulomb run failed: ") + e.what();
    }
  }

  // 6
  report(6, worst_drift <= kDriftTol,
         "Cayley Gram preservation over every acceptance run: max relative drift " + fmt("%.3e", worst_drift) +
             " (<= " + fmt("%.0e", kDriftTol) + ")");
  report(7, rates.passed, rates.text);

  // 8
  {
    progress("criterion 8: tiny dense problem");
    const auto t0 = Clock::now();
    const TinyProblem tp;
    const BlockState u0 = init_state(tp.d, 2, init::QuasiStiefelScaled{kSeed});
    const double dist =
        subspace_distance_a(tp.d, closed_form_solution(tp.op, u0, 1.0), rk4_integrate(tp.d, tp.g, u0, 1.0, 1e-4));
    const double e0 = energy(tp.d, u0);
    const double o0 = orthogonality_error(tp.d, u0);
    double worst = -std::numeric_limits<double>::infinity();
    for (double t : {0.5, 1.0, 2.0}) {
      const double o = orthogonality_error(tp.d, closed_form_solution(tp.op, u0, t));
      worst = std::max(worst, o - (o0 * std::exp(-t / e0) + kContinuousOrth));
    }
    const double secs = seconds_since(t0);
    report(8, dist <= kContinuousDist && worst <= 0.0 && secs < kContinuousSeconds,
           "continuous model: closed form vs RK4 at t = 1 distance " + fmt("%.3e", dist) + " (<= " +
               fmt("%.0e", kContinuousDist) + "), orthogonality bound margin " + fmt("%.3e", -worst) +
               " (>= 0), " + fmt("%.2f", secs) + " s (< " + fmt("%g", kContinuousSeconds) + ")");
  }

  // 9
  {
    progress("criterion 9: spectral bounds");
    std::mt19937_64 rng(kSeed);
    const auto checks = check_spectral_bounds(desk.d, *desk.g, kN, kSpectralSamples, rng);
    const double low = checks[0].measured;
    const double high = checks[1].measured;
    report(9, low >= -kSpectralSlack && high >= -kSpectralSlack,
           std::to_string(kSpectralSamples) +
               " random quasi-Stiefel states: min(lambda_min(<U,GU>) - 1/(2E)) " + fmt("%.3e", low) +
               ", min(lambda_max(<U,U>)/lambda_1 - lambda_max(<U,GU>)) " + fmt("%.3e", high) + " (>= -" +
               fmt("%.0e", kSpectralSlack) + ")");
  }

  report(10, hydrogen.passed, hydrogen.text, false);

  int failed = 0;
  for (const auto& l : lines)
    if (l.gating && !l.passed) ++failed;
  std::printf("%d of 9 gating criteria failed; total %.1f s\n", failed, seconds_since(start));
  return failed == 0 ? 0 : 1;
}
