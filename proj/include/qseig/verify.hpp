#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "qseig/analysis.hpp"
#include "qseig/blockvec.hpp"
#include "qseig/config.hpp"
#include "qseig/discretize.hpp"
#include "qseig/greens.hpp"
#include "qseig/scheme.hpp"

namespace qseig {

/// Outcome of one invariant check. `measured` is compared against
/// `threshold` in the direction the check states (usually measured <= threshold).
struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

inline CheckResult check_le(std::string name, double measured, double threshold, std::string detail = {}) {
  return {std::move(name), std::isfinite(measured) && measured <= threshold, measured, threshold,
          std::move(detail)};
}
inline CheckResult check_ge(std::string name, double measured, double threshold, std::string detail = {}) {
  return {std::move(name), std::isfinite(measured) && measured >= threshold, measured, threshold,
          std::move(detail)};
}

inline BlockState random_block(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return BlockState(std::move(m));
}

/// Rescales U so that lambda_min(<U,U>) = 1.
inline BlockState scale_to_quasi_stiefel(const Discretization& d, const BlockState& u) {
  return BlockState(u.matrix() / std::sqrt(lambda_min(gram_l2_self(d, u))));
}

/// Random member of the quasi-Stiefel set, smoothed by `smoothing` Green
/// applications so that its energy is moderate and the spectral bounds are
/// tested away from their trivial regime.
inline BlockState random_quasi_stiefel(const Discretization& d, const InverseOperator& g, Eigen::Index n,
                                       int smoothing, std::mt19937_64& rng) {
  BlockState u = random_block(d.size(), n, rng);
  for (int k = 0; k < smoothing; ++k) u = scale_to_quasi_stiefel(d, g.apply(u));
  return scale_to_quasi_stiefel(d, u);
}

/// The configured problem with every axis capped so that Ng stays within the
/// dense path.
inline ProblemConfig downscaled(const ProblemConfig& p, int max_total = 150) {
  ProblemConfig q = p;
  const int cap = std::max(2, static_cast<int>(std::floor(std::pow(max_total, 1.0 / p.dim) + 1e-9)));
  for (auto& k : q.points) k = std::min(k, cap);
  return q;
}

// ---------------------------------------------------------------------------
// Per-step measurements along a predictor-corrector trajectory

struct TrajectoryRecord {
  double energy = 0.0;
  double orth_sq = 0.0;  // ||<U,U> - I||_F^2
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double drift_rel = 0.0;
  double corrector_gap = 0.0;  // lambda_max(<U+,GU+> - <U_hat,GU_hat>)
  double grad_a_sq_hat = 0.0;
  double grad_a_sq_next = 0.0;
  double grad_l2 = 0.0;
  double tau_quasi_stiefel_n = 0.0;  // lambda_1 / (2 lambda_max(<U_n,U_n>))
  Eigen::VectorXd ritz;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;  // records[0] describes U_0
  BlockState final_state;
};

inline TrajectoryRecord measure_state(const Discretization& d, const BlockState& u) {
  TrajectoryRecord r;
  r.energy = energy(d, u);
  const GramMatrix s = gram_l2_self(d, u);
  r.orth_sq = (s.matrix() - Eigen::MatrixXd::Identity(s.size(), s.size())).squaredNorm();
  const SymEig e = sym_eig(s);
  r.lambda_min = e.values(0);
  r.lambda_max = e.values(e.values.size() - 1);
  if (d.lambda1_est) r.tau_quasi_stiefel_n = *d.lambda1_est / (2.0 * r.lambda_max);
  return r;
}

inline Trajectory trace_trajectory(const Discretization& d, const InverseOperator& g, const BlockState& u0,
                                   double tau, int steps, bool with_ritz = false) {
  Trajectory t;
  Iterate cur = make_iterate(g, u0);
  {
    TrajectoryRecord r0 = measure_state(d, cur.U);
    r0.grad_l2 = grad_norms_from(d, cur.U, cur.GU).l2;
    if (with_ritz) r0.ritz = extract_eigenvalues_from(d, cur.U, cur.GU).eigenvalues;
    t.records.push_back(std::move(r0));
  }
  for (int n = 1; n <= steps; ++n) {
    StepOutcome out = step(d, g, cur, tau, n);
    TrajectoryRecord r = measure_state(d, out.next.U);
    r.drift_rel = out.diag.predictor_gram_drift_rel;
    const GramMatrix diff(gram_l2(d, out.next.U, out.next.GU) - gram_l2(d, out.u_hat, out.gu_hat));
    r.corrector_gap = lambda_max(diff);
    r.grad_a_sq_hat = std::pow(grad_norms_from(d, out.u_hat, out.gu_hat).a, 2);
    const GradNorms gn = grad_norms_from(d, out.next.U, out.next.GU);
    r.grad_a_sq_next = gn.a * gn.a;
    r.grad_l2 = gn.l2;
    if (with_ritz) r.ritz = extract_eigenvalues_from(d, out.next.U, out.next.GU).eigenvalues;
    t.records.push_back(std::move(r));
    cur = std::move(out.next);
  }
  t.final_state = cur.U;
  return t;
}

// ---------------------------------------------------------------------------
// Individual invariants

inline double operator_scale(const Discretization& d) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < d.A.outerSize(); ++j)
    for (Eigen::SparseMatrix<double>::InnerIterator it(d.A, j); it; ++it) s = std::max(s, std::abs(it.value()));
  return s;
}

inline std::vector<CheckResult> check_operator_symmetry(const Discretization& d, std::mt19937_64& rng) {
  const Eigen::SparseMatrix<double> at = d.A.transpose();
  const double exact = (d.A - at).norm();
  const BlockState u = random_block(d.size(), 3, rng);
  const BlockState v = random_block(d.size(), 3, rng);
  const double t1 = (u.matrix().transpose() * (d.A * v.matrix())).trace();
  const double t2 = (v.matrix().transpose() * (d.A * u.matrix())).trace();
  const double scale = operator_scale(d) * u.matrix().norm() * v.matrix().norm();
  return {check_le("discretize: A exactly symmetric", exact, 0.0),
          check_le("discretize: trace(U^T A V) symmetry", std::abs(t1 - t2), 1e-12 * scale)};
}

inline CheckResult check_mass_symmetry(const Discretization& d, std::mt19937_64& rng) {
  const BlockState u = random_block(d.size(), 3, rng);
  const BlockState v = random_block(d.size(), 3, rng);
  const Eigen::MatrixXd lhs = apply_mass(d, u).matrix().transpose() * v.matrix();
  const Eigen::MatrixXd rhs = u.matrix().transpose() * apply_mass(d, v).matrix();
  return check_le("discretize: mass pairing symmetric", (lhs - rhs).norm() / lhs.norm(), 1e-14);
}

inline CheckResult check_shift_equivariance(const ProblemConfig& p) {
  ProblemConfig small = downscaled(p);
  const double sigma = small.effective_sigma();
  small.sigma = sigma;
  const DenseOperator base = DenseOperator::from(small.build());
  small.sigma = sigma + 5.0;
  const DenseOperator shifted = DenseOperator::from(small.build());
  const double dev = (shifted.mu.array() - base.mu.array() - 5.0).abs().maxCoeff();
  return check_le("discretize: shift equivariance", dev, 1e-10);
}

inline std::vector<CheckResult> check_pairing(const Discretization& d, Eigen::Index n, std::mt19937_64& rng) {
  const BlockState u = random_block(d.size(), n, rng);
  const BlockState v = random_block(d.size(), n, rng);
  const double l2 = (gram_l2(d, u, v) - gram_l2(d, v, u).transpose()).cwiseAbs().maxCoeff();
  const double a = (gram_a(d, u, v) - gram_a(d, v, u).transpose()).cwiseAbs().maxCoeff();
  const double tr = gram_l2_self(d, u).matrix().trace();
  const double tr0 = gram_l2_self(d, BlockState::zeros(d.size(), n)).matrix().trace();
  return {check_le("blockvec: gram_l2 transpose symmetry (exact)", l2, 0.0),
          check_le("blockvec: gram_a transpose symmetry (exact)", a, 0.0),
          check_ge("blockvec: trace <U,U> positive for U != 0", tr, 1e-14),
          check_le("blockvec: trace <0,0> vanishes", std::abs(tr0), 0.0)};
}

inline CheckResult check_inv_sqrt_square(std::mt19937_64& rng, int k = 6) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd r(k, k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i) r(i, j) = normal(rng);
  const GramMatrix s(r * r.transpose() + 0.1 * Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd h = inv_sqrt(s).matrix();
  const Eigen::MatrixXd back = (h * h).inverse();
  return check_le("blockvec: inv_sqrt(S)^-2 reproduces S", (back - s.matrix()).norm() / s.matrix().norm(), 1e-9);
}

inline CheckResult check_triangle(const Discretization& d, Eigen::Index n, std::mt19937_64& rng, int trials = 5) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    const BlockState u = random_block(d.size(), n, rng);
    const BlockState v = random_block(d.size(), n, rng);
    const BlockState w = random_block(d.size(), n, rng);
    const double excess = subspace_distance_a(d, u, w) - subspace_distance_a(d, u, v) - subspace_distance_a(d, v, w);
    worst = std::max(worst, excess);
  }
  return check_le("blockvec: subspace distance triangle inequality", worst, 1e-9);
}

inline std::vector<CheckResult> check_green(const Discretization& d, const InverseOperator& g, Eigen::Index n,
                                            std::mt19937_64& rng) {
  const BlockState u = random_block(d.size(), n, rng);
  const BlockState v = random_block(d.size(), n, rng);
  const BlockState gu = g.apply(u);
  const BlockState gv = g.apply(v);
  // (GU, V) = (U, GV) entrywise: (Gu_i, v_j) = (u_i, Gv_j)
  const Eigen::MatrixXd lhs = gram_l2(d, gu, v);
  const Eigen::MatrixXd rhs = gram_l2(d, u, gv);
  const double sa = (lhs - rhs).norm() / lhs.norm();
  const Eigen::MatrixXd dual = gram_a(d, gu, v);
  const Eigen::MatrixXd l2 = gram_l2(d, u, v);
  const double du = (dual - l2).norm() / l2.norm();
  const double pos = lambda_min(GramMatrix(gram_l2(d, u, gu)));
  return {check_le("greens: self-adjointness (GU,V) = (U,GV)", sa, 1e-9),
          check_le("greens: duality <GU,V>_a = <U,V>", du, 1e-9),
          check_ge("greens: <U,GU> positive definite", pos, std::numeric_limits<double>::min())};
}

/// Lower and upper spectral bounds for <U,GU> over `samples` random
/// quasi-Stiefel states. Reports the worst slack of each (negative = violated).
inline std::vector<CheckResult> check_spectral_bounds(const Discretization& d, const InverseOperator& g,
                                                      Eigen::Index n, int samples, std::mt19937_64& rng) {
  require(d.lambda1_est.has_value(), ErrorKind::MissingLambda1, "spectral bound check needs lambda_1");
  const double l1 = *d.lambda1_est;
  double worst_low = std::numeric_limits<double>::infinity();
  double worst_high = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    const BlockState u = random_quasi_stiefel(d, g, n, k % 4, rng);
    const GramMatrix ugu(gram_l2(d, u, g.apply(u)));
    const SymEig e = sym_eig(ugu);
    const double lo = 1.0 / (2.0 * energy(d, u));
    const double hi = lambda_max(gram_l2_self(d, u)) / l1;
    worst_low = std::min(worst_low, e.values(0) - lo);
    worst_high = std::min(worst_high, hi - e.values(e.values.size() - 1));
  }
  return {check_ge("greens: lambda_min(<U,GU>) >= 1/(2E(U))", worst_low, -1e-9,
                   std::to_string(samples) + " random quasi-Stiefel states"),
          check_ge("greens: lambda_max(<U,GU>) <= lambda_max(<U,U>)/lambda_1", worst_high, -1e-9,
                   std::to_string(samples) + " random quasi-Stiefel states")};
}

// ---------------------------------------------------------------------------
// Trajectory invariants

inline CheckResult check_quasi_stiefel(const Trajectory& t) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& r : t.records) worst = std::min(worst, r.lambda_min);
  return check_ge("scheme: quasi-Stiefel preservation lambda_min >= 1 - 1e-8", worst, 1.0 - 1e-8);
}

inline CheckResult check_nonexpansion(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.records.size(); ++i)
    worst = std::max(worst, t.records[i].lambda_max - t.records[i - 1].lambda_max);
  return check_le("scheme: non-expansion of lambda_max(<U,U>)", worst, 1e-8);
}

inline CheckResult check_predictor_drift(const Trajectory& t) {
  double worst = 0.0;
  for (std::size_t i = 1; i < t.records.size(); ++i) worst = std::max(worst, t.records[i].drift_rel);
  return check_le("scheme: predictor Gram preservation (relative)", worst, 1e-9);
}

inline CheckResult check_corrector_monotone(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.records.size(); ++i) worst = std::max(worst, t.records[i].corrector_gap);
  return check_le("scheme: corrector monotonicity of <U,GU>", worst, 1e-9);
}

inline CheckResult check_gradient_corrector(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.records.size(); ++i)
    worst = std::max(worst, t.records[i].grad_a_sq_next - t.records[i].grad_a_sq_hat);
  return check_le("scheme: corrector does not expand the a-norm gradient", worst, 1e-9);
}

inline CheckResult check_energy_monotone(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.records.size(); ++i) {
    const double e0 = t.records[i - 1].energy;
    worst = std::max(worst, (t.records[i].energy - e0) / std::abs(e0));
  }
  return check_le("scheme: monotone energy", worst, 1e-10);
}

inline CheckResult check_contraction(const Trajectory& t, double tau, double energy0) {
  const double omega = 1.0 - tau / energy0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.records.size(); ++i)
    worst = std::max(worst, t.records[i].orth_sq - omega * t.records[i - 1].orth_sq);
  return check_le("scheme: orthogonality contraction ||O||^2", worst, 1e-10);
}

inline CheckResult check_orthonormal_invariance(const Trajectory& t) {
  double worst = 0.0;
  for (const auto& r : t.records) worst = std::max(worst, std::sqrt(r.orth_sq));
  return check_le("scheme: orthonormal start stays orthonormal", worst, 1e-8);
}

/// Ritz values are non-increasing over the final half of the trajectory.
inline CheckResult check_ritz_monotone(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  const std::size_t start = std::max<std::size_t>(1, t.records.size() / 2);
  for (std::size_t i = start; i < t.records.size(); ++i) {
    const Eigen::VectorXd inc = t.records[i].ritz - t.records[i - 1].ritz;
    worst = std::max(worst, inc.maxCoeff());
  }
  return check_le("analysis: Ritz values non-increasing after transient", worst, 1e-9);
}

inline CheckResult check_determinism(const Discretization& d, const InverseOperator& g, const BlockState& u0,
                                     double tau, int steps) {
  SchemeConfig c;
  c.tau = tau;
  c.eps = 1e-300;
  c.max_steps = steps;
  const RunHistory a = run(d, g, c, u0);
  const RunHistory b = run(d, g, c, u0);
  bool same = a.final_state == b.final_state && a.records.size() == b.records.size();
  for (std::size_t i = 0; same && i < a.records.size(); ++i) {
    same = a.records[i].energy == b.records[i].energy && a.records[i].grad_norm == b.records[i].grad_norm &&
           a.records[i].orth_error == b.records[i].orth_error;
  }
  return {"scheme: repeated run is bitwise identical", same, same ? 0.0 : 1.0, 0.0, {}};
}

// ---------------------------------------------------------------------------
// Continuous model on a tiny dense problem

struct TinyProblem {
  Discretization d;
  InverseOperator g;
  DenseOperator op;

  explicit TinyProblem(int points = 20)
      : d(assemble(DomainSpec{1, {0.0}, {1.0}}, GridSpec{{points}}, potential::Zero{}, 1.0, 0.0)),
        g(d, solver::Direct{}),
        op(DenseOperator::from(d)) {}
};

inline std::vector<CheckResult> check_continuous(const TinyProblem& tp, std::uint64_t seed) {
  const Discretization& d = tp.d;
  std::vector<CheckResult> out;
  const BlockState u0 = init_state(d, 2, init::QuasiStiefelScaled{seed});
  const double e0 = energy(d, u0);
  const double o0 = orthogonality_error(d, u0);

  double worst_dist = 0.0;
  double worst_orth = -std::numeric_limits<double>::infinity();
  for (double t : {0.5, 1.0, 2.0}) {
    const BlockState cf = closed_form_solution(tp.op, u0, t);
    const BlockState rk = rk4_integrate(d, tp.g, u0, t, 1e-4);
    worst_dist = std::max(worst_dist, subspace_distance_a(d, cf, rk));
    worst_orth = std::max(worst_orth, orthogonality_error(d, cf) - (o0 * std::exp(-t / e0) + 1e-6));
  }
  out.push_back(check_le("analysis: closed form matches RK4 (subspace distance)", worst_dist, 1e-6,
                         "t in {0.5, 1, 2}, dt = 1e-4"));
  out.push_back(check_le("analysis: continuous orthogonality decay bound", worst_orth, 0.0));

  // orthonormal start keeps <U(t),U(t)> = I
  const BlockState q0 = init_state(d, 2, init::Orthonormal{seed});
  out.push_back(check_le("analysis: closed form preserves orthonormality",
                         orthogonality_error(d, closed_form_solution(tp.op, q0, 1.0)), 1e-10));

  // energy is non-increasing along RK4 steps
  {
    BlockState u = u0;
    double worst = -std::numeric_limits<double>::infinity();
    double e_prev = energy(d, u);
    for (int k = 0; k < 200; ++k) {
      u = rk4_integrate(d, tp.g, u, 1e-2, 1e-2);
      const double e = energy(d, u);
      worst = std::max(worst, e - e_prev);
      e_prev = e;
    }
    out.push_back(check_le("analysis: RK4 energy non-increasing", worst, 1e-10));
  }

  // one scheme step against the flow over the same time: the local gap is
  // O(tau^2) from an orthonormal start, where the corrector is inactive
  {
    auto gap = [&](double tau) {
      const BlockState target = rk4_integrate(d, tp.g, q0, tau, 1e-4);
      const BlockState one = step(d, tp.g, make_iterate(tp.g, q0), tau).next.U;
      return eigenvector_error(one, target, d);
    };
    const double ratio = gap(1.0) / gap(0.5);
    out.push_back(check_ge("analysis: one-step gap to the flow shrinks 4x per halving", ratio, 3.5,
                           "gap(tau = 1) / gap(tau = 0.5)"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Suite

struct VerifyOptions {
  int steps = 200;
  int spectral_samples = 50;
  std::uint64_t seed = 7;
  double orthonormal_tau = 0.1;
  double reference_tol = 1e-10;
  int reference_max_iter = 200000;
};

/// Runs every invariant on the configured problem. Progress lines go to `log`
/// when given.
inline std::vector<CheckResult> verify_all(const RunConfig& cfg, const VerifyOptions& opt = {},
                                           std::ostream* log = nullptr) {
  std::vector<CheckResult> out;
  auto note = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };
  auto add = [&](std::vector<CheckResult> v) { out.insert(out.end(), v.begin(), v.end()); };
  std::mt19937_64 rng(opt.seed);

  note("assembling configured problem");
  Discretization d = cfg.problem.build();
  const InverseOperator g(d, cfg.solver.method_for(d.size()));
  estimate_lambda1(d, g, cfg.scheme.lambda1_tol);
  const auto n = static_cast<Eigen::Index>(cfg.n_eig);

  add(check_operator_symmetry(d, rng));
  out.push_back(check_mass_symmetry(d, rng));
  out.push_back(check_shift_equivariance(cfg.problem));
  add(check_pairing(d, n, rng));
  out.push_back(check_inv_sqrt_square(rng));
  out.push_back(check_triangle(d, n, rng));
  add(check_green(d, g, n, rng));
  note("spectral bounds");
  add(check_spectral_bounds(d, g, n, opt.spectral_samples, rng));

  note("quasi-Stiefel trajectory");
  const BlockState u0 = init_state(d, cfg.n_eig, init::QuasiStiefelScaled{opt.seed});
  const StepBounds b = compute_step_bounds(d, u0);
  {
    const Trajectory t = trace_trajectory(d, g, u0, 0.9 * b.tau_quasi_stiefel, opt.steps, true);
    out.push_back(check_quasi_stiefel(t));
    out.push_back(check_nonexpansion(t));
    out.push_back(check_predictor_drift(t));
    out.push_back(check_corrector_monotone(t));
    out.push_back(check_gradient_corrector(t));
    out.push_back(check_ritz_monotone(t));

    note("reference eigenpairs");
    const ReferenceResult ref = reference_subspace_iteration(d, g, cfg.n_eig, opt.reference_tol, opt.reference_max_iter);
    const EigenReport again = extract_eigenvalues(d, g, ref.block);
    out.push_back(check_le("analysis: extraction reproduces the oracle",
                           relative_errors(again.eigenvalues, ref.report.eigenvalues).maxCoeff(), 1e-10));
    out.push_back(check_ge("analysis: energy of iterate >= oracle energy",
                           energy(d, t.final_state) - ref.report.energy, -1e-8));
  }

  note("energy and contraction trajectories");
  {
    const double tau = 0.9 * std::min(b.tau_energy, b.tau_contraction);
    const Trajectory t = trace_trajectory(d, g, u0, tau, opt.steps);
    out.push_back(check_energy_monotone(t));
  }
  {
    const double tau = 0.9 * b.tau_contraction;
    const Trajectory t = trace_trajectory(d, g, u0, tau, opt.steps);
    out.push_back(check_contraction(t, tau, b.energy0));
  }
  {
    const BlockState q0 = init_state(d, cfg.n_eig, init::Orthonormal{opt.seed});
    out.push_back(check_orthonormal_invariance(trace_trajectory(d, g, q0, opt.orthonormal_tau, opt.steps)));
  }
  out.push_back(check_determinism(d, g, u0, cfg.scheme.tau, std::min(opt.steps, 20)));

  note("continuous model on the tiny dense problem");
  const TinyProblem tiny;
  add(check_continuous(tiny, opt.seed));
  return out;
}

}  // namespace qseig
