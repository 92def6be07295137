#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "qseig/analysis.hpp"
#include "qseig/block_state.hpp"
#include "qseig/blockvec.hpp"
#include "qseig/discretize.hpp"
#include "qseig/error.hpp"
#include "qseig/greens.hpp"

namespace qseig {

namespace init {
/// iid standard normal entries
struct RawRandom {
  std::uint64_t seed = 0;
  bool operator==(const RawRandom&) const = default;
};
/// raw random, scaled so that lambda_min(<U0,U0>) = 1
struct QuasiStiefelScaled {
  std::uint64_t seed = 0;
  bool operator==(const QuasiStiefelScaled&) const = default;
};
/// raw random, multiplied by <U0,U0>^{-1/2}
struct Orthonormal {
  std::uint64_t seed = 0;
  bool operator==(const Orthonormal&) const = default;
};
/// caller supplies U0
struct FromState {
  bool operator==(const FromState&) const = default;
};
}  // namespace init

using InitMode = std::variant<init::RawRandom, init::QuasiStiefelScaled, init::Orthonormal, init::FromState>;

enum class BoundsPolicy { Warn, Reject };

struct SchemeConfig {
  double tau = 0.1;
  double eps = 1e-5;
  std::int64_t max_steps = 100000;
  InitMode init = init::QuasiStiefelScaled{42};
  BoundsPolicy enforce_bounds = BoundsPolicy::Warn;

  bool operator==(const SchemeConfig&) const = default;

  void validate() const {
    require(tau > 0 && std::isfinite(tau), ErrorKind::InvalidArgument, "tau must be positive");
    require(eps > 0 && std::isfinite(eps), ErrorKind::InvalidArgument, "eps must be positive");
    require(max_steps >= 1, ErrorKind::InvalidArgument, "max_steps must be at least 1");
  }
};

struct StepDiagnostics {
  std::int64_t step_index = 0;
  double energy = 0.0;            // shifted operator
  double energy_unshifted = 0.0;
  double orth_error = 0.0;        // ||<U,U> - I||_F
  double grad_norm = 0.0;         // L2 norm of GU - U<GU,U>
  double grad_norm_a = 0.0;       // a-norm of the same
  double lambda_min_gram = 0.0;
  double lambda_max_gram = 0.0;
  double predictor_gram_drift = 0.0;      // ||<U_hat,U_hat> - <U_prev,U_prev>||_F
  double predictor_gram_drift_rel = 0.0;  // the same over ||<U_prev,U_prev>||_F
  std::uint64_t green_solves = 0;         // cumulative
};

enum class Termination { ToleranceMet, MaxSteps, Diverged };

constexpr const char* to_string(Termination t) {
  switch (t) {
    case Termination::ToleranceMet: return "ToleranceMet";
    case Termination::MaxSteps: return "MaxSteps";
    case Termination::Diverged: return "Diverged";
  }
  return "Unknown";
}

/// Step-size safeguards derived from lambda_1 (shifted pencil), E(U0) and
/// lambda_max(<U0,U0>). tau_energy uses c_Omega = 1/sqrt(lambda_1) and is an
/// estimate.
struct StepBounds {
  double tau_nonexpansion = 0.0;
  double tau_quasi_stiefel = 0.0;
  double tau_contraction = 0.0;
  double tau_energy = 0.0;
  double c_e = 0.0;
  double lambda1 = 0.0;
  double energy0 = 0.0;
  double lambda_max0 = 0.0;
};

struct RunHistory {
  StepDiagnostics initial;
  std::vector<StepDiagnostics> records;
  Termination terminated_by = Termination::MaxSteps;
  BlockState final_state;
  std::optional<StepBounds> bounds;
  std::vector<std::string> warnings;
};

/// A state together with its Green image, so that G U_n is computed once.
struct Iterate {
  BlockState U;
  BlockState GU;
};

inline Iterate make_iterate(const InverseOperator& g, BlockState u) {
  BlockState gu = g.apply(u);
  return {std::move(u), std::move(gu)};
}

// ---------------------------------------------------------------------------

inline BlockState init_state(const Discretization& d, int n, const InitMode& mode) {
  require(n >= 1 && n <= d.size(), ErrorKind::InvalidArgument, "need 1 <= N <= Ng");
  if (std::holds_alternative<init::FromState>(mode)) {
    throw Error(ErrorKind::InvalidArgument, "FromState initialization needs an explicit U0");
  }
  const std::uint64_t seed = std::visit(
      [](const auto& m) -> std::uint64_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, init::FromState>) {
          return 0;
        } else {
          return m.seed;
        }
      },
      mode);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::MatrixXd raw(d.size(), n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < d.size(); ++i) raw(i, j) = normal(rng);
    const BlockState u(std::move(raw));
    const GramMatrix s = gram_l2_self(d, u);
    const SymEig e = sym_eig(s);
    const double lmin = e.values(0);
    const double lmax = e.values(n - 1);
    if (!(lmin >= 1e-12 * lmax)) continue;

    if (std::holds_alternative<init::RawRandom>(mode)) return u;
    if (std::holds_alternative<init::QuasiStiefelScaled>(mode)) {
      return BlockState(u.matrix() / std::sqrt(lmin));
    }
    return combine(u, inv_sqrt(s).matrix());
  }
  throw Error(ErrorKind::RankDeficient, "random initial block rank deficient after 3 redraws");
}

/// A_U V = GU <U,V> - U <GU,V>
inline BlockState skew_apply(const Discretization& d, const BlockState& u, const BlockState& gu,
                             const BlockState& v) {
  require_same_shape(u, gu, "skew_apply");
  require_rows(d, v, "skew_apply");
  return BlockState(gu.matrix() * gram_l2(d, u, v) - u.matrix() * gram_l2(d, gu, v));
}

/// Implicit midpoint predictor U_hat = (I - tau/2 A)^{-1} (I + tau/2 A) U_n,
/// solved exactly through the rank-2N factorization A = W <Z, .> with
/// W = [GU, -U] and Z = [U, GU]. Every inner product with Z reduces to the
/// three N x N Grams of U and GU, so U_hat = U alpha + GU beta.
inline BlockState cayley_step(const Discretization& d, const BlockState& u, const BlockState& gu, double tau) {
  require(tau > 0, ErrorKind::InvalidArgument, "tau must be positive");
  require_same_shape(u, gu, "cayley_step");
  require_rows(d, u, "cayley_step");
  const Eigen::Index n = u.cols();
  const double c = 0.5 * tau;

  const Eigen::MatrixXd su = gram_l2(d, u, u);
  const Eigen::MatrixXd p = gram_l2(d, u, gu);
  const Eigen::MatrixXd q = gram_l2(d, gu, gu);

  // <Z,W> and <Z,U>
  Eigen::MatrixXd k(2 * n, 2 * n);
  k << p, -su, q, -p.transpose();
  Eigen::MatrixXd z0(2 * n, n);
  z0 << su, p.transpose();

  const Eigen::MatrixXd zb = z0 + c * (k * z0);
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(2 * n, 2 * n) - c * k;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  if (!(lu.rcond() > 1e-14)) {
    throw Error(ErrorKind::SmallSolveSingular, "Cayley reduced system is singular");
  }
  const Eigen::MatrixXd x = c * (z0 + lu.solve(zb));
  // W x = GU x_top - U x_bottom
  const Eigen::MatrixXd alpha = Eigen::MatrixXd::Identity(n, n) - x.bottomRows(n);
  return BlockState(u.matrix() * alpha + gu.matrix() * x.topRows(n));
}

/// U_{n+1} = U_hat - tau G U_hat (<U_hat,U_hat> - I), with G U_hat supplied.
inline BlockState corrector_step_from(const Discretization& d, const BlockState& u_hat,
                                      const BlockState& gu_hat, double tau) {
  require(tau > 0, ErrorKind::InvalidArgument, "tau must be positive");
  require_same_shape(u_hat, gu_hat, "corrector_step");
  const Eigen::MatrixXd o =
      gram_l2_self(d, u_hat).matrix() - Eigen::MatrixXd::Identity(u_hat.cols(), u_hat.cols());
  return BlockState(u_hat.matrix() - tau * (gu_hat.matrix() * o));
}

inline BlockState corrector_step(const Discretization& d, const InverseOperator& g, const BlockState& u_hat,
                                 double tau) {
  return corrector_step_from(d, u_hat, g.apply(u_hat), tau);
}

inline StepDiagnostics diagnose(const Discretization& d, const InverseOperator& g, const Iterate& it,
                                std::int64_t index) {
  StepDiagnostics s;
  s.step_index = index;
  const Eigen::MatrixXd au = d.A * it.U.matrix();
  s.energy = 0.5 * it.U.matrix().cwiseProduct(au).sum();
  const GramMatrix gram = gram_l2_self(d, it.U);
  s.energy_unshifted = s.energy - 0.5 * d.sigma * gram.matrix().trace();
  s.orth_error = (gram.matrix() - Eigen::MatrixXd::Identity(gram.size(), gram.size())).norm();
  const SymEig e = sym_eig(gram);
  s.lambda_min_gram = e.values(0);
  s.lambda_max_gram = e.values(e.values.size() - 1);
  // R = GU - U <GU,U>;  A R = M U - A U <GU,U>
  const Eigen::MatrixXd pt = gram_l2(d, it.GU, it.U);
  const Eigen::MatrixXd r = it.GU.matrix() - it.U.matrix() * pt;
  const Eigen::MatrixXd ar = d.M.asDiagonal() * it.U.matrix() - au * pt;
  s.grad_norm = std::sqrt(std::max(0.0, (d.sqrt_M.asDiagonal() * r).squaredNorm()));
  s.grad_norm_a = std::sqrt(std::max(0.0, r.cwiseProduct(ar).sum()));
  s.green_solves = g.solve_count();
  return s;
}

struct StepOutcome {
  Iterate next;
  StepDiagnostics diag;  // describes next.U
  BlockState u_hat;
  BlockState gu_hat;
};

/// One predictor-corrector step. Costs exactly 2N Green solves: G U_hat and
/// G U_{n+1}; G U_n is carried in by `cur`.
inline StepOutcome step(const Discretization& d, const InverseOperator& g, const Iterate& cur, double tau,
                        std::int64_t index = 1) {
  BlockState u_hat = cayley_step(d, cur.U, cur.GU, tau);
  BlockState gu_hat = g.apply(u_hat);
  BlockState u_next = corrector_step_from(d, u_hat, gu_hat, tau);
  Iterate next = make_iterate(g, std::move(u_next));

  StepDiagnostics diag = diagnose(d, g, next, index);
  const Eigen::MatrixXd before = gram_l2(d, cur.U, cur.U);
  diag.predictor_gram_drift = (gram_l2_self(d, u_hat).matrix() - before).norm();
  diag.predictor_gram_drift_rel = diag.predictor_gram_drift / before.norm();
  return {std::move(next), diag, std::move(u_hat), std::move(gu_hat)};
}

inline StepBounds compute_step_bounds(const Discretization& d, const BlockState& u0) {
  if (!d.lambda1_est) {
    throw Error(ErrorKind::MissingLambda1, "estimate_lambda1 must run before computing step bounds");
  }
  StepBounds b;
  b.lambda1 = *d.lambda1_est;
  b.energy0 = energy(d, u0);
  b.lambda_max0 = lambda_max(gram_l2_self(d, u0));
  const double l1 = b.lambda1;
  const double e0 = b.energy0;
  const double lm = b.lambda_max0;
  const auto n = static_cast<double>(u0.cols());
  const double c_omega_sq = 1.0 / l1;

  b.c_e = 2.0 * (std::sqrt(2.0) * e0 / l1 + c_omega_sq * std::sqrt(e0 * lm)) * std::sqrt(n * e0 * lm) + 0.5;
  b.tau_nonexpansion = 2.0 * l1 / lm;
  b.tau_quasi_stiefel = l1 / (2.0 * lm);
  b.tau_contraction = std::min(l1 / (3.0 * lm), e0);
  b.tau_energy = std::min(l1 / (2.0 * b.c_e * lm), l1 / (2.0 * std::sqrt(2.0 * e0 * lm)));
  return b;
}

using StepObserver = std::function<void(std::int64_t, const BlockState&)>;

/// Uniform-step driver: iterate until the L2 Grassmann gradient drops below
/// eps, the step budget runs out, or the trajectory diverges.
inline RunHistory run(const Discretization& d, const InverseOperator& g, const SchemeConfig& config,
                      const BlockState& u0, const StepObserver& observer = {}) {
  config.validate();
  require_rows(d, u0, "run");
  {
    const SymEig e = sym_eig(gram_l2_self(d, u0));
    require(e.values(0) >= 1e-12 * e.values(e.values.size() - 1) && e.values(0) > 0,
            ErrorKind::RankDeficient, "U0 is not of full column rank");
  }

  RunHistory h;
  if (d.lambda1_est) {
    h.bounds = compute_step_bounds(d, u0);
    const StepBounds& b = *h.bounds;
    auto check = [&](double bound, const char* name) {
      if (config.tau >= bound) {
        std::ostringstream msg;
        msg.precision(6);
        msg << "tau = " << config.tau << " exceeds " << name << " = " << bound;
        h.warnings.push_back(msg.str());
      }
    };
    check(b.tau_nonexpansion, "tau_nonexpansion");
    check(b.tau_quasi_stiefel, "tau_quasi_stiefel");
    check(b.tau_contraction, "tau_contraction");
    check(b.tau_energy, "tau_energy (estimate)");
    if (config.enforce_bounds == BoundsPolicy::Reject && config.tau >= b.tau_quasi_stiefel) {
      throw Error(ErrorKind::StepBoundViolation,
                  "tau exceeds the quasi-Stiefel stability bound " + std::to_string(b.tau_quasi_stiefel));
    }
  } else if (config.enforce_bounds == BoundsPolicy::Reject) {
    throw Error(ErrorKind::MissingLambda1, "Reject policy needs lambda_1; run estimate_lambda1 first");
  }

  Iterate cur = make_iterate(g, u0);
  h.initial = diagnose(d, g, cur, 0);
  if (h.initial.grad_norm < config.eps) {
    h.records.push_back(h.initial);
    h.terminated_by = Termination::ToleranceMet;
    h.final_state = cur.U;
    return h;
  }

  h.terminated_by = Termination::MaxSteps;
  double prev_energy = h.initial.energy;
  int rising = 0;
  for (std::int64_t n = 1; n <= config.max_steps; ++n) {
    std::optional<StepOutcome> out;
    try {
      out.emplace(step(d, g, cur, config.tau, n));
    } catch (const Error& e) {
      // a singular reduced system only arises for pathological tau
      if (e.kind() != ErrorKind::NonFinite && e.kind() != ErrorKind::SmallSolveSingular) throw;
      h.terminated_by = Termination::Diverged;
      break;
    }
    const StepDiagnostics& s = out->diag;
    h.records.push_back(s);
    cur = std::move(out->next);
    if (observer) observer(n, cur.U);

    const bool finite = std::isfinite(s.energy) && std::isfinite(s.orth_error) &&
                        std::isfinite(s.grad_norm) && std::isfinite(s.grad_norm_a);
    if (!finite) {
      h.terminated_by = Termination::Diverged;
      break;
    }
    rising = s.energy > prev_energy + 1e-8 * std::abs(prev_energy) ? rising + 1 : 0;
    prev_energy = s.energy;
    if (rising >= 3) {
      h.terminated_by = Termination::Diverged;
      break;
    }
    if (s.grad_norm < config.eps) {
      h.terminated_by = Termination::ToleranceMet;
      break;
    }
  }
  if (h.records.empty()) h.records.push_back(h.initial);
  h.final_state = cur.U;
  return h;
}

}  // namespace qseig
