#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qseig/block_state.hpp"
#include "qseig/blockvec.hpp"
#include "qseig/discretize.hpp"
#include "qseig/error.hpp"
#include "qseig/greens.hpp"

namespace qseig {

// ---------------------------------------------------------------------------
// Per-state diagnostics

/// E(U) = 1/2 tr <U,U>_a, in the shifted operator.
inline double energy(const Discretization& d, const BlockState& u) {
  return 0.5 * gram_a_self(d, u).matrix().trace();
}

/// E(U) with the spectral shift removed: E - (sigma/2) tr <U,U>.
inline double energy_unshifted(const Discretization& d, const BlockState& u) {
  return energy(d, u) - 0.5 * d.sigma * gram_l2_self(d, u).matrix().trace();
}

/// ||<U,U> - I||_F
inline double orthogonality_error(const Discretization& d, const BlockState& u) {
  const Eigen::MatrixXd o = gram_l2_self(d, u).matrix() - Eigen::MatrixXd::Identity(u.cols(), u.cols());
  return o.norm();
}

struct GradNorms {
  double l2 = 0.0;
  double a = 0.0;
};

/// Grassmann gradient R = GU - U <GU,U>, with GU supplied by the caller.
inline BlockState grassmann_gradient(const Discretization& d, const BlockState& u, const BlockState& gu) {
  require_same_shape(u, gu, "grassmann_gradient");
  return BlockState(gu.matrix() - u.matrix() * gram_l2(d, gu, u));
}

inline GradNorms grad_norms_from(const Discretization& d, const BlockState& u, const BlockState& gu) {
  const BlockState r = grassmann_gradient(d, u, gu);
  return {std::sqrt(std::max(0.0, gram_l2_self(d, r).matrix().trace())),
          std::sqrt(std::max(0.0, gram_a_self(d, r).matrix().trace()))};
}

inline GradNorms grad_norms(const Discretization& d, const InverseOperator& g, const BlockState& u) {
  return grad_norms_from(d, u, g.apply(u));
}

// ---------------------------------------------------------------------------
// Eigenpair extraction

struct EigenReport {
  Eigen::VectorXd eigenvalues;  // ascending, shift removed
  std::optional<Eigen::VectorXd> relative_errors;
  double energy = 0.0;
  Eigen::VectorXd residual_norms;
  BlockState vectors;  // M-orthonormal Ritz vectors
};

/// ||A v - rho M v|| / ||M v|| per column, rho in the shifted pencil.
inline Eigen::VectorXd pencil_residuals(const Discretization& d, const BlockState& v,
                                        const Eigen::VectorXd& rho) {
  const Eigen::MatrixXd av = d.A * v.matrix();
  const Eigen::MatrixXd mv = d.M.asDiagonal() * v.matrix();
  Eigen::VectorXd res(v.cols());
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    res(i) = (av.col(i) - rho(i) * mv.col(i)).norm() / mv.col(i).norm();
  }
  return res;
}

inline Eigen::VectorXd relative_errors(const Eigen::VectorXd& values, const Eigen::VectorXd& reference) {
  require(values.size() <= reference.size(), ErrorKind::DimensionMismatch,
          "reference has fewer eigenvalues than the report");
  Eigen::VectorXd err(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    err(i) = std::abs(values(i) - reference(i)) / std::abs(reference(i));
  }
  return err;
}

/// Rayleigh-Ritz on the pencil (<U,GU>, <U,U>). Reduces to the spectrum of
/// <GU,U>^{-1} when <U,U> = I.
inline EigenReport extract_eigenvalues_from(const Discretization& d, const BlockState& u,
                                            const BlockState& gu) {
  const GramMatrix s = gram_l2_self(d, u);
  GramMatrix s_inv_half;
  try {
    s_inv_half = inv_sqrt(s);
  } catch (const Error&) {
    throw Error(ErrorKind::RankDeficient, "extract_eigenvalues: <U,U> is singular");
  }
  const GramMatrix h(s_inv_half.matrix() * gram_l2(d, u, gu) * s_inv_half.matrix());
  const SymEig e = sym_eig(h);
  const Eigen::Index n = u.cols();
  require(e.values(0) > 0, ErrorKind::RankDeficient, "extract_eigenvalues: <U,GU> not positive");

  // descending Green eigenvalues map to ascending operator eigenvalues
  Eigen::MatrixXd rot(n, n);
  Eigen::VectorXd rho(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    rot.col(i) = e.vectors.col(n - 1 - i);
    rho(i) = 1.0 / e.values(n - 1 - i);
  }
  EigenReport report;
  report.vectors = BlockState(u.matrix() * (s_inv_half.matrix() * rot));
  report.eigenvalues = rho.array() - d.sigma;
  report.residual_norms = pencil_residuals(d, report.vectors, rho);
  report.energy = energy(d, u);
  return report;
}

inline EigenReport extract_eigenvalues(const Discretization& d, const InverseOperator& g,
                                       const BlockState& u) {
  return extract_eigenvalues_from(d, u, g.apply(u));
}

struct ReferenceResult {
  EigenReport report;
  BlockState block;  // first N Ritz vectors, M-orthonormal
  int sweeps = 0;
};

/// Classical inverse subspace iteration with explicit orthonormalization and
/// a Rayleigh-Ritz rotation every sweep. Serves as the oracle for err_i.
inline ReferenceResult reference_subspace_iteration(const Discretization& d, const InverseOperator& g,
                                                    int n, double tol, int max_iter,
                                                    const std::optional<BlockState>& start = std::nullopt,
                                                    int extra = 2) {
  require(n >= 1 && n <= d.size(), ErrorKind::InvalidArgument, "need 1 <= N <= Ng");
  require(tol > 0 && max_iter > 0, ErrorKind::InvalidArgument, "bad tolerance or sweep cap");
  const Eigen::Index width = std::min<Eigen::Index>(d.size(), n + extra);

  Eigen::MatrixXd x(d.size(), width);
  {
    std::mt19937_64 rng(0x5eed5eedULL);
    std::normal_distribution<double> normal;
    for (Eigen::Index j = 0; j < width; ++j)
      for (Eigen::Index i = 0; i < d.size(); ++i) x(i, j) = normal(rng);
    if (start) {
      require(start->rows() == d.size() && start->cols() == n, ErrorKind::DimensionMismatch,
              "starting block has the wrong shape");
      x.leftCols(n) = start->matrix();
    }
  }

  BlockState block(x);
  for (int sweep = 1; sweep <= max_iter; ++sweep) {
    block = g.apply(block);
    block = combine(block, inv_sqrt(gram_l2_self(d, block)).matrix());
    const SymEig rr = sym_eig(gram_a_self(d, block));
    block = combine(block, rr.vectors);

    const Eigen::VectorXd res = pencil_residuals(d, block, rr.values);
    if ((res.head(n).array() < tol).all()) {
      if (width > n && rr.values(n - 1) / rr.values(n) >= 1.0 - 1e-12) {
        throw Error(ErrorKind::GapTooSmall,
                    "no spectral gap between eigenvalues N and N+1; the target subspace is not unique");
      }
      ReferenceResult out;
      out.block = BlockState(block.matrix().leftCols(n));
      out.report.vectors = out.block;
      out.report.eigenvalues = rr.values.head(n).array() - d.sigma;
      out.report.residual_norms = res.head(n);
      out.report.energy = energy(d, out.block);
      out.sweeps = sweep;
      return out;
    }
  }
  throw Error(ErrorKind::NoConvergence, "reference subspace iteration hit its sweep cap");
}

/// err_U = ||U_n - U_end|| / ||U_end|| in the M-weighted block norm.
inline double eigenvector_error(const BlockState& un, const BlockState& uend, const Discretization& d) {
  require_same_shape(un, uend, "eigenvector_error");
  const double ref = std::sqrt(std::max(0.0, gram_l2_self(d, uend).matrix().trace()));
  require(ref >= 1e-14, ErrorKind::ZeroReference, "reference state has zero norm");
  const BlockState diff(un.matrix() - uend.matrix());
  return std::sqrt(std::max(0.0, gram_l2_self(d, diff).matrix().trace())) / ref;
}

// ---------------------------------------------------------------------------
// Continuous model on tiny dense problems

/// Dense copy of the pencil with its generalized eigendecomposition
/// A v = mu M v, held as the symmetric form M^{-1/2} A M^{-1/2} = Q diag(mu) Q^T.
struct DenseOperator {
  Eigen::MatrixXd A;
  Eigen::VectorXd M;
  Eigen::VectorXd mu;  // ascending pencil eigenvalues
  Eigen::MatrixXd Q;   // orthonormal eigenvectors of the symmetric form

  static DenseOperator from(const Discretization& d) {
    require(d.size() <= 200, ErrorKind::InvalidArgument, "dense path limited to Ng <= 200");
    DenseOperator op;
    op.A = Eigen::MatrixXd(d.A);
    op.M = d.M;
    const Eigen::VectorXd is = d.M.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd sym = is.asDiagonal() * op.A * is.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
    require(es.info() == Eigen::Success, ErrorKind::NoConvergence, "dense eigensolve failed");
    op.mu = es.eigenvalues();
    op.Q = es.eigenvectors();
    require(op.mu(0) > 0, ErrorKind::NotPositiveDefinite, "dense pencil is not positive definite");
    return op;
  }
};

/// U(t) = exp(Gt) U0 [I - <U0,U0> + <U0, exp(2Gt) U0>]^{-1/2}, i.e. the
/// representative with Q(t) = I. Compare results only in subspace metrics.
inline BlockState closed_form_solution(const DenseOperator& op, const BlockState& u0, double t) {
  require(u0.rows() == op.M.size(), ErrorKind::DimensionMismatch, "closed_form_solution shape");
  const Eigen::VectorXd sm = op.M.cwiseSqrt();
  // coordinates of M^{1/2} U0 in the eigenbasis
  const Eigen::MatrixXd c = op.Q.transpose() * (sm.asDiagonal() * u0.matrix());
  const Eigen::VectorXd growth = (op.mu.cwiseInverse() * t).array().exp();
  const Eigen::MatrixXd etu = sm.cwiseInverse().asDiagonal() * (op.Q * (growth.asDiagonal() * c));
  const Eigen::MatrixXd s0 = c.transpose() * c;
  const Eigen::MatrixXd s2 = c.transpose() * (growth.array().square().matrix().asDiagonal() * c);
  const GramMatrix bracket(Eigen::MatrixXd::Identity(u0.cols(), u0.cols()) - s0 + s2);
  GramMatrix root;
  try {
    root = inv_sqrt(bracket);
  } catch (const Error&) {
    throw Error(ErrorKind::BracketNotSPD, "closed-form bracket is not positive definite at this t");
  }
  return BlockState(etu * root.matrix());
}

/// Classical RK4 on dU/dt = GU - U <GU,U>; the last step is shortened to land on t_end.
inline BlockState rk4_integrate(const Discretization& d, const InverseOperator& g, const BlockState& u0,
                                double t_end, double dt) {
  require(dt > 0 && t_end >= dt, ErrorKind::InvalidArgument, "rk4 needs dt > 0 and t_end >= dt");
  auto rhs = [&](const Eigen::MatrixXd& u) -> Eigen::MatrixXd {
    const BlockState s(u);
    const BlockState gu = g.apply(s);
    return gu.matrix() - u * gram_l2(d, gu, s);
  };
  Eigen::MatrixXd u = u0.matrix();
  const auto steps = static_cast<std::int64_t>(std::ceil(t_end / dt - 1e-9));
  double t = 0.0;
  for (std::int64_t n = 0; n < steps; ++n) {
    const double h = std::min(dt, t_end - t);
    const Eigen::MatrixXd k1 = rhs(u);
    const Eigen::MatrixXd k2 = rhs(u + 0.5 * h * k1);
    const Eigen::MatrixXd k3 = rhs(u + 0.5 * h * k2);
    const Eigen::MatrixXd k4 = rhs(u + h * k3);
    u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!u.allFinite()) throw Error(ErrorKind::NonFinite, "rk4 trajectory became non-finite");
    t += h;
  }
  return BlockState(std::move(u));
}

// ---------------------------------------------------------------------------
// Rate fitting

struct RateFit {
  std::string series_name;
  double slope_per_step = 0.0;
  double r_squared = 0.0;
  std::pair<std::size_t, std::size_t> window{0, 0};  // inclusive
};

/// Least-squares fit of log(series) against the step index over the final
/// `window_fraction` of the points that precede the roundoff floor.
inline RateFit fit_exponential_rate(const std::vector<double>& series, double window_fraction,
                                    std::string name = {}, double floor = 1e-13) {
  require(window_fraction > 0 && window_fraction <= 1, ErrorKind::InvalidArgument,
          "window_fraction must lie in (0, 1]");
  std::size_t end = 0;
  while (end < series.size() && std::isfinite(series[end]) && series[end] >= floor) ++end;
  const auto take = static_cast<std::size_t>(std::ceil(window_fraction * static_cast<double>(end)));
  const std::size_t start = end - std::min(take, end);
  const std::size_t count = end - start;
  if (count < 5) {
    throw Error(ErrorKind::InsufficientData, "fewer than 5 points above the floor");
  }

  double sx = 0, sy = 0;
  for (std::size_t i = start; i < end; ++i) {
    sx += static_cast<double>(i);
    sy += std::log(series[i]);
  }
  const double mx = sx / static_cast<double>(count);
  const double my = sy / static_cast<double>(count);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = start; i < end; ++i) {
    const double dx = static_cast<double>(i) - mx;
    const double dy = std::log(series[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RateFit fit;
  fit.series_name = std::move(name);
  fit.slope_per_step = sxy / sxx;
  const double ss_res = std::max(0.0, syy - fit.slope_per_step * sxy);
  fit.r_squared = syy <= 1e-300 ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  fit.window = {start, end - 1};
  return fit;
}

}  // namespace qseig
