#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qseig/block_state.hpp"
#include "qseig/error.hpp"

namespace qseig {

struct DomainSpec {
  int dim = 1;
  std::vector<double> lower;
  std::vector<double> upper;

  bool operator==(const DomainSpec&) const = default;

  void validate() const {
    require(dim >= 1 && dim <= 3, ErrorKind::InvalidArgument, "domain dimension must be 1, 2 or 3");
    require(lower.size() == static_cast<std::size_t>(dim) &&
                upper.size() == static_cast<std::size_t>(dim),
            ErrorKind::InvalidArgument, "domain corners must have dim entries");
    for (int k = 0; k < dim; ++k) {
      require(std::isfinite(lower[k]) && std::isfinite(upper[k]) && lower[k] < upper[k],
              ErrorKind::InvalidArgument, "domain requires lower < upper on every axis");
    }
  }
};

struct GridSpec {
  std::vector<int> points_per_dim;

  bool operator==(const GridSpec&) const = default;

  std::int64_t total() const {
    std::int64_t ng = 1;
    for (int p : points_per_dim) ng *= p;
    return ng;
  }

  double spacing(const DomainSpec& domain, int axis) const {
    return (domain.upper[axis] - domain.lower[axis]) / (points_per_dim[axis] + 1);
  }
};

namespace potential {
struct Zero {
  bool operator==(const Zero&) const = default;
};
/// V(x) = coeff * |x|^2
struct Harmonic {
  double coeff = 0.5;
  bool operator==(const Harmonic&) const = default;
};
/// V(x) = -charge / sqrt(|x|^2 + softening^2)
struct SoftCoulomb {
  double charge = 1.0;
  double softening = 0.0;
  bool operator==(const SoftCoulomb&) const = default;
};
}  // namespace potential

using PotentialSpec = std::variant<potential::Zero, potential::Harmonic, potential::SoftCoulomb>;

inline double evaluate_potential(const PotentialSpec& pot, double r2) {
  struct Visitor {
    double r2;
    double operator()(const potential::Zero&) const { return 0.0; }
    double operator()(const potential::Harmonic& h) const { return h.coeff * r2; }
    double operator()(const potential::SoftCoulomb& c) const {
      return -c.charge / std::sqrt(r2 + c.softening * c.softening);
    }
  };
  return std::visit(Visitor{r2}, pot);
}

/// The assembled operator pair: A = c_lap * L_h + diag(V * M) + sigma * diag(M)
/// and the diagonal mass (quadrature) weights M.
struct Discretization {
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd M;
  Eigen::VectorXd sqrt_M;
  double sigma = 0.0;
  double c_lap = 1.0;
  GridSpec grid;
  DomainSpec domain;
  PotentialSpec pot;
  /// Smallest eigenvalue of the shifted pencil (A, M); set by estimate_lambda1.
  std::optional<double> lambda1_est;

  Eigen::Index size() const noexcept { return M.size(); }
};

/// Node index of the multi-index (i0, i1, i2), x-fastest.
inline Eigen::Index node_index(const GridSpec& grid, const int* idx, int dim) {
  Eigen::Index j = 0;
  for (int k = dim - 1; k >= 0; --k) j = j * grid.points_per_dim[k] + idx[k];
  return j;
}

inline Discretization assemble(const DomainSpec& domain, const GridSpec& grid,
                               const PotentialSpec& pot, double c_lap, double sigma) {
  domain.validate();
  require(grid.points_per_dim.size() == static_cast<std::size_t>(domain.dim),
          ErrorKind::InvalidArgument, "grid must have one point count per axis");
  for (int p : grid.points_per_dim) {
    require(p >= 2, ErrorKind::GridTooSmall, "need at least 2 interior points per axis");
  }
  require(grid.total() >= 4, ErrorKind::GridTooSmall, "need at least 4 grid nodes");
  require(c_lap > 0 && std::isfinite(c_lap), ErrorKind::InvalidArgument, "c_lap must be positive");
  require(sigma >= 0 && std::isfinite(sigma), ErrorKind::InvalidArgument,
          "sigma must be non-negative");
  if (const auto* h = std::get_if<potential::Harmonic>(&pot)) {
    require(h->coeff > 0, ErrorKind::InvalidArgument, "harmonic coefficient must be positive");
  }
  if (const auto* c = std::get_if<potential::SoftCoulomb>(&pot)) {
    require(c->softening >= 0, ErrorKind::InvalidArgument, "softening must be non-negative");
  }

  const int dim = domain.dim;
  const Eigen::Index ng = grid.total();
  double h[3] = {0, 0, 0};
  double cell = 1.0;
  for (int k = 0; k < dim; ++k) {
    h[k] = grid.spacing(domain, k);
    cell *= h[k];
  }

  Discretization d;
  d.sigma = sigma;
  d.c_lap = c_lap;
  d.grid = grid;
  d.domain = domain;
  d.pot = pot;
  d.M = Eigen::VectorXd::Constant(ng, cell);
  d.sqrt_M = d.M.cwiseSqrt();

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(ng) * (2 * dim + 1));
  const auto* coulomb = std::get_if<potential::SoftCoulomb>(&pot);

  int idx[3] = {0, 0, 0};
  for (Eigen::Index j = 0; j < ng; ++j) {
    Eigen::Index rem = j;
    double r2 = 0.0;
    for (int k = 0; k < dim; ++k) {
      idx[k] = static_cast<int>(rem % grid.points_per_dim[k]);
      rem /= grid.points_per_dim[k];
      const double x = domain.lower[k] + (idx[k] + 1) * h[k];
      r2 += x * x;
    }
    if (coulomb && coulomb->softening == 0.0 && std::sqrt(r2) < 1e-12) {
      throw Error(ErrorKind::SingularPotential,
                  "Coulomb potential with zero softening evaluated at the origin");
    }
    double diag = (evaluate_potential(pot, r2) + sigma) * cell;
    for (int k = 0; k < dim; ++k) {
      const double w = c_lap * cell / (h[k] * h[k]);
      diag += 2.0 * w;
      for (int off : {-1, 1}) {
        const int moved = idx[k] + off;
        if (moved < 0 || moved >= grid.points_per_dim[k]) continue;
        int nb[3] = {idx[0], idx[1], idx[2]};
        nb[k] = moved;
        triplets.emplace_back(j, node_index(grid, nb, dim), -w);
      }
    }
    triplets.emplace_back(j, j, diag);
  }
  d.A.resize(ng, ng);
  d.A.setFromTriplets(triplets.begin(), triplets.end());
  d.A.makeCompressed();
  return d;
}

inline void require_rows(const Discretization& d, const BlockState& u, const char* what) {
  if (u.rows() != d.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": state has " + std::to_string(u.rows()) +
                    " rows, discretization has " + std::to_string(d.size()));
  }
}

inline BlockState apply_stiffness(const Discretization& d, const BlockState& u) {
  require_rows(d, u, "apply_stiffness");
  return BlockState(d.A * u.matrix());
}

inline BlockState apply_mass(const Discretization& d, const BlockState& u) {
  require_rows(d, u, "apply_mass");
  return BlockState(d.M.asDiagonal() * u.matrix());
}

/// Smallest eigenvalue of the shifted pencil (A, M) by inverse power
/// iteration. `Inverse` is any type with `BlockState apply(const BlockState&)`
/// computing A^{-1} M u. Stores the result into d.lambda1_est.
template <class Inverse>
double estimate_lambda1(Discretization& d, Inverse& green, double tol, int max_iter = 20000) {
  require(tol > 0, ErrorKind::InvalidArgument, "tolerance must be positive");
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(d.size(), 1);
  auto rayleigh = [&](const Eigen::MatrixXd& v) {
    const double num = v.col(0).dot(d.A * v.col(0));
    const double den = v.col(0).dot(d.M.cwiseProduct(v.col(0)));
    return num / den;
  };
  double rho = rayleigh(x);
  for (int it = 0; it < max_iter; ++it) {
    x = green.apply(BlockState(x)).matrix();
    x /= std::sqrt(x.col(0).dot(d.M.cwiseProduct(x.col(0))));
    const double next = rayleigh(x);
    if (std::abs(next - rho) < tol * std::abs(next)) {
      d.lambda1_est = next;
      return next;
    }
    rho = next;
  }
  throw Error(ErrorKind::NoConvergence, "inverse power iteration for lambda_1 did not converge");
}

}  // namespace qseig
