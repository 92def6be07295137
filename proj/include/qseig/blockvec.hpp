#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "qseig/block_state.hpp"
#include "qseig/discretize.hpp"
#include "qseig/error.hpp"

namespace qseig {

/// <U,V> = C_U^T diag(M) C_V.
///
/// Both operands are scaled by sqrt(M), and each entry is one dot product of
/// scaled columns. Dot products commute elementwise and reduce in an order
/// fixed by the length alone, so gram_l2(U,V) and gram_l2(V,U)^T are bitwise
/// equal.
inline Eigen::MatrixXd gram_l2(const Discretization& d, const BlockState& u, const BlockState& v) {
  require_rows(d, u, "gram_l2");
  require_rows(d, v, "gram_l2");
  const Eigen::MatrixXd su = d.sqrt_M.asDiagonal() * u.matrix();
  const Eigen::MatrixXd sv = &u == &v ? su : Eigen::MatrixXd(d.sqrt_M.asDiagonal() * v.matrix());
  Eigen::MatrixXd g(u.cols(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j)
    for (Eigen::Index i = 0; i < u.cols(); ++i) g(i, j) = su.col(i).dot(sv.col(j));
  return g;
}

inline GramMatrix gram_l2_self(const Discretization& d, const BlockState& u) {
  return GramMatrix(gram_l2(d, u, u));
}

/// <U,V>_a = C_U^T A C_V, accumulated edge by edge over the upper triangle of
/// A so that the result is exactly the transpose of gram_a(V,U).
inline Eigen::MatrixXd gram_a(const Discretization& d, const BlockState& u, const BlockState& v) {
  require_rows(d, u, "gram_a");
  require_rows(d, v, "gram_a");
  const Eigen::Index nu = u.cols();
  const Eigen::Index nv = v.cols();
  // node-major copies: column k holds the values at node k
  const Eigen::MatrixXd ut = u.matrix().transpose();
  const Eigen::MatrixXd vt = v.matrix().transpose();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(nu, nv);
  for (Eigen::Index j = 0; j < d.A.outerSize(); ++j) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(d.A, j); it; ++it) {
      const Eigen::Index i = it.row();
      if (i > j) continue;
      const double a = it.value();
      if (i == j) {
        for (Eigen::Index q = 0; q < nv; ++q)
          for (Eigen::Index p = 0; p < nu; ++p) g(p, q) += a * (ut(p, j) * vt(q, j));
      } else {
        for (Eigen::Index q = 0; q < nv; ++q)
          for (Eigen::Index p = 0; p < nu; ++p)
            g(p, q) += a * (ut(p, i) * vt(q, j) + ut(p, j) * vt(q, i));
      }
    }
  }
  return g;
}

/// <U,U>_a via one sparse product; cheaper than the edge form.
inline GramMatrix gram_a_self(const Discretization& d, const BlockState& u) {
  require_rows(d, u, "gram_a_self");
  return GramMatrix(u.matrix().transpose() * (d.A * u.matrix()));
}

inline BlockState combine(const BlockState& u, const Eigen::MatrixXd& coeff) {
  require(u.cols() == coeff.rows(), ErrorKind::DimensionMismatch,
          "combine: coefficient rows must match state columns");
  return BlockState(u.matrix() * coeff);
}

struct SymEig {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthogonal, columns match values
};

/// Cyclic Jacobi eigensolver for small symmetric matrices.
///
/// Eigenvalues are sorted ascending; each eigenvector is signed so that its
/// largest-magnitude entry (first one on ties) is positive.
inline SymEig sym_eig(const GramMatrix& s, int max_sweeps = 100) {
  const Eigen::Index k = s.size();
  Eigen::MatrixXd a = s.matrix();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(k, k);
  const double scale = a.norm();

  bool converged = (k <= 1) || scale == 0.0;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < k; ++p)
      for (Eigen::Index q = p + 1; q < k; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= 1e-15 * scale) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < k - 1; ++p) {
      for (Eigen::Index q = p + 1; q < k; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (Eigen::Index r = 0; r < k; ++r) {
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = c * arp - sn * arq;
          a(r, q) = sn * arp + c * arq;
        }
        for (Eigen::Index r = 0; r < k; ++r) {
          const double apr = a(p, r);
          const double aqr = a(q, r);
          a(p, r) = c * apr - sn * aqr;
          a(q, r) = sn * apr + c * aqr;
        }
        for (Eigen::Index r = 0; r < k; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - sn * vrq;
          v(r, q) = sn * vrp + c * vrq;
        }
      }
    }
  }
  if (!converged) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < k; ++p)
      for (Eigen::Index q = p + 1; q < k; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) > 1e-13 * scale) {
      throw Error(ErrorKind::NoConvergence, "Jacobi sweep cap exceeded");
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });

  SymEig out{Eigen::VectorXd(k), Eigen::MatrixXd(k, k)};
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::Index src = order[static_cast<std::size_t>(c)];
    out.values(c) = a(src, src);
    Eigen::VectorXd col = v.col(src);
    Eigen::Index big = 0;
    for (Eigen::Index r = 1; r < k; ++r)
      if (std::abs(col(r)) > std::abs(col(big))) big = r;
    if (col(big) < 0) col = -col;
    out.vectors.col(c) = col;
  }
  return out;
}

/// S^{-1/2} for symmetric positive definite S.
inline GramMatrix inv_sqrt(const GramMatrix& s) {
  const SymEig e = sym_eig(s);
  const double lmin = e.values(0);
  const double lmax = e.values(e.values.size() - 1);
  if (!(lmin > 0.0) || lmin <= 1e-14 * lmax) {
    throw Error(ErrorKind::NotPositiveDefinite, "inv_sqrt needs a positive definite matrix");
  }
  const Eigen::VectorXd d = e.values.cwiseSqrt().cwiseInverse();
  return GramMatrix(e.vectors * d.asDiagonal() * e.vectors.transpose());
}

inline double lambda_min(const GramMatrix& s) { return sym_eig(s).values(0); }
inline double lambda_max(const GramMatrix& s) {
  const auto v = sym_eig(s).values;
  return v(v.size() - 1);
}

/// min over orthogonal Q of ||U - V Q||_a. The optimal Q is the polar factor
/// of <V,U>_a; the distance is then evaluated directly.
inline double subspace_distance_a(const Discretization& d, const BlockState& u, const BlockState& v) {
  require_same_shape(u, v, "subspace_distance_a");
  const Eigen::MatrixXd c = gram_a(d, v, u);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd q = svd.matrixU() * svd.matrixV().transpose();
  const BlockState diff(u.matrix() - v.matrix() * q);
  const double sq = gram_a_self(d, diff).matrix().trace();
  return std::sqrt(std::max(0.0, sq));
}

}  // namespace qseig
