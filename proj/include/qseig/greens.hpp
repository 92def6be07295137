#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#ifdef QSEIG_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include "qseig/block_state.hpp"
#include "qseig/discretize.hpp"
#include "qseig/error.hpp"

namespace qseig {

namespace solver {
enum class Preconditioner { None, Jacobi };

struct Direct {
  bool operator==(const Direct&) const = default;
};

struct ConjugateGradient {
  double tol = 1e-12;
  int max_iter = 20000;
  Preconditioner preconditioner = Preconditioner::Jacobi;
  bool operator==(const ConjugateGradient&) const = default;
};
}  // namespace solver

using SolverMethod = std::variant<solver::Direct, solver::ConjugateGradient>;

/// Sparse Cholesky up to 200k unknowns, Jacobi-preconditioned CG above.
inline SolverMethod default_method(Eigen::Index ng) {
  if (ng <= 200000) return solver::Direct{};
  return solver::ConjugateGradient{};
}

namespace detail {
#ifdef QSEIG_HAVE_CHOLMOD
using SparseFactor = Eigen::CholmodSimplicialLLT<Eigen::SparseMatrix<double>>;
#else
using SparseFactor = Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>;
#endif
}  // namespace detail

/// G = A^{-1} diag(M), prepared once for a fixed discretization.
///
/// Columns of a block are independent solves; with threads > 1 the CG path
/// distributes them over workers. Each column's result does not depend on the
/// worker count, so output is bitwise reproducible.
class InverseOperator {
 public:
  InverseOperator(const Discretization& d, SolverMethod method, int threads = 1)
      : method_(method), M_(d.M), threads_(std::max(1, threads)) {
    if (std::holds_alternative<solver::Direct>(method_)) {
      llt_ = std::make_unique<detail::SparseFactor>();
      llt_->compute(d.A);
      if (llt_->info() != Eigen::Success) {
        throw Error(ErrorKind::NotPositiveDefinite,
                    "sparse Cholesky broke down; the shifted operator is not positive "
                    "definite (increase sigma)");
      }
    } else {
      const auto& cg = std::get<solver::ConjugateGradient>(method_);
      require(cg.tol > 0 && cg.tol <= 1e-4, ErrorKind::InvalidArgument,
              "CG tolerance must lie in (0, 1e-4]");
      require(cg.max_iter > 0, ErrorKind::InvalidArgument, "CG max_iter must be positive");
      A_ = d.A;
      inv_diag_ = A_.diagonal();
      if ((inv_diag_.array() <= 0).any()) {
        throw Error(ErrorKind::NotPositiveDefinite,
                    "operator has a non-positive diagonal entry (increase sigma)");
      }
      inv_diag_ = inv_diag_.cwiseInverse();
      // probe solve so indefiniteness surfaces at preparation time
      (void)solve_column(M_);
    }
  }

  InverseOperator(const InverseOperator&) = delete;
  InverseOperator& operator=(const InverseOperator&) = delete;

  BlockState apply(const BlockState& u) const {
    if (u.rows() != M_.size()) {
      throw Error(ErrorKind::DimensionMismatch, "apply_green: state rows do not match operator");
    }
    const Eigen::MatrixXd rhs = M_.asDiagonal() * u.matrix();
    Eigen::MatrixXd x(rhs.rows(), rhs.cols());
    const int workers = static_cast<int>(std::min<Eigen::Index>(threads_, rhs.cols()));
    if (llt_) {
      // factor solves share workspace, so the direct path stays on one thread
      x = llt_->solve(rhs);
    } else if (workers <= 1) {
      for (Eigen::Index j = 0; j < rhs.cols(); ++j) x.col(j) = solve_column(rhs.col(j));
    } else {
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (Eigen::Index j = w; j < rhs.cols(); j += workers) x.col(j) = solve_column(rhs.col(j));
          } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    solves_.fetch_add(static_cast<std::uint64_t>(u.cols()), std::memory_order_relaxed);
    return BlockState(std::move(x));
  }

  std::uint64_t solve_count() const noexcept { return solves_.load(std::memory_order_relaxed); }
  const SolverMethod& method() const noexcept { return method_; }
  int threads() const noexcept { return threads_; }
  void set_threads(int threads) noexcept { threads_ = std::max(1, threads); }

 private:
  Eigen::VectorXd solve_column(const Eigen::VectorXd& b) const {
    if (llt_) return llt_->solve(b);
    const auto& cg = std::get<solver::ConjugateGradient>(method_);
    const bool jacobi = cg.preconditioner == solver::Preconditioner::Jacobi;
    const double bnorm = b.norm();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    if (bnorm == 0.0) return x;
    Eigen::VectorXd r = b;
    Eigen::VectorXd z = jacobi ? Eigen::VectorXd(inv_diag_.cwiseProduct(r)) : r;
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    for (int it = 0; it < cg.max_iter; ++it) {
      const Eigen::VectorXd ap = A_ * p;
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) {
        throw Error(ErrorKind::NotPositiveDefinite,
                    "CG met a direction of non-positive curvature (increase sigma)");
      }
      const double alpha = rz / pap;
      x += alpha * p;
      r -= alpha * ap;
      if (r.norm() <= cg.tol * bnorm) return x;
      z = jacobi ? Eigen::VectorXd(inv_diag_.cwiseProduct(r)) : r;
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    throw Error(ErrorKind::NoConvergence, "CG did not reach tolerance " + std::to_string(cg.tol));
  }

  SolverMethod method_;
  Eigen::VectorXd M_;
  Eigen::SparseMatrix<double> A_;
  Eigen::VectorXd inv_diag_;
  std::unique_ptr<detail::SparseFactor> llt_;
  int threads_;
  mutable std::atomic<std::uint64_t> solves_{0};
};

inline InverseOperator prepare(const Discretization& d, SolverMethod method, int threads = 1) {
  return InverseOperator(d, method, threads);
}

inline BlockState apply_green(const InverseOperator& g, const BlockState& u) { return g.apply(u); }

}  // namespace qseig
