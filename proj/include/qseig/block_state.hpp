#pragma once

#include <Eigen/Core>

#include <string>

#include "qseig/error.hpp"

namespace qseig {

/// An N-tuple of grid functions stored as an Ng x N coefficient matrix;
/// column j holds the nodal values of the j-th function.
///
/// Every constructor rejects non-finite entries, so any BlockState that
/// exists is finite.
class BlockState {
 public:
  BlockState() = default;

  explicit BlockState(Eigen::MatrixXd data) : data_(std::move(data)) {
    if (!data_.allFinite()) {
      throw Error(ErrorKind::NonFinite, "block state contains NaN or Inf");
    }
  }

  static BlockState zeros(Eigen::Index ng, Eigen::Index n) {
    return BlockState(Eigen::MatrixXd::Zero(ng, n));
  }

  Eigen::Index rows() const noexcept { return data_.rows(); }
  Eigen::Index cols() const noexcept { return data_.cols(); }
  const Eigen::MatrixXd& matrix() const noexcept { return data_; }

  friend bool operator==(const BlockState& a, const BlockState& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.data_ == b.data_;
  }

 private:
  Eigen::MatrixXd data_;
};

/// Small dense symmetric matrix of pairings, (S + S^T)/2 on construction.
class GramMatrix {
 public:
  GramMatrix() = default;

  explicit GramMatrix(const Eigen::MatrixXd& s) {
    require(s.rows() == s.cols(), ErrorKind::DimensionMismatch, "Gram matrix must be square");
    data_ = 0.5 * (s + s.transpose());
  }

  static GramMatrix identity(Eigen::Index k) { return GramMatrix(Eigen::MatrixXd::Identity(k, k)); }

  Eigen::Index size() const noexcept { return data_.rows(); }
  const Eigen::MatrixXd& matrix() const noexcept { return data_; }

 private:
  Eigen::MatrixXd data_;
};

inline void require_same_shape(const BlockState& a, const BlockState& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + " differ");
  }
}

}  // namespace qseig
