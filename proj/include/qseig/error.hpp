#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qseig {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  GridTooSmall,
  SingularPotential,
  NoConvergence,
  NotPositiveDefinite,
  RankDeficient,
  SmallSolveSingular,
  MissingLambda1,
  StepBoundViolation,
  GapTooSmall,
  ZeroReference,
  BracketNotSPD,
  InsufficientData,
  NonFinite,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::GridTooSmall: return "GridTooSmall";
    case ErrorKind::SingularPotential: return "SingularPotential";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::SmallSolveSingular: return "SmallSolveSingular";
    case ErrorKind::MissingLambda1: return "MissingLambda1";
    case ErrorKind::StepBoundViolation: return "StepBoundViolation";
    case ErrorKind::GapTooSmall: return "GapTooSmall";
    case ErrorKind::ZeroReference: return "ZeroReference";
    case ErrorKind::BracketNotSPD: return "BracketNotSPD";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace qseig
