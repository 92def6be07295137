#pragma once

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qseig/analysis.hpp"
#include "qseig/block_state.hpp"
#include "qseig/error.hpp"
#include "qseig/scheme.hpp"

namespace qseig {

/// Writes `content` to a sibling temp file, then renames it over `path`.
inline void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorKind::IoError, "write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::IoError, "cannot move output into place at '" + path + "'");
  }
}

/// Fails early if `path` cannot be created, without leaving anything behind.
inline void require_writable(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty()) return;
  fs::path dir = fs::path(path).parent_path();
  if (dir.empty()) dir = ".";
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw Error(ErrorKind::IoError, "output directory '" + dir.string() + "' does not exist");
  }
  if (::access(dir.c_str(), W_OK) != 0) {
    throw Error(ErrorKind::IoError, "output directory '" + dir.string() + "' is not writable");
  }
}

inline std::string format17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// State files: "QSEV1", u64 Ng, u64 N (little-endian), then Ng*N doubles in
// column-major order, little-endian IEEE-754.

inline constexpr char kStateMagic[5] = {'Q', 'S', 'E', 'V', '1'};

namespace detail {
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline std::string encode_state(const BlockState& u) {
  std::string out(kStateMagic, sizeof kStateMagic);
  detail::put_u64(out, static_cast<std::uint64_t>(u.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(u.cols()));
  const Eigen::MatrixXd& m = u.matrix();
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    std::uint64_t bits = 0;
    const double x = m.data()[k];
    std::memcpy(&bits, &x, sizeof bits);
    detail::put_u64(out, bits);
  }
  return out;
}

inline BlockState decode_state(const std::string& bytes) {
  const std::size_t header = sizeof kStateMagic + 16;
  if (bytes.size() < header || std::memcmp(bytes.data(), kStateMagic, sizeof kStateMagic) != 0) {
    throw Error(ErrorKind::IoError, "not a QSEV1 state file");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t ng = detail::get_u64(p + 5);
  const std::uint64_t n = detail::get_u64(p + 13);
  if (ng == 0 || n == 0 || ng > (1ull << 40) / n || bytes.size() != header + 8 * ng * n) {
    throw Error(ErrorKind::IoError, "state file size does not match its header");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(ng), static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const std::uint64_t bits = detail::get_u64(p + header + 8 * static_cast<std::size_t>(k));
    double x = 0;
    std::memcpy(&x, &bits, sizeof x);
    m.data()[k] = x;
  }
  return BlockState(std::move(m));
}

inline void write_state(const std::string& path, const BlockState& u) { atomic_write(path, encode_state(u)); }

inline BlockState read_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot read state file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_state(ss.str());
}

// ---------------------------------------------------------------------------
// History CSV

inline constexpr const char* kHistoryHeader =
    "step,energy,orth_error,grad_norm_l2,grad_norm_a,err_u,lambda_min_gram,green_solves";

/// One row per record; err_u[i] pairs with records[i].
inline std::string history_csv(const std::vector<StepDiagnostics>& records, const std::vector<double>& err_u) {
  require(records.size() == err_u.size(), ErrorKind::DimensionMismatch, "history_csv: err_u length mismatch");
  std::string out = kHistoryHeader;
  out += '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const StepDiagnostics& r = records[i];
    out += std::to_string(r.step_index);
    for (double x : {r.energy, r.orth_error, r.grad_norm, r.grad_norm_a, err_u[i], r.lambda_min_gram}) {
      out += ',';
      out += format17(x);
    }
    out += ',';
    out += std::to_string(r.green_solves);
    out += '\n';
  }
  return out;
}

/// Eigenvalue table: index, value, residual norm, and relative error if known.
inline std::string eigen_table(const EigenReport& r) {
  std::ostringstream o;
  o << "index,eigenvalue,residual" << (r.relative_errors ? ",rel_error" : "") << "\n";
  for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) {
    o << (i + 1) << "," << format17(r.eigenvalues(i)) << "," << format17(r.residual_norms(i));
    if (r.relative_errors) o << "," << format17((*r.relative_errors)(i));
    o << "\n";
  }
  return o.str();
}

}  // namespace qseig
