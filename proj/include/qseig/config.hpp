#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qseig/discretize.hpp"
#include "qseig/error.hpp"
#include "qseig/greens.hpp"
#include "qseig/scheme.hpp"

namespace qseig {

// Run configuration: line-based `key = value` text with dotted section keys.
// Blank lines and everything after '#' are ignored. Unknown or repeated keys
// are errors.

enum class PotentialKind { Zero, Harmonic, SoftCoulomb };
enum class InitKind { QuasiStiefelScaled, RawRandom, Orthonormal, File };
enum class MethodKind { Auto, Direct, ConjugateGradient };
enum class ReferenceKind { Oracle, None, File };

struct ProblemConfig {
  int dim = 2;
  std::vector<double> lower{-5.5, -5.5};
  std::vector<double> upper{5.5, 5.5};
  std::vector<int> points{79, 79};
  PotentialKind potential = PotentialKind::Harmonic;
  double harmonic_coeff = 0.5;
  double charge = 1.0;
  std::optional<double> softening;  // unset: half the largest grid spacing
  double c_lap = 0.5;
  std::optional<double> sigma;  // unset: 1 for soft_coulomb, 0 otherwise

  bool operator==(const ProblemConfig&) const = default;

  DomainSpec domain() const { return {dim, lower, upper}; }
  GridSpec grid() const { return {points}; }

  double effective_sigma() const {
    if (sigma) return *sigma;
    return potential == PotentialKind::SoftCoulomb ? 1.0 : 0.0;
  }

  PotentialSpec potential_spec() const {
    switch (potential) {
      case PotentialKind::Zero:
        return potential::Zero{};
      case PotentialKind::Harmonic:
        return potential::Harmonic{harmonic_coeff};
      case PotentialKind::SoftCoulomb: {
        double soft = 0.0;
        if (softening) {
          soft = *softening;
        } else {
          const DomainSpec dom = domain();
          const GridSpec g = grid();
          dom.validate();
          require(static_cast<int>(g.points_per_dim.size()) == dim, ErrorKind::ConfigError,
                  "problem.points must list one count per dimension");
          for (int k = 0; k < dim; ++k) soft = std::max(soft, 0.5 * g.spacing(dom, k));
        }
        return potential::SoftCoulomb{charge, soft};
      }
    }
    return potential::Zero{};
  }

  Discretization build() const {
    require(static_cast<int>(points.size()) == dim, ErrorKind::ConfigError,
            "problem.points must list one count per dimension");
    return assemble(domain(), grid(), potential_spec(), c_lap, effective_sigma());
  }
};

struct SolverConfig {
  MethodKind method = MethodKind::Auto;
  double inner_tol = 1e-12;
  int max_iter = 20000;
  solver::Preconditioner preconditioner = solver::Preconditioner::Jacobi;

  bool operator==(const SolverConfig&) const = default;

  SolverMethod method_for(Eigen::Index ng) const {
    const solver::ConjugateGradient cg{inner_tol, max_iter, preconditioner};
    switch (method) {
      case MethodKind::Direct:
        return solver::Direct{};
      case MethodKind::ConjugateGradient:
        return cg;
      case MethodKind::Auto:
        break;
    }
    if (std::holds_alternative<solver::Direct>(default_method(ng))) return solver::Direct{};
    return cg;
  }
};

struct SchemeSection {
  double tau = 0.1;
  double eps = 1e-5;
  std::int64_t max_steps = 100000;
  InitKind init = InitKind::QuasiStiefelScaled;
  std::uint64_t seed = 42;
  std::string init_file;
  BoundsPolicy enforce_bounds = BoundsPolicy::Warn;
  double lambda1_tol = 1e-12;

  bool operator==(const SchemeSection&) const = default;

  SchemeConfig to_scheme() const {
    SchemeConfig c;
    c.tau = tau;
    c.eps = eps;
    c.max_steps = max_steps;
    c.enforce_bounds = enforce_bounds;
    switch (init) {
      case InitKind::QuasiStiefelScaled:
        c.init = init::QuasiStiefelScaled{seed};
        break;
      case InitKind::RawRandom:
        c.init = init::RawRandom{seed};
        break;
      case InitKind::Orthonormal:
        c.init = init::Orthonormal{seed};
        break;
      case InitKind::File:
        c.init = init::FromState{};
        break;
    }
    return c;
  }
};

struct OutputConfig {
  std::string history_csv;
  std::string report;
  std::string state;
  std::string sweep_csv;
  bool summary = true;

  bool operator==(const OutputConfig&) const = default;
};

struct ReferenceConfig {
  ReferenceKind kind = ReferenceKind::Oracle;
  double tol = 1e-10;
  int max_iter = 200000;
  std::string file;

  bool operator==(const ReferenceConfig&) const = default;
};

struct RunConfig {
  ProblemConfig problem;
  SolverConfig solver;
  SchemeSection scheme;
  int n_eig = 8;
  OutputConfig output;
  ReferenceConfig reference;

  bool operator==(const RunConfig&) const = default;

  void validate() const {
    require(n_eig >= 1, ErrorKind::ConfigError, "n_eig must be at least 1");
    require(problem.dim >= 1 && problem.dim <= 3, ErrorKind::ConfigError, "problem.dim must be 1, 2 or 3");
    const auto d = static_cast<std::size_t>(problem.dim);
    require(problem.lower.size() == d && problem.upper.size() == d && problem.points.size() == d,
            ErrorKind::ConfigError, "problem.lower/upper/points must have problem.dim entries");
    require(problem.c_lap > 0, ErrorKind::ConfigError, "problem.c_lap must be positive");
    require(problem.effective_sigma() >= 0, ErrorKind::ConfigError, "problem.sigma must be non-negative");
    require(!problem.softening || *problem.softening >= 0, ErrorKind::ConfigError,
            "problem.softening must be non-negative");
    require(problem.potential != PotentialKind::Harmonic || problem.harmonic_coeff > 0,
            ErrorKind::ConfigError, "problem.harmonic_coeff must be positive");
    require(solver.inner_tol > 0 && solver.inner_tol <= 1e-4, ErrorKind::ConfigError,
            "solver.inner_tol must lie in (0, 1e-4]");
    require(solver.max_iter > 0, ErrorKind::ConfigError, "solver.max_iter must be positive");
    require(scheme.tau > 0 && scheme.eps > 0 && scheme.max_steps >= 1, ErrorKind::ConfigError,
            "scheme.tau and scheme.eps must be positive and scheme.max_steps at least 1");
    require(scheme.lambda1_tol > 0, ErrorKind::ConfigError, "scheme.lambda1_tol must be positive");
    require(scheme.init != InitKind::File || !scheme.init_file.empty(), ErrorKind::ConfigError,
            "scheme.init = file needs scheme.init_file");
    require(reference.kind != ReferenceKind::File || !reference.file.empty(), ErrorKind::ConfigError,
            "reference = file needs reference.file");
    require(reference.tol > 0 && reference.max_iter > 0, ErrorKind::ConfigError,
            "reference.tol and reference.max_iter must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x)) {
    throw Error(ErrorKind::ConfigError, key + ": expected a finite number, got '" + v + "'");
  }
  return x;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
    throw Error(ErrorKind::ConfigError, key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw Error(ErrorKind::ConfigError, key + ": expected an unsigned integer");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || errno == ERANGE) {
    throw Error(ErrorKind::ConfigError, key + ": expected an unsigned integer, got '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::ConfigError, key + ": expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
  return out;
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_list(v)) {
    const std::int64_t x = parse_int(key, item);
    require(x > 0 && x <= 1'000'000'000, ErrorKind::ConfigError, key + ": counts must be positive");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string v = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }

    using namespace detail;
    if (key == "problem.dim") {
      c.problem.dim = static_cast<int>(parse_int(key, v));
    } else if (key == "problem.lower") {
      c.problem.lower = parse_doubles(key, v);
    } else if (key == "problem.upper") {
      c.problem.upper = parse_doubles(key, v);
    } else if (key == "problem.points") {
      c.problem.points = parse_ints(key, v);
    } else if (key == "problem.potential") {
      if (v == "zero") {
        c.problem.potential = PotentialKind::Zero;
      } else if (v == "harmonic") {
        c.problem.potential = PotentialKind::Harmonic;
      } else if (v == "soft_coulomb") {
        c.problem.potential = PotentialKind::SoftCoulomb;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected zero, harmonic or soft_coulomb");
      }
    } else if (key == "problem.harmonic_coeff") {
      c.problem.harmonic_coeff = parse_double(key, v);
    } else if (key == "problem.charge") {
      c.problem.charge = parse_double(key, v);
    } else if (key == "problem.softening") {
      if (v == "auto") {
        c.problem.softening.reset();
      } else {
        c.problem.softening = parse_double(key, v);
      }
    } else if (key == "problem.c_lap") {
      c.problem.c_lap = parse_double(key, v);
    } else if (key == "problem.sigma") {
      if (v == "auto") {
        c.problem.sigma.reset();
      } else {
        c.problem.sigma = parse_double(key, v);
      }
    } else if (key == "solver.method") {
      if (v == "auto") {
        c.solver.method = MethodKind::Auto;
      } else if (v == "direct") {
        c.solver.method = MethodKind::Direct;
      } else if (v == "cg") {
        c.solver.method = MethodKind::ConjugateGradient;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected auto, direct or cg");
      }
    } else if (key == "solver.inner_tol") {
      c.solver.inner_tol = parse_double(key, v);
    } else if (key == "solver.max_iter") {
      c.solver.max_iter = static_cast<int>(parse_int(key, v));
    } else if (key == "solver.preconditioner") {
      if (v == "jacobi") {
        c.solver.preconditioner = solver::Preconditioner::Jacobi;
      } else if (v == "none") {
        c.solver.preconditioner = solver::Preconditioner::None;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected jacobi or none");
      }
    } else if (key == "scheme.tau") {
      c.scheme.tau = parse_double(key, v);
    } else if (key == "scheme.eps") {
      c.scheme.eps = parse_double(key, v);
    } else if (key == "scheme.max_steps") {
      c.scheme.max_steps = parse_int(key, v);
    } else if (key == "scheme.init") {
      if (v == "quasi_stiefel") {
        c.scheme.init = InitKind::QuasiStiefelScaled;
      } else if (v == "raw") {
        c.scheme.init = InitKind::RawRandom;
      } else if (v == "orthonormal") {
        c.scheme.init = InitKind::Orthonormal;
      } else if (v == "file") {
        c.scheme.init = InitKind::File;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected quasi_stiefel, raw, orthonormal or file");
      }
    } else if (key == "scheme.seed") {
      c.scheme.seed = parse_u64(key, v);
    } else if (key == "scheme.init_file") {
      c.scheme.init_file = v;
    } else if (key == "scheme.enforce_bounds") {
      if (v == "warn") {
        c.scheme.enforce_bounds = BoundsPolicy::Warn;
      } else if (v == "reject") {
        c.scheme.enforce_bounds = BoundsPolicy::Reject;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected warn or reject");
      }
    } else if (key == "scheme.lambda1_tol") {
      c.scheme.lambda1_tol = parse_double(key, v);
    } else if (key == "n_eig") {
      c.n_eig = static_cast<int>(parse_int(key, v));
    } else if (key == "output.history_csv") {
      c.output.history_csv = v;
    } else if (key == "output.report") {
      c.output.report = v;
    } else if (key == "output.state") {
      c.output.state = v;
    } else if (key == "output.sweep_csv") {
      c.output.sweep_csv = v;
    } else if (key == "output.summary") {
      c.output.summary = parse_bool(key, v);
    } else if (key == "reference") {
      if (v == "oracle") {
        c.reference.kind = ReferenceKind::Oracle;
      } else if (v == "none") {
        c.reference.kind = ReferenceKind::None;
      } else if (v == "file") {
        c.reference.kind = ReferenceKind::File;
      } else {
        throw Error(ErrorKind::ConfigError, key + ": expected oracle, none or file");
      }
    } else if (key == "reference.tol") {
      c.reference.tol = parse_double(key, v);
    } else if (key == "reference.max_iter") {
      c.reference.max_iter = static_cast<int>(parse_int(key, v));
    } else if (key == "reference.file") {
      c.reference.file = v;
    } else {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline std::string serialize_config(const RunConfig& c) {
  using detail::fmt;
  using detail::join;
  std::ostringstream o;
  const auto& p = c.problem;
  o << "problem.dim = " << p.dim << "\n";
  o << "problem.lower = " << join(p.lower) << "\n";
  o << "problem.upper = " << join(p.upper) << "\n";
  o << "problem.points = " << join(p.points) << "\n";
  const char* pot = p.potential == PotentialKind::Zero       ? "zero"
                    : p.potential == PotentialKind::Harmonic ? "harmonic"
                                                             : "soft_coulomb";
  o << "problem.potential = " << pot << "\n";
  o << "problem.harmonic_coeff = " << fmt(p.harmonic_coeff) << "\n";
  o << "problem.charge = " << fmt(p.charge) << "\n";
  o << "problem.softening = " << (p.softening ? fmt(*p.softening) : "auto") << "\n";
  o << "problem.c_lap = " << fmt(p.c_lap) << "\n";
  o << "problem.sigma = " << (p.sigma ? fmt(*p.sigma) : "auto") << "\n";

  const char* method = c.solver.method == MethodKind::Auto     ? "auto"
                       : c.solver.method == MethodKind::Direct ? "direct"
                                                               : "cg";
  o << "solver.method = " << method << "\n";
  o << "solver.inner_tol = " << fmt(c.solver.inner_tol) << "\n";
  o << "solver.max_iter = " << c.solver.max_iter << "\n";
  o << "solver.preconditioner = "
    << (c.solver.preconditioner == solver::Preconditioner::Jacobi ? "jacobi" : "none") << "\n";

  const auto& s = c.scheme;
  o << "scheme.tau = " << fmt(s.tau) << "\n";
  o << "scheme.eps = " << fmt(s.eps) << "\n";
  o << "scheme.max_steps = " << s.max_steps << "\n";
  const char* init = s.init == InitKind::QuasiStiefelScaled ? "quasi_stiefel"
                     : s.init == InitKind::RawRandom        ? "raw"
                     : s.init == InitKind::Orthonormal      ? "orthonormal"
                                                            : "file";
  o << "scheme.init = " << init << "\n";
  o << "scheme.seed = " << s.seed << "\n";
  if (!s.init_file.empty()) o << "scheme.init_file = " << s.init_file << "\n";
  o << "scheme.enforce_bounds = " << (s.enforce_bounds == BoundsPolicy::Warn ? "warn" : "reject") << "\n";
  o << "scheme.lambda1_tol = " << fmt(s.lambda1_tol) << "\n";

  o << "n_eig = " << c.n_eig << "\n";

  if (!c.output.history_csv.empty()) o << "output.history_csv = " << c.output.history_csv << "\n";
  if (!c.output.report.empty()) o << "output.report = " << c.output.report << "\n";
  if (!c.output.state.empty()) o << "output.state = " << c.output.state << "\n";
  if (!c.output.sweep_csv.empty()) o << "output.sweep_csv = " << c.output.sweep_csv << "\n";
  o << "output.summary = " << (c.output.summary ? "true" : "false") << "\n";

  const char* ref = c.reference.kind == ReferenceKind::Oracle ? "oracle"
                    : c.reference.kind == ReferenceKind::None ? "none"
                                                              : "file";
  o << "reference = " << ref << "\n";
  o << "reference.tol = " << fmt(c.reference.tol) << "\n";
  o << "reference.max_iter = " << c.reference.max_iter << "\n";
  if (!c.reference.file.empty()) o << "reference.file = " << c.reference.file << "\n";
  return o.str();
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace qseig
