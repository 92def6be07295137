// qseig: solve | tau-sweep | verify | reference

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qseig/commands.hpp"

namespace {

int worker_count(bool serial) {
  if (serial) return 1;
  if (const char* env = std::getenv("QSEIG_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid QSEIG_THREADS='" << env << "'\n";
  }
  return 1;
}

std::vector<double> parse_tau_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(qseig::detail::parse_double("--tau", qseig::detail::trim(item)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smallest eigenpairs of discretized Schroedinger operators by quasi-orthogonal evolution"};
  app.require_subcommand(1);

  std::string config_path;
  std::string tau_arg;
  std::uint64_t seed = 0;
  bool serial = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (key = value)")->required();
    sub->add_option("--seed", seed, "override scheme.seed");
    sub->add_flag("--serial", serial, "single-threaded, bitwise reproducible");
  };
  auto* solve = app.add_subcommand("solve", "run the scheme and write history, report and state");
  common(solve);
  solve->add_option("--tau", tau_arg, "override scheme.tau");
  auto* sweep = app.add_subcommand("tau-sweep", "run the scheme for several step sizes from one U0");
  common(sweep);
  sweep->add_option("--tau", tau_arg, "comma-separated step sizes")->required();
  auto* verify = app.add_subcommand("verify", "check the invariant suite on the configured problem");
  common(verify);
  auto* reference = app.add_subcommand("reference", "compute oracle eigenpairs by subspace iteration");
  common(reference);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : qseig::exit_code::kConfigError;
  }

  qseig::RunConfig cfg;
  std::vector<double> taus;
  try {
    cfg = qseig::load_config(config_path);
    if (app.got_subcommand(sweep)) {
      taus = parse_tau_list(tau_arg);
    } else if (!tau_arg.empty()) {
      cfg.scheme.tau = qseig::detail::parse_double("--tau", tau_arg);
    }
    for (auto* sub : {solve, sweep, verify, reference})
      if (sub->count("--seed")) cfg.scheme.seed = seed;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return qseig::exit_code::kConfigError;
  }

  qseig::CommandContext ctx;
  ctx.threads = worker_count(serial);
  if (app.got_subcommand(solve)) return qseig::cmd_solve(cfg, ctx);
  if (app.got_subcommand(sweep)) return qseig::cmd_tau_sweep(cfg, taus, ctx);
  if (app.got_subcommand(verify)) return qseig::cmd_verify(cfg, ctx);
  return qseig::cmd_reference(cfg, ctx);
}
