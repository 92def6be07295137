// Lowest six states of a 2D harmonic oscillator on a 30 x 30 grid.

#include <cstdio>

#include "qseig/analysis.hpp"
#include "qseig/scheme.hpp"

int main() {
  using namespace qseig;
  Discretization d = assemble(DomainSpec{2, {-5.5, -5.5}, {5.5, 5.5}}, GridSpec{{30, 30}},
                              potential::Harmonic{0.5}, 0.5, 0.0);
  const InverseOperator g(d, solver::Direct{});
  estimate_lambda1(d, g, 1e-12);

  SchemeConfig cfg;
  cfg.tau = 0.5;
  cfg.eps = 1e-8;
  cfg.max_steps = 20000;
  const BlockState u0 = init_state(d, 6, cfg.init);
  const RunHistory h = run(d, g, cfg, u0);

  const EigenReport r = extract_eigenvalues(d, g, h.final_state);
  std::printf("%s after %lld steps\n", to_string(h.terminated_by),
              static_cast<long long>(h.records.back().step_index));
  for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i)
    std::printf("  lambda_%lld = %.10f  (residual %.2e)\n", static_cast<long long>(i + 1), r.eigenvalues(i),
                r.residual_norms(i));
}
