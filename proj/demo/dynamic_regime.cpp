// Dynamic regime on the simulation DGP: start treatment the first time W2
// exceeds a cutoff after baseline, then stay on. Compares the three
// estimators with a Monte Carlo draw of the counterfactual mean.
//
// Treatment is absorbing in this DGP, so f(a_m | ā_{m-1}, w̄_m) is fitted on
// units untreated at m-1 (the never-treat risk set) and is 1 for the rest.

#include <cstdio>

#include "ptgf/ptgf.hpp"

using namespace ptgf;

int main() {
  const int tau = 5;
  const double cutoff = 1.0;
  const DgpParams params = draw_params(table1::Config{}.param_seed, tau);
  const auto sim = simulate_observed(20000, params, 2024, default_jobs());

  const Regime rule = Regime::dynamic("start_when_w2_high", [cutoff](const HistoryView& h) {
    if (h.time() == 0) return 0;
    if (h.treatment(h.time() - 1) == 1) return 1;
    return h.covariate("W2", h.time()) > cutoff ? 1 : 0;
  });

  const auto adh = adherence(sim.panel, rule);
  std::printf("adherent units by time:");
  for (int t = 0; t <= tau; ++t) std::printf(" %zu", adh.count(t));
  std::printf("\n");

  const Regime never = Regime::static_plan(std::vector<int>(static_cast<std::size_t>(tau) + 1, 0));
  auto g = fit_treatment_models(sim.panel, adherence(sim.panel, never), table1::treatment_specs(true));
  for (std::size_t i = 0; i < sim.panel.n_units(); ++i)
    for (int m = 1; m <= tau; ++m)
      if (sim.panel.A(i, m - 1) == 1) g.numerator_p1(i, m) = g.denominator_p1(i, m) = 1.0;

  const auto truth = simulate_counterfactual(500000, params, &rule, 99, default_jobs());
  std::printf("%-5s %12s %12s %12s %12s\n", "t", "truth_mc", "iptw", "ice", "tmle");
  std::vector<PsiEstimate> est;
  for (EstimatorKind kind : {EstimatorKind::IPTW, EstimatorKind::ICE, EstimatorKind::TMLE}) {
    EstimatorConfig c;
    c.kind = kind;
    c.outcome = table1::outcome_specs(true);
    c.treatment = table1::treatment_specs(true);
    EstimateOptions opt;
    opt.treatment = &g;
    est.push_back(estimate_psi(sim.panel, rule, c, tau, opt));
  }
  for (int t = 0; t <= tau; ++t) {
    const auto s = static_cast<std::size_t>(t);
    std::printf("%-5d %12.4f %12.4f %12.4f %12.4f\n", t, truth.mean[s], est[0].psi[s], est[1].psi[s], est[2].psi[s]);
  }
  return 0;
}
