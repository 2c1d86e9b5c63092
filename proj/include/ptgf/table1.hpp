#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ptgf/dgp_sim.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/parallel.hpp"
#include "ptgf/stats.hpp"

namespace ptgf::table1 {

/// Outcome model of the simulation study; `correct = false` omits the W2² terms.
inline OutcomeSpecs outcome_specs(bool correct) {
  ModelSpec s{{Term::intercept(), Term::covariate("W1", 0), Term::covariate("W2", 0)}, Family::Gaussian, Link::Identity};
  if (correct) s.terms.push_back(Term::power("W2", 0, 2.0));
  s.terms.push_back(Term::covariate("W1", 1));
  s.terms.push_back(Term::covariate("W2", 1));
  if (correct) s.terms.push_back(Term::power("W2", 1, 2.0));
  return {s, std::nullopt};
}

/// Treatment models; `correct = false` omits W2² from the denominator.
inline TreatmentSpecs treatment_specs(bool correct) {
  TreatmentSpecs t;
  t.numerator = {{Term::intercept()}, Family::Binomial, Link::Logit};
  t.denominator = {{Term::intercept(), Term::covariate("W1", 0), Term::covariate("W2", 0)}, Family::Binomial, Link::Logit};
  if (correct) t.denominator.terms.push_back(Term::power("W2", 0, 2.0));
  return t;
}

struct RowSpec {
  std::string name;
  EstimatorKind kind;
  bool q_correct;
  bool g_correct;
  bool expect_consistent;
};

/// The eight estimator × specification rows.
inline std::vector<RowSpec> rows() {
  return {
      {"ice_true", EstimatorKind::ICE, true, true, true},      {"ice_qfal", EstimatorKind::ICE, false, true, false},
      {"iptw_true", EstimatorKind::IPTW, true, true, true},    {"iptw_gfal", EstimatorKind::IPTW, true, false, false},
      {"tmle_true", EstimatorKind::TMLE, true, true, true},    {"tmle_qfal", EstimatorKind::TMLE, false, true, true},
      {"tmle_gfal", EstimatorKind::TMLE, true, false, true},   {"tmle_bfal", EstimatorKind::TMLE, false, false, false},
  };
}

struct Config {
  std::size_t n = 10000;
  int reps = 200;
  std::uint64_t param_seed = 72259;
  std::uint64_t data_seed = 1;
  int tau = 5;
  int t = 5;
  unsigned jobs = 1;
  std::size_t oracle_n = 1000000;
};

struct RowResult {
  std::string name;
  std::size_t n_ok = 0;
  double mean = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double mc_se = 0.0;                    ///< sd / sqrt(reps)
  std::optional<double> lilliefors_p;    ///< absent below 5 replicates
  bool expect_consistent = false;
  std::vector<double> estimates;
};

struct Result {
  DgpParams params;
  double truth = 0.0;           ///< closed form E{Y_t(0̄)}
  double truth_mc = 0.0;        ///< Monte Carlo oracle
  double truth_mc_se = 0.0;
  double observed_mean = 0.0;   ///< E(Y_t) under the natural course, Monte Carlo
  std::vector<RowResult> rows;
};

/// ψ̂_t of every row on one simulated data set; a failed row yields NaN.
inline std::vector<double> estimate_rows(const LongPanel& panel, int t) {
  const Regime never = Regime::static_plan(std::vector<int>(static_cast<std::size_t>(panel.n_times()), 0));
  EstimationContext ctx(panel, never);
  std::optional<FittedTreatmentModels> g_true, g_false;
  auto fits = [&](bool correct) -> const FittedTreatmentModels* {
    auto& slot = correct ? g_true : g_false;
    if (!slot) slot = fit_treatment_models(panel, ctx.adh(), treatment_specs(correct));
    return &*slot;
  };
  std::vector<double> out;
  for (const auto& r : rows()) {
    try {
      EstimatorConfig cfg;
      cfg.kind = r.kind;
      cfg.outcome = outcome_specs(r.q_correct);
      cfg.treatment = treatment_specs(r.g_correct);
      EstimateOptions opt;
      if (r.kind != EstimatorKind::ICE) opt.treatment = fits(r.g_correct);
      out.push_back(estimate_psi(ctx, cfg, t, opt).psi[static_cast<std::size_t>(t)]);
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::Numerical) throw;
      out.push_back(std::nan(""));
    }
  }
  return out;
}

inline Result run(const Config& cfg) {
  Result res;
  res.params = draw_params(cfg.param_seed, cfg.tau);
  const std::vector<int> never(static_cast<std::size_t>(cfg.tau) + 1, 0);
  res.truth = exact_static_mu(res.params, never)[static_cast<std::size_t>(cfg.t)];
  const Regime never_regime = Regime::static_plan(never);
  if (cfg.oracle_n > 1) {
    const auto cf = simulate_counterfactual(cfg.oracle_n, res.params, &never_regime, derive_stream(cfg.data_seed, 0xC0FFEE),
                                            cfg.jobs);
    res.truth_mc = cf.mean[static_cast<std::size_t>(cfg.t)];
    res.truth_mc_se = cf.se[static_cast<std::size_t>(cfg.t)];
    const auto nat = simulate_counterfactual(cfg.oracle_n, res.params, nullptr, derive_stream(cfg.data_seed, 0xC0FFEE),
                                             cfg.jobs);
    res.observed_mean = nat.mean[static_cast<std::size_t>(cfg.t)];
  }
  const auto R = static_cast<std::size_t>(cfg.reps);
  std::vector<std::vector<double>> est(R);
  parallel_for(R, cfg.jobs, [&](std::size_t r) {
    const auto sim = simulate_observed(cfg.n, res.params, derive_stream(cfg.data_seed, r + 1));
    est[r] = estimate_rows(sim.panel, cfg.t);
  });
  const auto specs = rows();
  for (std::size_t c = 0; c < specs.size(); ++c) {
    RowResult row;
    row.name = specs[c].name;
    row.expect_consistent = specs[c].expect_consistent;
    for (std::size_t r = 0; r < R; ++r)
      if (std::isfinite(est[r][c])) row.estimates.push_back(est[r][c]);
    row.n_ok = row.estimates.size();
    if (row.n_ok >= 1) {
      row.mean = stats::mean(row.estimates);
      row.bias = row.mean - res.truth;
    }
    if (row.n_ok >= 2) {
      row.variance = stats::variance(row.estimates);
      row.mc_se = std::sqrt(row.variance / static_cast<double>(row.n_ok));
    }
    if (auto l = stats::lilliefors(row.estimates)) row.lilliefors_p = l->p_value;
    res.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace ptgf::table1
