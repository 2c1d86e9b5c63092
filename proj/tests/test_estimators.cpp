#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ptgf;

namespace {

oracle::Fixture fixture(const std::string& name) {
  return oracle::load_fixture(ptgf::testing::source_path("fixtures/oracle/" + name + ".json"));
}

EstimatorConfig saturated_config(EstimatorKind kind, int tau) {
  EstimatorConfig c;
  c.kind = kind;
  c.outcome.nested = oracle::saturated_spec("W", tau, Family::Gaussian);
  c.treatment.numerator = {{Term::intercept()}, Family::Binomial, Link::Logit};
  c.treatment.denominator = oracle::saturated_spec("W", tau, Family::Binomial);
  return c;
}

class SaturatedEquivalence : public ::testing::TestWithParam<std::tuple<std::string, EstimatorKind>> {};

}  // namespace

TEST_P(SaturatedEquivalence, MatchesEmpiricalPlugin) {
  const auto& [name, kind] = GetParam();
  const auto f = fixture(name);
  const auto panel = oracle::sample_panel(f.dgp, 20000, 31);
  const Regime regime = f.regime();
  const int tau = f.dgp.tau;
  const auto est = estimate_psi(panel, regime, saturated_config(kind, tau), tau);
  for (int t = 0; t <= tau; ++t) EXPECT_NEAR(est.psi[static_cast<std::size_t>(t)], oracle::plugin_psi(panel, regime, t), 1e-8) << t;
}

INSTANTIATE_TEST_SUITE_P(BinaryFixtures, SaturatedEquivalence,
                         ::testing::Combine(::testing::Values("static_never_tau1", "static_never_tau3", "hand_two_period"),
                                            ::testing::Values(EstimatorKind::ICE, EstimatorKind::IPTW,
                                                              EstimatorKind::TMLE)));

class DynamicSaturatedEquivalence : public ::testing::TestWithParam<EstimatorKind> {};

TEST_P(DynamicSaturatedEquivalence, StickyRuleMatchesEmpiricalPlugin) {
  const auto f = fixture("static_never_tau3");
  const auto panel = oracle::sample_panel(f.dgp, 20000, 31);
  const Regime sticky = Regime::dynamic("sticky", [](const HistoryView& h) {
    if (h.time() == 0) return 0;
    if (h.treatment(h.time() - 1) == 1) return 1;
    return h.covariate("W", h.time()) > 0.5 ? 1 : 0;
  });
  const auto est = estimate_psi(panel, sticky, saturated_config(GetParam(), 3), 3);
  for (int t = 0; t <= 3; ++t) EXPECT_NEAR(est.psi[static_cast<std::size_t>(t)], oracle::plugin_psi(panel, sticky, t), 1e-8) << t;
}

INSTANTIATE_TEST_SUITE_P(AllEstimators, DynamicSaturatedEquivalence,
                         ::testing::Values(EstimatorKind::ICE, EstimatorKind::IPTW, EstimatorKind::TMLE));

TEST(Estimators, PsiAssembledFromPhiCells) {
  const auto f = fixture("static_never_tau3");
  const auto panel = oracle::sample_panel(f.dgp, 3000, 5);
  const auto est = estimate_psi(panel, f.regime(), saturated_config(EstimatorKind::ICE, 3), 3);
  double psi = est.phis.at(0, 0);
  EXPECT_DOUBLE_EQ(est.psi[0], psi);
  for (int t = 1; t <= 3; ++t) {
    psi += est.phis.at(t, t) - est.phis.at(t - 1, t);
    EXPECT_NEAR(est.psi[static_cast<std::size_t>(t)], psi, 1e-12);
    EXPECT_NEAR(est.contrast[static_cast<std::size_t>(t)],
                est.psi[static_cast<std::size_t>(t)] - est.natural_course[static_cast<std::size_t>(t)], 1e-12);
  }
}

TEST(Estimators, IncompletePhiTableRejected) {
  PhiTable t;
  t.set(0, 0, 1.0);
  t.set(0, 1, 1.0);
  const auto panel = ptgf::testing::small_panel({{0, 0}}, {{1, 2}}, {{0, 0}});
  try {
    assemble_psi(t, panel, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IncompletePhiTable);
    EXPECT_NE(e.detail().find("(1,1)"), std::string::npos);
  }
}

TEST(Estimators, StaticAndConstantRuleAreBitIdentical) {
  const auto sim = simulate_observed(2000, draw_params(table1::Config{}.param_seed, 5), 3);
  const std::vector<int> plan(6, 0);
  for (EstimatorKind kind : {EstimatorKind::IPTW, EstimatorKind::ICE, EstimatorKind::TMLE}) {
    EstimatorConfig c;
    c.kind = kind;
    c.outcome = table1::outcome_specs(true);
    c.treatment = table1::treatment_specs(true);
    const auto a = estimate_psi(sim.panel, Regime::static_plan(plan), c, 5);
    const auto b = estimate_psi(sim.panel, Regime::constant_rule(plan), c, 5);
    ASSERT_EQ(a.psi.size(), b.psi.size());
    for (std::size_t t = 0; t < a.psi.size(); ++t) EXPECT_EQ(a.psi[t], b.psi[t]) << to_string(kind) << " t=" << t;
  }
}

TEST(Estimators, RateAndCountPanelsAgree) {
  // counts with trials versus the same rates with trial-size unit weights; outcome regressions only,
  // since treatment models weight by the unit weight alone
  CounterRng rng(8, 0);
  const std::size_t n = 60;
  const int T = 4;
  std::vector<std::string> ids;
  std::vector<double> w, y_count, y_rate, trials, weights;
  std::vector<int> a;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("s" + std::to_string(i));
    const double pop = 1000.0 + std::floor(9000.0 * rng.uniform());
    trials.push_back(pop);
    weights.push_back(pop);
    int on = 1;
    for (int t = 0; t < T; ++t) {
      if (t > 0 && on == 1 && rng.uniform() < 0.2) on = 0;
      const double wt = 0.5 + rng.uniform();
      const double d = std::floor(pop * expit(-5.0 + 0.5 * wt + 0.3 * t - 0.4 * on) + 0.5);
      a.push_back(on);
      w.push_back(wt);
      y_count.push_back(d);
      y_rate.push_back(d / pop);
    }
  }
  const LongPanel counts(ids, T, {"W"}, w, a, y_count, std::vector<double>(n, 1.0), trials);
  const LongPanel rates(ids, T, {"W"}, w, a, y_rate, weights);
  const Regime kept = Regime::static_plan(std::vector<int>(T, 1));
  for (Family fam : {Family::Gaussian, Family::Quasibinomial}) {
    EstimatorConfig c;
    c.outcome.nested = {{Term::intercept(), Term::covariate("W", 0)}, fam,
                        fam == Family::Gaussian ? Link::Identity : Link::Logit};
    const auto x = estimate_psi(counts, kept, c, T - 1);
    const auto z = estimate_psi(rates, kept, c, T - 1);
    for (int t = 0; t < T; ++t) {
      EXPECT_NEAR(x.psi[static_cast<std::size_t>(t)], z.psi[static_cast<std::size_t>(t)], 1e-12);
      EXPECT_NEAR(x.natural_course[static_cast<std::size_t>(t)], z.natural_course[static_cast<std::size_t>(t)], 1e-12);
    }
  }
}

TEST(Estimators, IptwWeightsFromClosedForm) {
  // two periods, intercept-only models: weight = P̂(A_1 = a) / P̂(A_1 = a) = 1 for everyone
  const auto panel = ptgf::testing::small_panel({{0, 0}, {0, 1}, {0, 0}, {0, 1}}, {{0, 1}, {0, 2}, {0, 3}, {0, 4}},
                                                {{0, 1}, {1, 0}, {0, 0}, {1, 1}});
  const Regime never = Regime::static_plan({0, 0});
  const auto fits = fit_treatment_models(panel, adherence(panel, never), TreatmentSpecs{});
  const auto pi = compute_iptw_weights(panel, never, fits, 1);
  for (double v : pi) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_NEAR(estimate_phi_iptw(panel, never, fits, 1, 1), 2.0, 1e-12);
}

TEST(Estimators, TmleFluctuationScoreIsZero) {
  const auto sim = simulate_observed(3000, draw_params(72259, 5), 11);
  EstimationContext ctx(sim.panel, Regime::static_plan(std::vector<int>(6, 0)));
  const auto fits = fit_treatment_models(sim.panel, ctx.adh(), table1::treatment_specs(false));
  for (int k = 1; k <= 5; ++k) {
    const auto cell = estimate_phi_tmle(ctx, fits, table1::outcome_specs(false), k, k, sim.panel.response_column(k));
    ASSERT_EQ(cell.steps.size(), static_cast<std::size_t>(k) + 1);
    for (const auto& s : cell.steps) EXPECT_LT(std::abs(s.score), 1e-8) << "k=" << k << " m=" << s.m;
  }
}

TEST(Estimators, BaselineDeviationRejected) {
  const auto panel = ptgf::testing::small_panel({{1, 1}, {0, 0}}, {{0, 1}, {0, 2}}, {{0, 1}, {1, 0}});
  EXPECT_THROW(estimate_psi(panel, Regime::static_plan({0, 0}), EstimatorConfig{}, 1), Error);
}
