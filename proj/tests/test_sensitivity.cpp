#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ptgf;

namespace {

struct Scenario {
  SimulatedPanel sim;
  Regime never;
  Scenario() : sim(simulate_observed(3000, draw_params(table1::Config{}.param_seed, 5), 17)), never(Regime::static_plan(std::vector<int>(6, 0))) {}
};

EstimatorConfig config(EstimatorKind kind) {
  EstimatorConfig c;
  c.kind = kind;
  c.outcome = table1::outcome_specs(true);
  c.treatment = table1::treatment_specs(true);
  return c;
}

class SensitivityIdentity : public ::testing::TestWithParam<EstimatorKind> {};

}  // namespace

TEST_P(SensitivityIdentity, ZeroDeltaReproducesPoint) {
  const Scenario s;
  const auto c = config(GetParam());
  const auto base = estimate_psi(s.sim.panel, s.never, c, 5);
  const auto rows = sensitivity_sweep(s.sim.panel, s.never, c, {DeltaSpec::zero()}, 5);
  ASSERT_EQ(rows.size(), 1u);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(rows[0].psi_trajectory[t], base.psi[t]);
}

TEST_P(SensitivityIdentity, ConstantDeltaShiftsByTriangularNumber) {
  const Scenario s;
  const auto c = config(GetParam());
  const auto base = estimate_psi(s.sim.panel, s.never, c, 5);
  const std::vector<double> grid_c{-1.0, -0.25, 0.5, 2.0};
  std::vector<DeltaSpec> grid;
  for (double v : grid_c) grid.push_back(DeltaSpec::constant(v));
  const auto rows = sensitivity_sweep(s.sim.panel, s.never, c, grid, 5);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (int t = 0; t <= 5; ++t) {
      const double expect = base.psi[static_cast<std::size_t>(t)] + grid_c[g] * t * (t + 1) / 2.0;
      EXPECT_NEAR(rows[g].psi_trajectory[static_cast<std::size_t>(t)], expect, 1e-8) << grid_c[g] << " t=" << t;
    }
  }
}

TEST_P(SensitivityIdentity, TimeVaryingDeltaShift) {
  const Scenario s;
  const auto c = config(GetParam());
  const auto base = estimate_psi(s.sim.panel, s.never, c, 5);
  const std::vector<double> ct{0.0, 0.3, -0.2, 0.1, 0.05, -0.4};
  const auto rows =
      sensitivity_sweep(s.sim.panel, s.never, c, {io::parse_delta({{"type", "time_varying"}, {"values", ct}})}, 5);
  double shift = 0.0;
  for (int t = 0; t <= 5; ++t) {
    shift += t * ct[static_cast<std::size_t>(t)];
    EXPECT_NEAR(rows[0].psi_trajectory[static_cast<std::size_t>(t)], base.psi[static_cast<std::size_t>(t)] + shift, 1e-8);
  }
}

INSTANTIATE_TEST_SUITE_P(AllEstimators, SensitivityIdentity,
                         ::testing::Values(EstimatorKind::IPTW, EstimatorKind::ICE, EstimatorKind::TMLE),
                         [](const auto& info) { return to_string(info.param); });

TEST(Delta, ApplyDeltaByHand) {
  // W = (1, 2, 3); Δ = 0.5 W_m at target t = 2: Y_2 + 0.5 (2 + 3)
  const auto p = ptgf::testing::small_panel({{0, 0, 0}}, {{1, 2, 3}}, {{1, 2, 3}});
  const auto d = io::parse_delta({{"type", "covariate_linear"}, {"coefficients", {{"W", {0.0, 0.5, 0.5}}}}});
  EXPECT_DOUBLE_EQ(apply_delta(p, d, 2, 2)[0], 3.0 + 2.5);
  EXPECT_DOUBLE_EQ(apply_delta(p, d, 1, 2)[0], 2.0);
}

TEST(Delta, TabulatedBins) {
  const auto p = ptgf::testing::small_panel({{0, 0}}, {{0, 0}}, {{-1.0, 0.7}});
  const auto d = io::parse_delta(nlohmann::json::parse(
      R"({"type":"tabulated","covariate":"W","cuts":[0,0.5],"values":[[0,0,0],[1,2,3]],"label":"tab"})"));
  EXPECT_EQ(d.label, "tab");
  EXPECT_DOUBLE_EQ(apply_delta(p, d, 1, 1)[0], 3.0);
}

TEST(Delta, NotEvaluableCases) {
  const auto p = ptgf::testing::small_panel({{0, 0}}, {{0, 0}}, {{0, 0}});
  auto code = [&](const nlohmann::json& j) {
    try {
      apply_delta(p, io::parse_delta(j), 1, 1);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  EXPECT_EQ(code({{"type", "time_varying"}, {"values", {0.0}}}), ErrorCode::DeltaNotEvaluable);
  EXPECT_EQ(code({{"type", "covariate_linear"}, {"coefficients", {{"Z", {0.0, 1.0}}}}}), ErrorCode::DeltaNotEvaluable);
  EXPECT_EQ(code(nlohmann::json::parse(R"({"type":"tabulated","covariate":"W","cuts":[-1],"values":[[0],[0]]})")),
            ErrorCode::DeltaNotEvaluable);
  EXPECT_THROW(io::parse_delta({{"type", "mystery"}}), Error);
  EXPECT_THROW(io::parse_delta_grid(nlohmann::json::array()), Error);
}
