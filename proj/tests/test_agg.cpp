#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace ptgf;

namespace {

ErrorCode ingest_code(const std::string& csv, const agg::SchemaMap& schema = {}) {
  std::istringstream in(csv);
  try {
    agg::ingest_agg(io::read_csv(in), schema);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

const char* kHeader = "state,week,deaths,population,policy,case_change\n";

}  // namespace

TEST(AggIngest, BuildsCountPanel) {
  std::istringstream in(std::string(kHeader) + "B,1,3,100,1,2.0\nA,0,1,50,1,0.5\nB,0,2,100,1,1.0\nA,1,0,50,0,4.0\n");
  const auto d = agg::ingest_agg(io::read_csv(in), agg::SchemaMap{});
  const auto& p = d.panel;
  ASSERT_EQ(p.n_units(), 2u);
  EXPECT_EQ(p.unit_id(0), "B");
  EXPECT_EQ(p.n_times(), 2);
  EXPECT_EQ(d.covariate, "logW");
  EXPECT_DOUBLE_EQ(p.W(1, 1, 0), std::log(4.0));
  EXPECT_DOUBLE_EQ(p.Y(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(p.trials(1), 50.0);
  EXPECT_DOUBLE_EQ(p.unit_weight(1), 1.0 / 50.0);
  EXPECT_DOUBLE_EQ(p.effective_weight(1), 1.0);
  EXPECT_DOUBLE_EQ(p.response(0, 0), 0.02);
  EXPECT_EQ(d.populations, (std::vector<double>{100.0, 50.0}));
}

TEST(AggIngest, ErrorsByCause) {
  const std::string h = kHeader;
  EXPECT_EQ(ingest_code("state,week,deaths,population,policy\nA,0,1,10,1\n"), ErrorCode::SchemaMismatch);
  EXPECT_EQ(ingest_code(h + "A,0,-1,10,1,1.0\n"), ErrorCode::NegativeCount);
  EXPECT_EQ(ingest_code(h + "A,0,11,10,1,1.0\n"), ErrorCode::NegativeCount);
  EXPECT_EQ(ingest_code(h + "A,0,1,10,1,0.0\n"), ErrorCode::NonpositiveCaseChange);
  EXPECT_EQ(ingest_code(h + "A,0,1,10,1,1.0\nA,2,1,10,1,1.0\n"), ErrorCode::NonContiguousTime);
  EXPECT_EQ(ingest_code(h + "A,0,1,10,1,1.0\nA,1,1,12,1,1.0\n"), ErrorCode::SchemaMismatch);
  EXPECT_EQ(ingest_code(h + "A,0,1,10,2,1.0\n"), ErrorCode::InvalidPanel);
}

TEST(AggIngest, RawCovariateWhenLogDisabled) {
  agg::SchemaMap s;
  s.log_case_change = false;
  std::istringstream in(std::string(kHeader) + "A,0,1,10,1,-0.5\n");
  const auto d = agg::ingest_agg(io::read_csv(in), s);
  EXPECT_EQ(d.covariate, "W");
  EXPECT_DOUBLE_EQ(d.panel.W(0, 0, 0), -0.5);
}

TEST(AggIngest, RenamedColumns) {
  const auto schema = agg::SchemaMap::from_json({{"unit", "region"}, {"deaths", "d"}});
  std::istringstream in("region,week,d,population,policy,case_change\nX,0,1,10,1,1.0\n");
  EXPECT_EQ(agg::ingest_agg(io::read_csv(in), schema).panel.unit_id(0), "X");
}

TEST(AggSample, ValidatesUnderPolicyKept) {
  const auto d = agg::ingest_agg(ptgf::testing::source_path("data/sample_agg.csv"),
                                 agg::SchemaMap::from_json(io::read_json_file(ptgf::testing::source_path("data/schema.json"))));
  EXPECT_EQ(d.panel.n_units(), 43u);
  EXPECT_EQ(d.panel.n_times(), 12);
  const Regime kept = io::parse_regime(io::read_json_file(ptgf::testing::source_path("specs/regimes/policy_kept_12.json")));
  EXPECT_TRUE(check_staggered(d.panel, kept).ok);
  const auto cfg = io::parse_estimator_config(io::read_json_file(ptgf::testing::source_path("specs/agg_pooled.json")),
                                              EstimatorKind::IPTW);
  const auto est = estimate_psi(d.panel, kept, cfg, 11);
  ASSERT_EQ(est.psi.size(), 12u);
  for (double v : est.psi) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1e-3);
  }
}

TEST(AggSample, PersonAverageWeightsByPopulation) {
  const auto d = agg::ingest_agg(ptgf::testing::source_path("data/sample_agg.csv"), agg::SchemaMap{});
  const Regime kept = Regime::static_plan(std::vector<int>(12, 1));
  const auto cfg = io::parse_estimator_config(io::read_json_file(ptgf::testing::source_path("specs/agg_pooled.json")),
                                              EstimatorKind::ICE);
  const auto state = estimate_psi(d.panel, kept, cfg, 11);
  EstimateOptions ones;
  ones.average_factor.assign(43, 1.0);
  const auto same = estimate_psi(d.panel, kept, cfg, 11, ones);
  EstimateOptions pop;
  pop.average_factor = d.populations;
  const auto person = estimate_psi(d.panel, kept, cfg, 11, pop);
  double total_pop = 0.0;
  for (double n : d.populations) total_pop += n;
  for (int t = 0; t < 12; ++t) {
    const auto s = static_cast<std::size_t>(t);
    EXPECT_EQ(same.psi[s], state.psi[s]);
    // deaths per person-week over all states
    double deaths = 0.0;
    for (std::size_t i = 0; i < 43; ++i) deaths += d.panel.response_column(t)[i] * d.populations[i];
    EXPECT_NEAR(person.natural_course[s], deaths / total_pop, 1e-15);
  }
}

TEST(AggSample, RegeneratedFromSeed) {
  // data/sample_agg.csv is simulate_planted(default, 20200406)
  const auto planted = agg::simulate_planted(agg::PlantedConfig{}, 20200406);
  std::ostringstream out;
  agg::write_csv(out, planted.csv);
  std::ifstream in(ptgf::testing::source_path("data/sample_agg.csv"));
  std::stringstream file;
  file << in.rdbuf();
  EXPECT_EQ(out.str(), file.str());
  const auto truth = io::read_json_file(ptgf::testing::source_path("data/sample_agg.truth.json"));
  EXPECT_DOUBLE_EQ(truth.at("true_lives_saved").get<double>(), planted.true_lives_saved);
}

TEST(LivesSaved, ZeroWhenRegimeMatchesNaturalCourse) {
  PsiEstimate e;
  e.psi = {1e-5, 2e-5};
  e.natural_course = e.psi;
  e.replicate_psi = {e.psi, e.psi, e.psi};
  e.replicate_natural = e.replicate_psi;
  const auto ls = agg::lives_saved(e, {1000.0, 2000.0});
  EXPECT_EQ(ls.point, 0.0);
  EXPECT_EQ(ls.se, 0.0);
}

TEST(LivesSaved, CumulativeDifferenceTimesPopulation) {
  PsiEstimate e;
  e.psi = {1e-5, 2e-5};
  e.natural_course = {1e-5, 3e-5};
  e.replicate_psi = {{1e-5, 2e-5}, {1e-5, 2e-5}};
  e.replicate_natural = {{1e-5, 2.5e-5}, {1e-5, 3.5e-5}};
  const auto ls = agg::lives_saved(e, {1e6, 1e6});
  EXPECT_NEAR(ls.point, 1e-5 * 2e6, 1e-9);
  // replicate sums 10 and 30: sd = sqrt(200)
  EXPECT_NEAR(ls.se, std::sqrt(200.0), 1e-9);
  EXPECT_NEAR(ls.ci_hi - ls.point, 1.959963984540054 * ls.se, 1e-9);
  PsiEstimate none = e;
  none.replicate_psi.clear();
  none.replicate_natural.clear();
  EXPECT_THROW(agg::lives_saved(none, {1.0}), Error);
}

TEST(AggPlanted, PooledSpecsShape) {
  const auto t = agg::pooled_treatment_specs("logW");
  EXPECT_TRUE(t.pooled);
  EXPECT_EQ(t.numerator.n_columns(), 4u);
  EXPECT_EQ(t.denominator.n_columns(), 5u);
}
