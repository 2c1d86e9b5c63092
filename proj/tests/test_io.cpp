#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "test_util.hpp"

using namespace ptgf;
using nlohmann::json;

TEST(Csv, QuotedFieldsAndWhitespace) {
  EXPECT_EQ(io::split_csv_line(R"(a, "b,c" ,d)"), (std::vector<std::string>{"a", "b,c", "d"}));
  EXPECT_EQ(io::split_csv_line("x,,y\r"), (std::vector<std::string>{"x", "", "y"}));
  std::istringstream bad("a,b\n1,2,3\n");
  EXPECT_THROW(io::read_csv(bad), Error);
  EXPECT_THROW(io::parse_double("1.5x", "v"), Error);
  EXPECT_THROW(io::parse_int("1.5", "v"), Error);
  EXPECT_EQ(io::parse_int("3", "v"), 3);
}

TEST(Csv, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789}) EXPECT_EQ(std::stod(io::fmt(v)), v);
}

TEST(Specs, ModelSpecRoundTrip) {
  const json j = json::parse(R"({"terms":[{"type":"intercept"},{"type":"covariate","name":"W1","lag":1},
    {"type":"power","name":"W2","lag":0,"exponent":2},{"type":"log","name":"W","lag":0},{"type":"time_spline","df":3},
    {"type":"treatment"},{"type":"interaction","terms":[{"type":"covariate","name":"W1","lag":0},{"type":"treatment"}]}],
    "family":"quasibinomial"})");
  const ModelSpec s = io::parse_model_spec(j);
  EXPECT_EQ(s.terms.size(), 7u);
  EXPECT_EQ(s.link, Link::Logit);
  EXPECT_EQ(s.n_columns(), 9u);
  EXPECT_EQ(io::model_spec_to_json(io::parse_model_spec(io::model_spec_to_json(s))), io::model_spec_to_json(s));
}

TEST(Specs, Rejections) {
  auto code = [](const std::string& text) {
    try {
      io::parse_model_spec(json::parse(text));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  EXPECT_EQ(code(R"({"terms":[{"type":"spline"}]})"), ErrorCode::InvalidSpec);
  EXPECT_EQ(code(R"({"terms":[{"type":"intercept"}],"family":"poisson"})"), ErrorCode::InvalidSpec);
  EXPECT_EQ(code(R"({"terms":[{"type":"intercept"}],"family":"gaussian","link":"logit"})"), ErrorCode::InvalidSpec);
  EXPECT_EQ(code(R"({"terms":[{"type":"covariate","name":"W","lag":-1}]})"), ErrorCode::InvalidLag);
  EXPECT_EQ(code(R"({"family":"gaussian"})"), ErrorCode::InvalidSpec);
}

TEST(Specs, ShippedFilesParse) {
  namespace fs = std::filesystem;
  int n = 0;
  for (const auto& e : fs::directory_iterator(ptgf::testing::source_path("specs"))) {
    if (e.path().extension() != ".json") continue;
    const auto c = io::parse_estimator_config(io::read_json_file(e.path().string()), EstimatorKind::TMLE);
    EXPECT_FALSE(c.outcome.nested.terms.empty()) << e.path();
    ++n;
  }
  EXPECT_GE(n, 5);
  for (const auto& e : fs::directory_iterator(ptgf::testing::source_path("specs/regimes"))) {
    EXPECT_NO_THROW(io::parse_regime(io::read_json_file(e.path().string()))) << e.path();
  }
}

TEST(Specs, EstimatorConfigOptions) {
  const auto c = io::parse_estimator_config(
      json::parse(R"({"outcome":{"nested":{"terms":[{"type":"intercept"}]}},"bounds":[-1,2],"truncation":0.01,"weight_cap":50})"),
      EstimatorKind::TMLE);
  ASSERT_TRUE(c.bounds.has_value());
  EXPECT_EQ(c.bounds->second, 2.0);
  EXPECT_EQ(*c.truncation, 0.01);
  EXPECT_EQ(c.weight_cap, 50.0);
  EXPECT_THROW(io::parse_estimator_config(json::parse(R"({"bounds":[2,1]})"), EstimatorKind::TMLE), Error);
  EXPECT_THROW(io::parse_estimator_config(json::parse(R"({"truncation":0.7})"), EstimatorKind::TMLE), Error);
  EXPECT_EQ(parse_estimator("tmle"), EstimatorKind::TMLE);
  EXPECT_THROW(parse_estimator("aipw"), Error);
}

TEST(Regimes, ParseForms) {
  const auto p = ptgf::testing::small_panel({{0, 1, 1}}, {{0, 0, 0}}, {{0.2, 0.9, -1.0}});
  auto decisions = [&](const json& j) {
    const auto m = adherence(p, io::parse_regime(j));
    return std::vector<int>{m.decision(0, 0), m.decision(0, 1), m.decision(0, 2)};
  };
  EXPECT_EQ(decisions({{"static", {0, 1, 1}}}), (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(decisions({{"rule", "constant"}, {"params", {{"value", 1}}}}), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(decisions({{"rule", "plan"}, {"params", {{"plan", {0, 0, 1}}}}}), (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(decisions({{"rule", "threshold"}, {"params", {{"covariate", "W"}, {"cutoff", 0.5}}}}), (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(decisions({{"rule", "table"}, {"params", {{"covariate", "W"}, {"cuts", {0.0, 0.5}}, {"decisions", {1, 0, 1}}}}}),
            (std::vector<int>{0, 1, 1}));
  EXPECT_THROW(io::parse_regime({{"static", "x"}}), Error);
  EXPECT_THROW(io::parse_regime({{"rule", "constant"}, {"params", {{"value", 2}}}}), Error);
  EXPECT_THROW(io::parse_regime({{"rule", "table"}, {"params", {{"covariate", "W"}, {"cuts", {0.0}}, {"decisions", {1}}}}}),
               Error);
  EXPECT_THROW(io::parse_regime(json::object()), Error);
}

TEST(Deltas, GridParse) {
  const auto g = io::parse_delta_grid(json::parse(R"([0, -0.5, {"type":"constant","value":1,"label":"one"}])"));
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[2].label, "one");
  EXPECT_THROW(io::parse_delta_grid(json::parse(R"({"type":"constant"})")), Error);
}

TEST(Params, JsonRoundTrip) {
  auto p = draw_params(11, 4);
  p.theta_t = std::vector<double>{0, 1, 2, 3, 4};
  const auto q = io::params_from_json(io::params_to_json(p));
  EXPECT_EQ(io::params_to_json(q), io::params_to_json(p));
  auto j = io::params_to_json(p);
  j["beta"].erase(0);
  EXPECT_THROW(io::params_from_json(j), Error);
}

TEST(Hash, Sha256KnownAnswer) {
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Results, PsiJsonAndCsv) {
  PsiEstimate e;
  e.psi = {1.0, 2.0};
  e.natural_course = {1.0, 1.5};
  e.contrast = {0.0, 0.5};
  e.phis.set(0, 0, 1.0);
  const auto j = io::psi_to_json(e);
  EXPECT_EQ(j.at("psi"), json({1.0, 2.0}));
  EXPECT_FALSE(j.contains("se"));
  std::ostringstream out;
  io::write_psi_csv(out, e);
  EXPECT_EQ(out.str(), "t,psi,natural_course,contrast,se,ci_lo,ci_hi,estimator\n0,1,1,0,,,,ice\n1,2,1.5,0.5,,,,ice\n");
}
