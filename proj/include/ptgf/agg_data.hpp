#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptgf/bootstrap.hpp"
#include "ptgf/error.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/io.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/rng.hpp"
#include "ptgf/stats.hpp"

namespace ptgf::agg {

/// Column bindings for an aggregated count CSV.
struct SchemaMap {
  std::string unit = "state";
  std::string time = "week";
  std::string deaths = "deaths";
  std::string population = "population";
  std::string policy = "policy";
  std::string case_change = "case_change";
  bool log_case_change = true;

  static SchemaMap from_json(const nlohmann::json& j) {
    SchemaMap s;
    s.unit = j.value("unit", s.unit);
    s.time = j.value("time", s.time);
    s.deaths = j.value("deaths", s.deaths);
    s.population = j.value("population", s.population);
    s.policy = j.value("policy", s.policy);
    s.case_change = j.value("case_change", s.case_change);
    s.log_case_change = j.value("log_case_change", s.log_case_change);
    return s;
  }

  nlohmann::json to_json() const {
    return {{"unit", unit},     {"time", time},       {"deaths", deaths},
            {"population", population}, {"policy", policy}, {"case_change", case_change},
            {"log_case_change", log_case_change}};
  }
};

struct AggPanel {
  LongPanel panel;
  std::vector<double> populations;
  std::string covariate;  ///< "logW" or "W"
};

/**
 * Builds a LongPanel from count rows: outcome = deaths, trials = population,
 * unit_weight = 1/population, covariate logW = log(case_change) (or W when
 * the log transform is off).
 */
inline AggPanel ingest_agg(const io::CsvTable& t, const SchemaMap& schema) {
  const auto col = [&](const std::string& name) {
    auto c = t.column(name);
    require(c.has_value(), ErrorCode::SchemaMismatch, "column '" + name + "' not found");
    return *c;
  };
  const std::size_t cu = col(schema.unit), ct = col(schema.time), cd = col(schema.deaths), cp = col(schema.population),
                    ca = col(schema.policy), cw = col(schema.case_change);
  io::LongRows lr;
  for (std::size_t r = 0; r < t.rows.size(); ++r) lr.add(t.rows[r][cu], io::parse_int(t.rows[r][ct], schema.time), r);
  const int T = lr.n_times();
  AggPanel out;
  out.covariate = schema.log_case_change ? "logW" : "W";
  std::vector<double> w, y, weight, trials;
  std::vector<int> a;
  for (std::size_t u = 0; u < lr.ids.size(); ++u) {
    double pop = -1.0;
    for (const auto& [time, r] : lr.times[u]) {
      const auto& row = t.rows[r];
      const double d = io::parse_double(row[cd], schema.deaths);
      const double p = io::parse_double(row[cp], schema.population);
      require(p > 0.0 && p == std::floor(p), ErrorCode::SchemaMismatch, "population must be a positive integer");
      require(d >= 0.0 && d == std::floor(d), ErrorCode::NegativeCount,
              "unit " + lr.ids[u] + " t=" + std::to_string(time) + ": deaths must be a nonnegative integer");
      require(d <= p, ErrorCode::NegativeCount, "unit " + lr.ids[u] + " t=" + std::to_string(time) + ": deaths exceed population");
      require(pop < 0.0 || pop == p, ErrorCode::SchemaMismatch, "population varies over time for unit " + lr.ids[u]);
      pop = p;
      const double cc = io::parse_double(row[cw], schema.case_change);
      if (schema.log_case_change) {
        require(cc > 0.0, ErrorCode::NonpositiveCaseChange, "unit " + lr.ids[u] + " t=" + std::to_string(time));
        w.push_back(std::log(cc));
      } else {
        w.push_back(cc);
      }
      y.push_back(d);
      a.push_back(io::parse_int(row[ca], schema.policy));
    }
    out.populations.push_back(pop);
    weight.push_back(1.0 / pop);
    trials.push_back(pop);
  }
  out.panel = LongPanel(lr.ids, T, {out.covariate}, std::move(w), std::move(a), std::move(y), std::move(weight),
                        std::move(trials));
  return out;
}

inline AggPanel ingest_agg(const std::string& path, const SchemaMap& schema) {
  return ingest_agg(io::read_csv_file(path), schema);
}

struct LivesSaved {
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
};

/**
 * Σ_t (natural_course_t - ψ_t) × Σ_s n_s, with a Wald interval from the SD of
 * the same cumulative sum over bootstrap replicates.
 */
inline LivesSaved lives_saved(const PsiEstimate& psi, const std::vector<double>& populations, double level = 0.95) {
  require(!psi.replicate_psi.empty() && psi.replicate_psi.size() == psi.replicate_natural.size(),
          ErrorCode::MissingBootstrap, "lives_saved needs bootstrap replicates");
  double pop = 0.0;
  for (double p : populations) pop += p;
  auto cum = [&](const std::vector<double>& nat, const std::vector<double>& ps) {
    double s = 0.0;
    for (std::size_t t = 0; t < ps.size(); ++t) s += nat[t] - ps[t];
    return s * pop;
  };
  LivesSaved out;
  out.point = cum(psi.natural_course, psi.psi);
  std::vector<double> reps;
  for (std::size_t b = 0; b < psi.replicate_psi.size(); ++b) reps.push_back(cum(psi.replicate_natural[b], psi.replicate_psi[b]));
  out.se = reps.size() >= 2 ? stats::sd(reps) : 0.0;
  const double z = stats::normal_quantile(0.5 + level / 2.0);
  out.ci_lo = out.point - z * out.se;
  out.ci_hi = out.point + z * out.se;
  return out;
}

/**
 * Synthetic state-week counts with a planted policy effect. Every state
 * starts under the policy; once lifted it stays lifted. The weekly death
 * rate is r_t + b_s + effect·(1 - A_st), with b_s a time-constant state
 * level that also drives lifting, so parallel trends hold while lifting is
 * confounded. Case change is exp(b_s/scale + trend + noise) > 0.
 */
struct PlantedConfig {
  int n_units = 43;
  int n_times = 12;
  double base_rate = 2.0e-5;      ///< r_0 per person-week
  double rate_trend = 1.0e-6;     ///< r_t = r_0 + trend·t
  double state_sd = 5.0e-6;       ///< SD of b_s
  double effect = 6.0e-6;         ///< added rate after lifting the policy
  double pop_log_mean = 15.0;     ///< log population, mean
  double pop_log_sd = 1.0;
};

struct PlantedData {
  AggPanel data;
  io::CsvTable csv;
  double true_lives_saved = 0.0;  ///< effect · Σ_t (#lifted_t / n_units) · Σ n_s
};

inline PlantedData simulate_planted(const PlantedConfig& cfg, std::uint64_t seed) {
  PlantedData out;
  out.csv.header = {"state", "week", "deaths", "population", "policy", "case_change"};
  CounterRng rng(seed, 0xA66ULL);
  std::vector<double> lifted(static_cast<std::size_t>(cfg.n_times), 0.0);
  double total_pop = 0.0;
  for (int s = 0; s < cfg.n_units; ++s) {
    const double pop = std::round(std::exp(cfg.pop_log_mean + cfg.pop_log_sd * rng.normal()));
    total_pop += pop;
    const double b = cfg.state_sd * rng.normal();
    const double bz = b / cfg.state_sd;
    int a = 1;
    for (int t = 0; t < cfg.n_times; ++t) {
      const double logw = 0.5 * bz - 0.05 * t + 0.3 * rng.normal();
      if (t > 0 && a == 1) {
        // lifting more likely with falling cases and for low-burden states
        const double p = expit(-2.2 - 0.8 * logw - 0.6 * bz + 0.1 * t);
        if (rng.uniform() < p) a = 0;
      } else {
        rng.uniform();
      }
      if (a == 0) lifted[static_cast<std::size_t>(t)] += 1.0;
      const double rate = std::clamp(cfg.base_rate + cfg.rate_trend * t + b + cfg.effect * (1 - a), 1e-9, 1.0);
      std::binomial_distribution<long long> deaths(static_cast<long long>(pop), rate);
      const long long d = deaths(rng);
      out.csv.rows.push_back({"S" + std::to_string(s), std::to_string(t), std::to_string(d), io::fmt(pop),
                              std::to_string(a), io::fmt(std::exp(logw))});
    }
  }
  double frac = 0.0;
  for (double l : lifted) frac += l / cfg.n_units;
  out.true_lives_saved = cfg.effect * frac * total_pop;
  out.data = ingest_agg(out.csv, SchemaMap{});
  return out;
}

inline void write_csv(std::ostream& out, const io::CsvTable& t) {
  for (std::size_t c = 0; c < t.header.size(); ++c) out << (c ? "," : "") << t.header[c];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
}

/// Pooled logit treatment models with spline-of-time and the (log) case-change covariate.
inline TreatmentSpecs pooled_treatment_specs(const std::string& covariate, int spline_df = 3) {
  TreatmentSpecs t;
  t.pooled = true;
  t.numerator = {{Term::intercept(), Term::time_spline(spline_df)}, Family::Binomial, Link::Logit};
  t.denominator = {{Term::intercept(), Term::time_spline(spline_df), Term::covariate(covariate, 0)}, Family::Binomial, Link::Logit};
  return t;
}

}  // namespace ptgf::agg
