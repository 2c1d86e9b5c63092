#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptgf/dgp_sim.hpp"
#include "ptgf/error.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/glm.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/sensitivity.hpp"

namespace ptgf::io {

using json = nlohmann::json;

/// Shortest round-trip text for a double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    return std::nullopt;
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::SchemaMismatch, "empty CSV");
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = split_csv_line(line);
    require(row.size() == t.header.size(), ErrorCode::SchemaMismatch,
            "line " + std::to_string(lineno) + " has " + std::to_string(row.size()) + " fields, header has " +
                std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::SchemaMismatch, "cannot open " + path);
  return read_csv(in);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::SchemaMismatch, "cannot parse " + what + " value '" + s + "'");
}

inline int parse_int(const std::string& s, const std::string& what) {
  const double v = parse_double(s, what);
  require(v == std::floor(v), ErrorCode::SchemaMismatch, what + " must be an integer, got '" + s + "'");
  return static_cast<int>(v);
}

/**
 * Long-form rows keyed by (unit, time) into a rectangular panel. Units keep
 * order of first appearance; times must be 0..T-1 for every unit.
 */
struct LongRows {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  std::vector<std::map<int, std::size_t>> times;  ///< per unit: time -> row

  void add(const std::string& unit, int time, std::size_t row) {
    auto [it, inserted] = index.emplace(unit, ids.size());
    if (inserted) {
      ids.push_back(unit);
      times.emplace_back();
    }
    auto& m = times[it->second];
    require(m.emplace(time, row).second, ErrorCode::NonContiguousTime,
            "unit " + unit + " has time " + std::to_string(time) + " twice");
  }

  int n_times() const {
    require(!ids.empty(), ErrorCode::InvalidPanel, "no rows");
    const int T = static_cast<int>(times[0].size());
    for (std::size_t u = 0; u < ids.size(); ++u) {
      const auto& m = times[u];
      int expect = 0;
      for (const auto& [t, r] : m) {
        require(t == expect, ErrorCode::NonContiguousTime,
                "unit " + ids[u] + ": times must be 0-based contiguous, missing " + std::to_string(expect));
        ++expect;
      }
      require(static_cast<int>(m.size()) == T, ErrorCode::NonContiguousTime,
              "unit " + ids[u] + " has " + std::to_string(m.size()) + " times, expected " + std::to_string(T));
    }
    return T;
  }
};

/// Panel CSV: unit,time,Y,A,W_<name>...[,weight][,trials].
inline LongPanel read_panel_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const auto need = [&](const std::string& name) {
    auto c = t.column(name);
    require(c.has_value(), ErrorCode::SchemaMismatch, "panel CSV lacks column '" + name + "'");
    return *c;
  };
  const std::size_t cu = need("unit"), ct = need("time"), cy = need("Y"), ca = need("A");
  const auto cw = t.column("weight"), ctr = t.column("trials");
  std::vector<std::string> names;
  std::vector<std::size_t> wcols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].rfind("W_", 0) == 0) {
      names.push_back(t.header[c].substr(2));
      wcols.push_back(c);
    }
  }
  LongRows lr;
  for (std::size_t r = 0; r < t.rows.size(); ++r) lr.add(t.rows[r][cu], parse_int(t.rows[r][ct], "time"), r);
  const int T = lr.n_times();
  const std::size_t n = lr.ids.size();
  std::vector<double> w, y, weight, trials;
  std::vector<int> a;
  for (std::size_t u = 0; u < n; ++u) {
    std::optional<double> unit_w, unit_tr;
    for (const auto& [time, r] : lr.times[u]) {
      const auto& row = t.rows[r];
      y.push_back(parse_double(row[cy], "Y"));
      const int av = parse_int(row[ca], "A");
      a.push_back(av);
      for (std::size_t c : wcols) w.push_back(parse_double(row[c], t.header[c]));
      auto constant = [&](std::optional<std::size_t> col, std::optional<double>& slot, const char* what) {
        if (!col) return;
        const double v = parse_double(row[*col], what);
        if (slot) {
          require(*slot == v, ErrorCode::InvalidPanel, std::string(what) + " varies over time for unit " + lr.ids[u]);
        }
        slot = v;
      };
      constant(cw, unit_w, "weight");
      constant(ctr, unit_tr, "trials");
    }
    if (cw) weight.push_back(*unit_w);
    if (ctr) trials.push_back(*unit_tr);
  }
  return LongPanel(lr.ids, T, names, std::move(w), std::move(a), std::move(y), std::move(weight), std::move(trials));
}

inline LongPanel read_panel_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::SchemaMismatch, "cannot open " + path);
  return read_panel_csv(in);
}

inline void write_panel_csv(std::ostream& out, const LongPanel& p) {
  out << "unit,time,Y,A";
  for (const auto& nm : p.covariate_names()) out << ",W_" << nm;
  out << ",weight";
  if (p.has_trials()) out << ",trials";
  out << '\n';
  for (std::size_t i = 0; i < p.n_units(); ++i) {
    for (int t = 0; t < p.n_times(); ++t) {
      out << p.unit_id(i) << ',' << t << ',' << fmt(p.Y(i, t)) << ',' << p.A(i, t);
      for (std::size_t c = 0; c < p.n_covariates(); ++c) out << ',' << fmt(p.W(i, t, c));
      out << ',' << fmt(p.unit_weight(i));
      if (p.has_trials()) out << ',' << fmt(p.trials(i));
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

/**
 * Registered dynamic rules:
 *   constant  {"value": 0|1}
 *   plan      {"plan": [..]}                       static plan evaluated as a rule
 *   threshold {"covariate", "cutoff", "above": 1, "below": 0}   decision from W_k
 *   table     {"covariate", "cuts": [..], "decisions": [..]}     decision by bin of W_k
 */
inline Regime make_rule(const std::string& name, const json& params) {
  try {
    if (name == "constant") {
      const int v = params.at("value").get<int>();
      require(v == 0 || v == 1, ErrorCode::InvalidRegime, "constant rule value must be 0 or 1");
      return Regime::dynamic("constant(" + std::to_string(v) + ")", [v](const HistoryView&) { return v; });
    }
    if (name == "plan") return Regime::constant_rule(params.at("plan").get<std::vector<int>>());
    if (name == "threshold") {
      const auto cov = params.at("covariate").get<std::string>();
      const double cut = params.at("cutoff").get<double>();
      const int above = params.value("above", 1), below = params.value("below", 0);
      return Regime::dynamic("threshold(" + cov + ">" + fmt(cut) + ")", [=](const HistoryView& h) {
        return h.covariate(cov, h.time()) > cut ? above : below;
      });
    }
    if (name == "table") {
      const auto cov = params.at("covariate").get<std::string>();
      const auto cuts = params.at("cuts").get<std::vector<double>>();
      const auto dec = params.at("decisions").get<std::vector<int>>();
      require(dec.size() == cuts.size() + 1, ErrorCode::InvalidRegime, "table rule needs one more decision than cuts");
      return Regime::dynamic("table(" + cov + ")", [=](const HistoryView& h) {
        const double w = h.covariate(cov, h.time());
        return dec[static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), w) - cuts.begin())];
      });
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidRegime, "rule '" + name + "': " + e.what());
  }
  fail(ErrorCode::InvalidRegime, "unknown rule '" + name + "'");
}

inline Regime parse_regime(const json& j) {
  if (j.contains("static")) {
    require(j.at("static").is_array(), ErrorCode::InvalidRegime, "static plan must be an array");
    return Regime::static_plan(j.at("static").get<std::vector<int>>());
  }
  if (j.contains("rule")) return make_rule(j.at("rule").get<std::string>(), j.value("params", json::object()));
  fail(ErrorCode::InvalidRegime, "regime JSON needs 'static' or 'rule'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::SchemaMismatch, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaMismatch, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Model specs
// ---------------------------------------------------------------------------

inline Term parse_term(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "intercept") return Term::intercept();
  if (type == "covariate") return Term::covariate(j.at("name").get<std::string>(), j.value("lag", 0));
  if (type == "power")
    return Term::power(j.at("name").get<std::string>(), j.value("lag", 0), j.at("exponent").get<double>());
  if (type == "log") return Term::log_covariate(j.at("name").get<std::string>(), j.value("lag", 0));
  if (type == "time_spline") return Term::time_spline(j.at("df").get<int>());
  if (type == "treatment") return Term::treatment();
  if (type == "interaction") {
    const auto& ts = j.at("terms");
    require(ts.is_array() && ts.size() == 2, ErrorCode::InvalidSpec, "interaction needs two terms");
    return Term::interaction(parse_term(ts[0]), parse_term(ts[1]));
  }
  fail(ErrorCode::InvalidSpec, "unknown term type '" + type + "'");
}

inline json term_to_json(const Term& t) {
  using K = Term::Kind;
  switch (t.kind) {
    case K::Intercept: return {{"type", "intercept"}};
    case K::Covariate: return {{"type", "covariate"}, {"name", t.name}, {"lag", t.lag}};
    case K::Power: return {{"type", "power"}, {"name", t.name}, {"lag", t.lag}, {"exponent", t.exponent}};
    case K::LogCovariate: return {{"type", "log"}, {"name", t.name}, {"lag", t.lag}};
    case K::TimeSpline: return {{"type", "time_spline"}, {"df", t.df}};
    case K::TreatmentIndicator: return {{"type", "treatment"}};
    case K::Interaction:
      return {{"type", "interaction"}, {"terms", json::array({term_to_json(t.factors[0]), term_to_json(t.factors[1])})}};
  }
  return {};
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "binomial") return Family::Binomial;
  if (s == "quasibinomial") return Family::Quasibinomial;
  fail(ErrorCode::InvalidSpec, "unknown family '" + s + "'");
}

inline std::string family_name(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Binomial: return "binomial";
    case Family::Quasibinomial: return "quasibinomial";
  }
  return "?";
}

inline ModelSpec parse_model_spec(const json& j) {
  try {
    ModelSpec s;
    for (const auto& t : j.at("terms")) s.terms.push_back(parse_term(t));
    s.family = parse_family(j.value("family", std::string("gaussian")));
    const std::string default_link = s.family == Family::Gaussian ? "identity" : "logit";
    const auto link = j.value("link", default_link);
    require(link == "identity" || link == "logit", ErrorCode::InvalidSpec, "unknown link '" + link + "'");
    s.link = link == "identity" ? Link::Identity : Link::Logit;
    s.validate();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("model spec: ") + e.what());
  }
}

inline json model_spec_to_json(const ModelSpec& s) {
  json terms = json::array();
  for (const auto& t : s.terms) terms.push_back(term_to_json(t));
  return {{"terms", terms}, {"family", family_name(s.family)}, {"link", s.link == Link::Identity ? "identity" : "logit"}};
}

/**
 * Estimator specs file:
 *   {"treatment": {"numerator": spec, "denominator": spec, "pooled": false},
 *    "outcome": {"nested": spec, "first_step": spec?},
 *    "bounds": [L, U]?, "weight_cap": 100, "truncation": 0.01?, "positivity_epsilon": 0.01}
 */
inline EstimatorConfig parse_estimator_config(const json& j, EstimatorKind kind) {
  EstimatorConfig c;
  c.kind = kind;
  try {
    if (j.contains("treatment")) {
      const auto& t = j.at("treatment");
      if (t.contains("numerator")) c.treatment.numerator = parse_model_spec(t.at("numerator"));
      if (t.contains("denominator")) c.treatment.denominator = parse_model_spec(t.at("denominator"));
      c.treatment.pooled = t.value("pooled", false);
    }
    if (j.contains("outcome")) {
      const auto& o = j.at("outcome");
      c.outcome.nested = parse_model_spec(o.at("nested"));
      if (o.contains("first_step") && !o.at("first_step").is_null()) c.outcome.first_step = parse_model_spec(o.at("first_step"));
    }
    if (j.contains("bounds") && !j.at("bounds").is_null()) {
      const auto b = j.at("bounds").get<std::vector<double>>();
      require(b.size() == 2 && b[0] < b[1], ErrorCode::InvalidSpec, "bounds must be [L, U] with L < U");
      c.bounds = std::make_pair(b[0], b[1]);
    }
    c.weight_cap = j.value("weight_cap", c.weight_cap);
    if (j.contains("truncation") && !j.at("truncation").is_null()) {
      c.truncation = j.at("truncation").get<double>();
      require(*c.truncation > 0.0 && *c.truncation < 0.5, ErrorCode::InvalidSpec, "truncation must be in (0, 0.5)");
    }
    c.positivity_epsilon = j.value("positivity_epsilon", c.positivity_epsilon);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("specs: ") + e.what());
  }
  return c;
}

inline json estimator_config_to_json(const EstimatorConfig& c) {
  json j;
  j["estimator"] = to_string(c.kind);
  j["treatment"] = {{"numerator", model_spec_to_json(c.treatment.numerator)},
                    {"denominator", model_spec_to_json(c.treatment.denominator)},
                    {"pooled", c.treatment.pooled}};
  j["outcome"] = {{"nested", model_spec_to_json(c.outcome.nested)},
                  {"first_step", c.outcome.first_step ? model_spec_to_json(*c.outcome.first_step) : json(nullptr)}};
  j["bounds"] = c.bounds ? json::array({c.bounds->first, c.bounds->second}) : json(nullptr);
  j["weight_cap"] = c.weight_cap;
  j["truncation"] = c.truncation ? json(*c.truncation) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Sensitivity offsets
// ---------------------------------------------------------------------------

/**
 * One Δ entry: a bare number is a constant, otherwise an object with "type"
 * constant {value} | time_varying {values} | covariate_linear {intercept, coefficients}
 * | tabulated {covariate, cuts, values}, and an optional "label".
 */
inline DeltaSpec parse_delta(const json& j) {
  try {
    if (j.is_number()) return DeltaSpec::constant(j.get<double>());
    const auto type = j.at("type").get<std::string>();
    DeltaSpec d;
    if (type == "constant") {
      d = DeltaSpec::constant(j.at("value").get<double>());
    } else if (type == "time_varying") {
      d.form = DeltaTimeVarying{j.at("values").get<std::vector<double>>()};
      d.label = "time_varying";
    } else if (type == "covariate_linear") {
      DeltaCovariateLinear f;
      if (j.contains("intercept")) f.intercept = j.at("intercept").get<std::vector<double>>();
      f.coefficients = j.at("coefficients").get<std::map<std::string, std::vector<double>>>();
      d.form = f;
      d.label = "covariate_linear";
    } else if (type == "tabulated") {
      DeltaTabulated f{j.at("covariate").get<std::string>(), j.at("cuts").get<std::vector<double>>(),
                       j.at("values").get<std::vector<std::vector<double>>>()};
      require(std::is_sorted(f.cuts.begin(), f.cuts.end()), ErrorCode::InvalidSpec, "tabulated cuts must be sorted");
      d.form = f;
      d.label = "tabulated(" + f.covariate + ")";
    } else {
      fail(ErrorCode::InvalidSpec, "unknown delta type '" + type + "'");
    }
    if (j.contains("label")) d.label = j.at("label").get<std::string>();
    return d;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("delta: ") + e.what());
  }
}

/// A grid is a JSON array of Δ entries.
inline std::vector<DeltaSpec> parse_delta_grid(const json& j) {
  require(j.is_array() && !j.empty(), ErrorCode::InvalidSpec, "delta grid must be a non-empty array");
  std::vector<DeltaSpec> out;
  for (const auto& e : j) out.push_back(parse_delta(e));
  return out;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

inline void write_psi_csv(std::ostream& out, const PsiEstimate& e) {
  out << "t,psi,natural_course,contrast,se,ci_lo,ci_hi,estimator\n";
  for (std::size_t t = 0; t < e.psi.size(); ++t) {
    out << t << ',' << fmt(e.psi[t]) << ',' << fmt(e.natural_course[t]) << ',' << fmt(e.contrast[t]) << ',';
    if (!e.se.empty()) out << fmt(e.se[t]) << ',' << fmt(e.ci_lo[t]) << ',' << fmt(e.ci_hi[t]);
    else out << ",,";
    out << ',' << to_string(e.estimator) << '\n';
  }
}

inline json psi_to_json(const PsiEstimate& e) {
  json j;
  j["estimator"] = to_string(e.estimator);
  j["psi"] = e.psi;
  j["natural_course"] = e.natural_course;
  j["contrast"] = e.contrast;
  if (!e.se.empty()) {
    j["se"] = e.se;
    j["ci_lo"] = e.ci_lo;
    j["ci_hi"] = e.ci_hi;
    j["failed_replicates"] = e.failed_replicates;
  }
  json phis = json::array();
  for (const auto& [jk, v] : e.phis.entries) phis.push_back({{"j", jk.first}, {"k", jk.second}, {"phi", v}});
  j["phi"] = phis;
  j["warnings"] = e.warnings;
  j["metadata"] = e.metadata;
  return j;
}

inline json params_to_json(const DgpParams& p) {
  json j{{"tau", p.tau},       {"omega0", p.omega0}, {"alpha0", p.alpha0}, {"alpha1", p.alpha1},
         {"gamma0", p.gamma0}, {"gamma1", p.gamma1}, {"delta", p.delta},   {"beta", p.beta},
         {"theta", p.theta}};
  if (p.theta_t) j["theta_t"] = *p.theta_t;
  return j;
}

inline DgpParams params_from_json(const json& j) {
  try {
    DgpParams p;
    p.tau = j.at("tau").get<int>();
    p.omega0 = j.at("omega0").get<double>();
    p.alpha0 = j.at("alpha0").get<std::vector<double>>();
    p.alpha1 = j.at("alpha1").get<std::vector<double>>();
    p.gamma0 = j.at("gamma0").get<std::vector<double>>();
    p.gamma1 = j.at("gamma1").get<std::vector<double>>();
    p.delta = j.at("delta").get<std::vector<std::vector<double>>>();
    p.beta = j.at("beta").get<std::vector<std::vector<double>>>();
    p.theta = j.at("theta").get<double>();
    if (j.contains("theta_t") && !j.at("theta_t").is_null()) p.theta_t = j.at("theta_t").get<std::vector<double>>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("params: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::SchemaMismatch, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace ptgf::io
