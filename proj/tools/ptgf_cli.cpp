#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ptgf/ptgf.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ptgf;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Everything a run records about itself.
struct Manifest {
  std::string command;
  json flags = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::array();
  json extra = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const std::string& role, const std::string& path) {
    inputs[role] = {{"path", path}, {"sha256", io::sha256_file(path)}};
  }
  void output(const std::string& path) { outputs.push_back(path); }

  json to_json() const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {{"command", command}, {"version", kVersion}, {"flags", flags},        {"seeds", seeds},
            {"inputs", inputs},   {"outputs", outputs},  {"wall_clock_seconds", secs}, {"extra", extra}};
  }
};

std::string read_text_or_file(const std::string& arg) {
  if (!arg.empty() && (arg.front() == '{' || arg.front() == '[')) return arg;
  std::ifstream in(arg);
  require(in.good(), ErrorCode::SchemaMismatch, "cannot open " + arg);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_arg(const std::string& arg, Manifest& m, const std::string& role) {
  const bool inline_json = !arg.empty() && (arg.front() == '{' || arg.front() == '[');
  if (!inline_json) m.input(role, arg);
  try {
    return json::parse(read_text_or_file(arg));
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaMismatch, role + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content, Manifest& m) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::SchemaMismatch, "cannot write " + path);
  out << content;
  m.output(path);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  if (path == "-") return "";
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void emit_manifest(const Manifest& m, const std::string& manifest_path, const std::string& primary_out) {
  std::string path = manifest_path;
  if (path.empty()) path = sibling(primary_out, ".manifest.json");
  const std::string text = m.to_json().dump(2) + "\n";
  if (path.empty()) {
    std::cerr << json{{"manifest", m.to_json()}}.dump() << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::SchemaMismatch, "cannot write " + path);
  out << text;
}

bool wants_json(const std::string& out, const std::string& format) {
  if (!format.empty()) {
    require(format == "csv" || format == "json", ErrorCode::InvalidSpec, "--format must be csv or json");
    return format == "json";
  }
  return fs::path(out).extension() == ".json";
}

// ---------------------------------------------------------------------------
// Shared estimation inputs
// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string panel, agg, schema;
  std::string estimator = "ice";
  std::string regime, specs;
  int t_max = -1;
  std::string out = "-";
  std::string format;
};

void add_estimate_flags(CLI::App* sub, EstimateArgs& a) {
  sub->add_option("--panel", a.panel, "Panel CSV (unit,time,Y,A,W_<name>...,weight,trials)");
  sub->add_option("--agg", a.agg, "Aggregated count CSV, ingested on the fly");
  sub->add_option("--schema", a.schema, "Schema map JSON for --agg");
  sub->add_option("--estimator", a.estimator, "iptw | ice | tmle");
  sub->add_option("--regime", a.regime, "Regime JSON file or inline JSON")->required();
  sub->add_option("--specs", a.specs, "Estimator specs JSON file or inline JSON")->required();
  sub->add_option("--t-max", a.t_max, "Last time to estimate (default: last panel time)");
  sub->add_option("--out", a.out, "Output path, '-' for stdout");
  sub->add_option("--format", a.format, "csv | json (default from the extension)");
}

struct Inputs {
  LongPanel panel;
  Regime regime = Regime::static_plan({0});
  EstimatorConfig config;
  int t_max = 0;
};

Inputs load_inputs(const EstimateArgs& a, Manifest& m) {
  require(a.panel.empty() != a.agg.empty(), ErrorCode::InvalidSpec, "give exactly one of --panel or --agg");
  Inputs in;
  if (!a.panel.empty()) {
    m.input("panel", a.panel);
    in.panel = io::read_panel_csv_file(a.panel);
  } else {
    m.input("agg", a.agg);
    agg::SchemaMap schema;
    if (!a.schema.empty()) schema = agg::SchemaMap::from_json(parse_json_arg(a.schema, m, "schema"));
    in.panel = agg::ingest_agg(a.agg, schema).panel;
  }
  in.regime = io::parse_regime(parse_json_arg(a.regime, m, "regime"));
  in.config = io::parse_estimator_config(parse_json_arg(a.specs, m, "specs"), parse_estimator(a.estimator));
  in.t_max = a.t_max < 0 ? in.panel.n_times() - 1 : a.t_max;
  m.flags["estimator"] = a.estimator;
  m.flags["t_max"] = in.t_max;
  m.flags["regime"] = in.regime.name();
  return in;
}

std::vector<double> populations(const LongPanel& p) {
  std::vector<double> out;
  for (std::size_t i = 0; i < p.n_units(); ++i) out.push_back(p.trials(i));
  return out;
}

std::string render(const PsiEstimate& e, bool as_json, const json& extra = {}) {
  std::ostringstream os;
  if (as_json) {
    json j = io::psi_to_json(e);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    os << j.dump(2) << "\n";
  } else {
    io::write_psi_csv(os, e);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string kind = "dgp";
  std::size_t n = 1000;
  int tau = 5;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> param_seed;
  std::string params;
  std::optional<double> theta;
  std::vector<double> theta_t;
  std::string out;
  std::string sidecar;
};

void cmd_simulate(const SimulateArgs& a, Manifest& m, unsigned jobs) {
  m.seeds["seed"] = a.seed;
  if (a.kind == "agg") {
    const auto planted = agg::simulate_planted(agg::PlantedConfig{}, a.seed);
    std::ostringstream os;
    agg::write_csv(os, planted.csv);
    write_file(a.out, os.str(), m);
    const json side{{"kind", "agg"},
                    {"seed", a.seed},
                    {"true_lives_saved", planted.true_lives_saved},
                    {"schema", agg::SchemaMap{}.to_json()},
                    {"regime", {{"static", std::vector<int>(12, 1)}}}};
    const std::string side_path = a.sidecar.empty() ? sibling(a.out, ".truth.json") : a.sidecar;
    if (!side_path.empty()) write_file(side_path, side.dump(2) + "\n", m);
    return;
  }
  require(a.kind == "dgp", ErrorCode::InvalidSpec, "--kind must be dgp or agg");
  require(a.n >= 1, ErrorCode::InvalidSpec, "--n must be >= 1");
  DgpParams p;
  json overrides = json::object();
  json source;
  if (!a.params.empty()) {
    p = io::params_from_json(parse_json_arg(a.params, m, "params"));
    source = {{"file", a.params}};
  } else {
    const std::uint64_t ps = a.param_seed.value_or(a.seed);
    p = draw_params(ps, a.tau);
    m.seeds["param_seed"] = ps;
    source = {{"param_seed", ps}, {"tau", a.tau}};
  }
  if (a.theta) {
    overrides["theta"] = {{"drawn", p.theta}, {"override", *a.theta}};
    p.theta = *a.theta;
  }
  if (!a.theta_t.empty()) {
    overrides["theta_t"] = a.theta_t;
    p.theta_t = a.theta_t;
  }
  p.validate();
  const auto sim = simulate_observed(a.n, p, a.seed, jobs);
  std::ostringstream os;
  io::write_panel_csv(os, sim.panel);
  write_file(a.out, os.str(), m);
  const json side{{"params", io::params_to_json(p)}, {"source", source}, {"overrides", overrides},
                  {"n", a.n},                         {"seed", a.seed}};
  m.extra["overrides"] = overrides;
  const std::string side_path = a.sidecar.empty() ? sibling(a.out, ".params.json") : a.sidecar;
  if (!side_path.empty()) write_file(side_path, side.dump(2) + "\n", m);
}

/// Count panels: the same estimator with final averages weighted by population instead of per unit.
json person_average(const Inputs& in) {
  EstimateOptions opt;
  opt.average_factor = populations(in.panel);
  const PsiEstimate e = estimate_psi(in.panel, in.regime, in.config, in.t_max, opt);
  return {{"psi", e.psi}, {"natural_course", e.natural_course}, {"contrast", e.contrast}};
}

void cmd_estimate(const EstimateArgs& a, Manifest& m) {
  const Inputs in = load_inputs(a, m);
  const PsiEstimate e = estimate_psi(in.panel, in.regime, in.config, in.t_max);
  json extra = json::object();
  if (in.panel.has_trials()) {
    extra["person_average"] = person_average(in);
    m.extra["person_average"] = extra["person_average"];
  }
  write_file(a.out, render(e, wants_json(a.out, a.format), extra), m);
  m.extra["warnings"] = e.warnings;
}

struct BootArgs {
  int B = 200;
  std::string mode = "unit";
  std::uint64_t seed = 1;
  double level = 0.95;
  bool percentile = false;
};

void cmd_bootstrap(const EstimateArgs& a, const BootArgs& b, Manifest& m, unsigned jobs) {
  const Inputs in = load_inputs(a, m);
  BootstrapConfig cfg;
  cfg.mode = parse_bootstrap_mode(b.mode);
  cfg.replicates = b.B;
  cfg.seed = b.seed;
  cfg.level = b.level;
  cfg.percentile = b.percentile;
  cfg.jobs = jobs;
  m.seeds["bootstrap_seed"] = b.seed;
  m.flags["B"] = b.B;
  m.flags["mode"] = to_string(cfg.mode);
  m.flags["level"] = b.level;
  const PsiEstimate e = bootstrap_psi(in.panel, in.regime, in.config, cfg, in.t_max);
  json extra = json::object();
  if (in.panel.has_trials()) {
    const auto ls = agg::lives_saved(e, populations(in.panel), b.level);
    extra["lives_saved"] = {{"point", ls.point}, {"se", ls.se}, {"ci_lo", ls.ci_lo}, {"ci_hi", ls.ci_hi}};
    m.extra["lives_saved"] = extra["lives_saved"];
    extra["person_average"] = person_average(in);
    m.extra["person_average"] = extra["person_average"];
  }
  m.extra["failed_replicates"] = e.failed_replicates;
  write_file(a.out, render(e, wants_json(a.out, a.format), extra), m);
}

void cmd_sensitivity(const EstimateArgs& a, const std::string& grid_arg, int t, Manifest& m) {
  const Inputs in = load_inputs(a, m);
  const auto grid = io::parse_delta_grid(parse_json_arg(grid_arg, m, "delta_grid"));
  const int target = t < 0 ? in.t_max : t;
  const auto rows = sensitivity_sweep(in.panel, in.regime, in.config, grid, target);
  std::ostringstream os;
  if (wants_json(a.out, a.format)) {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back({{"delta", r.label}, {"t", target}, {"psi_prime", r.psi_prime}, {"contrast", r.contrast},
                     {"psi_trajectory", r.psi_trajectory}});
    os << arr.dump(2) << "\n";
  } else {
    os << "delta,t,psi_prime,contrast,estimator\n";
    for (const auto& r : rows)
      os << '"' << r.label << "\"," << target << ',' << io::fmt(r.psi_prime) << ',' << io::fmt(r.contrast) << ','
         << to_string(in.config.kind) << '\n';
  }
  write_file(a.out, os.str(), m);
}

struct Table1Args {
  std::size_t n = 10000;
  int reps = 200;
  std::uint64_t seed = 72259;
  std::uint64_t data_seed = 1;
  int t = 5;
  std::size_t oracle_n = 1000000;
  std::string out = "-";
};

void cmd_replicate_table1(const Table1Args& a, Manifest& m, unsigned jobs) {
  table1::Config cfg;
  cfg.n = a.n;
  cfg.reps = a.reps;
  cfg.param_seed = a.seed;
  cfg.data_seed = a.data_seed;
  cfg.t = a.t;
  cfg.tau = std::max(5, a.t);
  cfg.oracle_n = a.oracle_n;
  cfg.jobs = jobs;
  m.seeds["param_seed"] = a.seed;
  m.seeds["data_seed"] = a.data_seed;
  const auto res = table1::run(cfg);
  std::ostringstream os;
  os << "row,n_ok,mean,bias,bias_x100,variance,variance_x_n,mc_se,bias_over_mc_se,lilliefors_p,expect_consistent,"
        "truth,truth_mc,truth_mc_se\n";
  for (const auto& r : res.rows) {
    const double z = r.mc_se > 0 ? r.bias / r.mc_se : std::nan("");
    os << r.name << ',' << r.n_ok << ',' << io::fmt(r.mean) << ',' << io::fmt(r.bias) << ',' << io::fmt(100 * r.bias)
       << ',' << io::fmt(r.variance) << ',' << io::fmt(r.variance * static_cast<double>(a.n)) << ','
       << io::fmt(r.mc_se) << ',' << io::fmt(z) << ','
       << (r.lilliefors_p ? io::fmt(*r.lilliefors_p) : std::string("insufficient")) << ','
       << (r.expect_consistent ? "true" : "false") << ',' << io::fmt(res.truth) << ',' << io::fmt(res.truth_mc) << ','
       << io::fmt(res.truth_mc_se) << '\n';
  }
  write_file(a.out, os.str(), m);
  m.extra["truth"] = res.truth;
  m.extra["truth_mc"] = res.truth_mc;
  m.extra["truth_mc_se"] = res.truth_mc_se;
  m.extra["natural_course_mc"] = res.observed_mean;
  m.extra["params"] = io::params_to_json(res.params);
}

void cmd_ingest_agg(const std::string& input, const std::string& schema_arg, const std::string& out, Manifest& m) {
  m.input("agg", input);
  agg::SchemaMap schema;
  if (!schema_arg.empty()) schema = agg::SchemaMap::from_json(parse_json_arg(schema_arg, m, "schema"));
  const auto data = agg::ingest_agg(input, schema);
  std::ostringstream os;
  io::write_panel_csv(os, data.panel);
  write_file(out, os.str(), m);
  m.extra["units"] = data.panel.n_units();
  m.extra["times"] = data.panel.n_times();
  m.extra["covariate"] = data.covariate;
}

/// Returns false when a fixture contradicts its declared conformance.
bool cmd_oracle_check(const std::vector<std::string>& paths, const std::string& out, Manifest& m) {
  std::vector<std::string> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".json") files.push_back(e.path().string());
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::InvalidSpec, "no fixture files");
  std::ostringstream os;
  os << "fixture,conforming,t,exact_psi,exact_mu,gap,status\n";
  bool ok = true;
  json summary = json::array();
  for (const auto& f : files) {
    m.input(fs::path(f).filename().string(), f);
    const auto fx = oracle::load_fixture(f);
    const Regime regime = fx.regime();
    double max_gap = 0.0;
    for (int t = 0; t < fx.dgp.tau + 1; ++t) {
      const double psi = oracle::exact_psi(fx.dgp, regime, t);
      const double mu = oracle::exact_mu(fx.dgp, regime, t);
      const double gap = std::abs(psi - mu);
      max_gap = std::max(max_gap, gap);
      os << fx.dgp.name << ',' << (fx.conforming ? "true" : "false") << ',' << t << ',' << io::fmt(psi) << ','
         << io::fmt(mu) << ',' << io::fmt(gap) << ",\n";
    }
    const bool pass = fx.conforming ? max_gap < 1e-12 : max_gap > 1e-3;
    ok = ok && pass;
    os << fx.dgp.name << ',' << (fx.conforming ? "true" : "false") << ",max,,," << io::fmt(max_gap) << ','
       << (pass ? "PASS" : "FAIL") << '\n';
    summary.push_back({{"fixture", fx.dgp.name}, {"conforming", fx.conforming}, {"max_gap", max_gap}, {"pass", pass}});
  }
  write_file(out, os.str(), m);
  m.extra["fixtures"] = summary;
  return ok;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Validation: return 2;
    case ErrorCategory::Numerical: return 3;
    case ErrorCategory::Internal: return 4;
  }
  return 4;
}

void report_error(const std::string& code, const std::string& category, const std::string& detail) {
  std::cerr << json{{"error", {{"code", code}, {"category", category}, {"detail", detail}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel-trends g-formula estimation engine"};
  app.require_subcommand(1);
  unsigned jobs = default_jobs();
  std::string manifest_path;
  app.add_option("--jobs", jobs, "Worker threads (default: PTGF_JOBS or hardware concurrency)");
  app.add_option("--manifest", manifest_path, "Manifest path (default: <out>.manifest.json)");
  app.set_version_flag("--version", kVersion);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Simulate a panel from the DGP, or a planted aggregated dataset");
  s_sim->add_option("--kind", sim.kind, "dgp | agg");
  s_sim->add_option("--n", sim.n, "Units");
  s_sim->add_option("--tau", sim.tau, "Last time index");
  s_sim->add_option("--seed", sim.seed, "Data seed");
  s_sim->add_option("--param-seed", sim.param_seed, "Parameter draw seed (default: --seed)");
  s_sim->add_option("--params", sim.params, "Parameter JSON instead of a draw");
  s_sim->add_option("--theta", sim.theta, "Override theta");
  s_sim->add_option("--theta-t", sim.theta_t, "Time-varying theta (one value per time)")->delimiter(',');
  s_sim->add_option("--out", sim.out, "Output CSV")->required();
  s_sim->add_option("--sidecar", sim.sidecar, "Sidecar JSON path");

  EstimateArgs est;
  auto* s_est = app.add_subcommand("estimate", "Estimate the psi trajectory");
  add_estimate_flags(s_est, est);

  EstimateArgs best;
  BootArgs boot;
  auto* s_boot = app.add_subcommand("bootstrap", "Estimate with bootstrap standard errors and Wald intervals");
  add_estimate_flags(s_boot, best);
  s_boot->add_option("--B", boot.B, "Replicates");
  s_boot->add_option("--mode", boot.mode, "unit | multinomial");
  s_boot->add_option("--seed", boot.seed, "Bootstrap seed");
  s_boot->add_option("--level", boot.level, "Interval level");
  s_boot->add_flag("--percentile", boot.percentile, "Percentile instead of Wald intervals");

  EstimateArgs sens;
  std::string grid;
  int sens_t = -1;
  auto* s_sens = app.add_subcommand("sensitivity", "Sweep psi'_t over a grid of Delta offsets");
  add_estimate_flags(s_sens, sens);
  s_sens->add_option("--delta-grid", grid, "JSON array of Delta entries (file or inline)")->required();
  s_sens->add_option("--t", sens_t, "Target time (default: --t-max)");

  Table1Args t1;
  auto* s_t1 = app.add_subcommand("replicate-table1", "Run the 8-row estimator x specification simulation");
  s_t1->add_option("--n", t1.n, "Units per dataset");
  s_t1->add_option("--reps", t1.reps, "Datasets");
  s_t1->add_option("--seed", t1.seed, "Parameter draw seed");
  s_t1->add_option("--data-seed", t1.data_seed, "Dataset stream seed");
  s_t1->add_option("--t", t1.t, "Target time");
  s_t1->add_option("--oracle-n", t1.oracle_n, "Counterfactual oracle draws");
  s_t1->add_option("--out", t1.out, "Output CSV");

  std::string ing_in, ing_schema, ing_out = "-";
  auto* s_ing = app.add_subcommand("ingest-agg", "Convert an aggregated count CSV to a panel CSV");
  s_ing->add_option("--input", ing_in, "Aggregated CSV")->required();
  s_ing->add_option("--schema", ing_schema, "Schema map JSON");
  s_ing->add_option("--out", ing_out, "Panel CSV");

  std::vector<std::string> fixtures;
  std::string oc_out = "-";
  auto* s_oc = app.add_subcommand("oracle-check", "Compare exact psi with exact counterfactual means on fixtures");
  s_oc->add_option("fixtures", fixtures, "Fixture files or directories")->required();
  s_oc->add_option("--out", oc_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("UsageError", "Validation", e.what());
    return 2;
  }

  Manifest m;
  m.command = app.get_subcommands().front()->get_name();
  for (const auto* opt : app.get_subcommands().front()->get_options()) {
    if (opt->count() > 0 && !opt->get_lnames().empty()) m.flags[opt->get_lnames().front()] = opt->results();
  }
  m.flags["jobs"] = jobs;
  require(jobs >= 1, ErrorCode::InvalidSpec, "--jobs must be >= 1");
  std::string primary;
  int code = 0;
  try {
    if (*s_sim) {
      primary = sim.out;
      cmd_simulate(sim, m, jobs);
    } else if (*s_est) {
      primary = est.out;
      cmd_estimate(est, m);
    } else if (*s_boot) {
      primary = best.out;
      cmd_bootstrap(best, boot, m, jobs);
    } else if (*s_sens) {
      primary = sens.out;
      cmd_sensitivity(sens, grid, sens_t, m);
    } else if (*s_t1) {
      primary = t1.out;
      cmd_replicate_table1(t1, m, jobs);
    } else if (*s_ing) {
      primary = ing_out;
      cmd_ingest_agg(ing_in, ing_schema, ing_out, m);
    } else if (*s_oc) {
      primary = oc_out;
      if (!cmd_oracle_check(fixtures, oc_out, m)) {
        report_error("OracleMismatch", "Internal", "a fixture contradicts its declared conformance");
        code = 4;
      }
    }
    emit_manifest(m, manifest_path, primary);
  } catch (const Error& e) {
    report_error(std::string(to_string(e.code())),
                 e.category() == ErrorCategory::Validation  ? "Validation"
                 : e.category() == ErrorCategory::Numerical ? "Numerical"
                                                            : "Internal",
                 e.detail());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    report_error("Internal", "Internal", e.what());
    return 4;
  }
  return code;
}
