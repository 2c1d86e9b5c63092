// Acceptance run: one PASS/FAIL line per criterion, exit status = number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ptgf/ptgf.hpp"

using namespace ptgf;
namespace fs = std::filesystem;

namespace {

std::string source_path(const std::string& rel) { return std::string(PTGF_SOURCE_DIR) + "/" + rel; }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmtd(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<oracle::Fixture> fixtures() {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(source_path("fixtures/oracle")))
    if (e.path().extension() == ".json") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<oracle::Fixture> out;
  for (const auto& f : files) out.push_back(oracle::load_fixture(f));
  return out;
}

bool binary_w(const oracle::DiscreteDgp& d) {
  for (const auto& s : d.support)
    if (s != std::vector<double>{0.0, 1.0}) return false;
  return true;
}

EstimatorConfig saturated_config(EstimatorKind kind, int tau) {
  EstimatorConfig c;
  c.kind = kind;
  c.outcome.nested = oracle::saturated_spec("W", tau, Family::Gaussian);
  c.treatment.numerator = {{Term::intercept()}, Family::Binomial, Link::Logit};
  c.treatment.denominator = oracle::saturated_spec("W", tau, Family::Binomial);
  return c;
}

EstimatorConfig table1_config(EstimatorKind kind) {
  EstimatorConfig c;
  c.kind = kind;
  c.outcome = table1::outcome_specs(true);
  c.treatment = table1::treatment_specs(true);
  return c;
}

Regime sticky_rule() {
  return Regime::dynamic("sticky", [](const HistoryView& h) {
    if (h.time() == 0) return 0;
    if (h.treatment(h.time() - 1) == 1) return 1;
    return h.covariate("W", h.time()) > 0.5 ? 1 : 0;
  });
}

const char* kind_name(EstimatorKind k) {
  return k == EstimatorKind::IPTW ? "iptw" : k == EstimatorKind::ICE ? "ice" : "tmle";
}

// 1: identification on the discrete fixtures
Verdict identification() {
  int conforming = 0, violating = 0, dynamic = 0;
  double worst_conforming = 0.0, weakest_violation = INFINITY;
  std::string bad;
  for (const auto& f : fixtures()) {
    const Regime r = f.regime();
    double gap = 0.0;
    for (int t = 0; t <= f.dgp.tau; ++t)
      gap = std::max(gap, std::abs(oracle::exact_psi(f.dgp, r, t) - oracle::exact_mu(f.dgp, r, t)));
    if (f.conforming) {
      ++conforming;
      dynamic += r.is_static() ? 0 : 1;
      worst_conforming = std::max(worst_conforming, gap);
      if (gap >= 1e-12) bad += " " + f.dgp.name;
    } else {
      ++violating;
      weakest_violation = std::min(weakest_violation, gap);
      if (gap <= 1e-3) bad += " " + f.dgp.name;
    }
  }
  const bool pass = conforming >= 5 && dynamic >= 1 && violating >= 2 && bad.empty();
  return {pass, std::to_string(conforming) + " conforming (" + std::to_string(dynamic) + " dynamic), max gap " +
                    fmtd("%.2e", worst_conforming) + "; " + std::to_string(violating) + " violating, min gap " +
                    fmtd("%.3f", weakest_violation) + (bad.empty() ? "" : "; off:" + bad)};
}

// 2: saturated estimators equal the empirical plug-in
Verdict plugin_equivalence() {
  double worst = 0.0;
  int cases = 0;
  auto check = [&](const LongPanel& panel, const Regime& regime, int tau) {
    for (EstimatorKind kind : {EstimatorKind::IPTW, EstimatorKind::ICE, EstimatorKind::TMLE}) {
      const auto est = estimate_psi(panel, regime, saturated_config(kind, tau), tau);
      for (int t = 0; t <= tau; ++t)
        worst = std::max(worst, std::abs(est.psi[static_cast<std::size_t>(t)] - oracle::plugin_psi(panel, regime, t)));
      ++cases;
    }
  };
  for (const auto& f : fixtures()) {
    if (!f.conforming || !binary_w(f.dgp)) continue;
    const auto panel = oracle::sample_panel(f.dgp, 20000, 31);
    check(panel, f.regime(), f.dgp.tau);
    if (f.dgp.name == "static_never_tau3") check(panel, sticky_rule(), f.dgp.tau);
  }
  return {cases >= 9 && worst < 1e-8, std::to_string(cases) + " estimator/panel cases, max |est - plugin| " + fmtd("%.2e", worst)};
}

// 3 and 4: bias, normality and variance pattern of the eight-row simulation study
struct Table1Verdicts {
  Verdict pattern, ordering;
};

Table1Verdicts table1_pattern() {
  table1::Config cfg;
  cfg.jobs = default_jobs();
  const auto res = table1::run(cfg);
  std::printf("  table1: param seed %llu, n %zu, reps %d, truth %.5f, oracle %.5f (se %.5f)\n",
              static_cast<unsigned long long>(cfg.param_seed), cfg.n, cfg.reps, res.truth, res.truth_mc, res.truth_mc_se);
  bool ok = std::abs(res.truth_mc - res.truth) < 3.0 * res.truth_mc_se;
  std::string notes;
  if (!ok) notes += " oracle disagrees with closed form;";
  const auto specs = table1::rows();
  double var_ice = 0.0, var_iptw = 0.0;
  const std::vector<std::string> correct{"ice_true", "iptw_true", "tmle_true"};
  for (std::size_t c = 0; c < res.rows.size(); ++c) {
    const auto& row = res.rows[c];
    const double z = row.mc_se > 0.0 ? row.bias / row.mc_se : INFINITY;
    const double lp = row.lilliefors_p.value_or(-1.0);
    std::printf("  %-10s ok %3zu bias %+.5f mc_se %.5f z %+7.2f var*n %7.3f lilliefors_p %.4f\n", row.name.c_str(),
                row.n_ok, row.bias, row.mc_se, z, row.variance * static_cast<double>(cfg.n), lp);
    if (row.n_ok != static_cast<std::size_t>(cfg.reps)) {
      ok = false;
      notes += " " + row.name + " had failed replicates;";
    }
    if (specs[c].expect_consistent && !(std::abs(z) < 3.0)) {
      ok = false;
      notes += " " + row.name + " |z| >= 3;";
    }
    if (!specs[c].expect_consistent && !(std::abs(z) > 5.0)) {
      ok = false;
      notes += " " + row.name + " |z| <= 5;";
    }
    if (std::find(correct.begin(), correct.end(), row.name) != correct.end() && !(lp > 0.01)) {
      ok = false;
      notes += " " + row.name + " lilliefors p " + fmtd("%.4f", lp) + ";";
    }
    if (row.name == "ice_true") var_ice = row.variance;
    if (row.name == "iptw_true") var_iptw = row.variance;
  }
  Table1Verdicts v;
  v.pattern = {ok, ok ? "bias and normality pattern holds" : "failed:" + notes};
  v.ordering = {var_iptw > var_ice, "var(iptw_true)*n " + fmtd("%.3f", var_iptw * static_cast<double>(cfg.n)) +
                                        " vs var(ice_true)*n " + fmtd("%.3f", var_ice * static_cast<double>(cfg.n))};
  return v;
}

// 5: unit-resample bootstrap coverage
Verdict bootstrap_coverage() {
  const table1::Config base;
  const DgpParams params = draw_params(base.param_seed, base.tau);
  const double truth = exact_static_mu(params, std::vector<int>(static_cast<std::size_t>(base.tau) + 1, 0))[5];
  const Regime never = Regime::static_plan(std::vector<int>(static_cast<std::size_t>(base.tau) + 1, 0));
  const int D = 200;
  int cover_ice = 0, cover_tmle = 0, failed = 0;
  for (int d = 0; d < D; ++d) {
    const auto sim = simulate_observed(10000, params, derive_stream(5, static_cast<std::uint64_t>(d)), default_jobs());
    for (EstimatorKind kind : {EstimatorKind::ICE, EstimatorKind::TMLE}) {
      BootstrapConfig b;
      b.mode = BootstrapMode::UnitResample;
      b.replicates = 200;
      b.seed = derive_stream(55, static_cast<std::uint64_t>(d));
      b.jobs = default_jobs();
      try {
        const auto e = bootstrap_psi(sim.panel, never, table1_config(kind), b, 5);
        const bool hit = e.ci_lo[5] <= truth && truth <= e.ci_hi[5];
        (kind == EstimatorKind::ICE ? cover_ice : cover_tmle) += hit ? 1 : 0;
      } catch (const Error&) {
        ++failed;
      }
    }
  }
  const double ci = 100.0 * cover_ice / D, ct = 100.0 * cover_tmle / D;
  const bool pass = failed == 0 && ci >= 91.0 && ci <= 98.0 && ct >= 91.0 && ct <= 98.0;
  return {pass, "coverage ice " + fmtd("%.1f%%", ci) + ", tmle " + fmtd("%.1f%%", ct) + " over " + std::to_string(D) +
                    " data sets" + (failed ? ", " + std::to_string(failed) + " failed" : "")};
}

// 6: parallel-trends probe
Verdict trends_probe() {
  DgpParams p = draw_params(table1::Config{}.param_seed, 5);
  const std::vector<int> plan(6, 0);
  const auto ok = probe_parallel_trends(p, 1000000, 606, plan, default_jobs());
  p.theta_t = std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  const auto bad = probe_parallel_trends(p, 1000000, 606, plan, default_jobs());
  return {ok.pass && bad.max_abs_z > 5.0,
          "constant theta max |z| " + fmtd("%.2f", ok.max_abs_z) + "; time-varying theta max |z| " + fmtd("%.1f", bad.max_abs_z)};
}

// 7: sensitivity identities
Verdict sensitivity_identities() {
  const auto sim = simulate_observed(3000, draw_params(table1::Config{}.param_seed, 5), 77);
  const Regime never = Regime::static_plan(std::vector<int>(6, 0));
  double zero_gap = 0.0, affine_gap = 0.0;
  const std::vector<double> cs{-1.0, -0.25, 0.5, 2.0};
  for (EstimatorKind kind : {EstimatorKind::ICE, EstimatorKind::IPTW}) {
    const auto c = table1_config(kind);
    std::vector<DeltaSpec> grid{DeltaSpec::zero()};
    for (double v : cs) grid.push_back(DeltaSpec::constant(v));
    const auto base = estimate_psi(sim.panel, never, c, 5);
    const auto rows = sensitivity_sweep(sim.panel, never, c, grid, 5);
    for (int t = 0; t <= 5; ++t) {
      const auto s = static_cast<std::size_t>(t);
      zero_gap = std::max(zero_gap, std::abs(rows[0].psi_trajectory[s] - base.psi[s]));
      for (std::size_t g = 0; g < cs.size(); ++g)
        affine_gap = std::max(affine_gap, std::abs(rows[g + 1].psi_trajectory[s] - rows[0].psi_trajectory[s] -
                                                   cs[g] * t * (t + 1) / 2.0));
    }
  }
  return {zero_gap <= 1e-12 && affine_gap <= 1e-10,
          "zero-delta gap " + fmtd("%.1e", zero_gap) + ", affine gap " + fmtd("%.1e", affine_gap)};
}

// 8: GLM engine oracles and TMLE scores
Verdict glm_oracles() {
  CounterRng rng(8080, 1);
  double wls_gap = 0.0, logit_gap = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index n = 20 + rep, p = 1 + rep % 5;
    Matrix X(n, p);
    Vector y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      for (Eigen::Index j = 1; j < p; ++j) X(i, j) = rng.normal();
      y[i] = 3.0 * rng.normal();
      w[i] = 0.1 + rng.uniform();
    }
    const auto fit = fit_glm(X, y, w, Vector::Zero(n), Family::Gaussian, Link::Identity);
    const Vector ref = (X.transpose() * w.asDiagonal() * X).ldlt().solve(X.transpose() * w.asDiagonal() * y);
    wls_gap = std::max(wls_gap, (fit.coefficients - ref).cwiseAbs().maxCoeff());

    Vector yb(n);
    double sw = 0.0, swy = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      yb[i] = rng.uniform() < 0.3 + 0.4 * rng.uniform() ? 1.0 : 0.0;
      sw += w[i];
      swy += w[i] * yb[i];
    }
    if (swy == 0.0 || swy == sw) continue;
    const auto lf = fit_glm(Matrix::Ones(n, 1), yb, w, Vector::Zero(n), Family::Binomial, Link::Logit);
    logit_gap = std::max(logit_gap, std::abs(lf.coefficients[0] - logit(swy / sw)));
  }
  const auto sim = simulate_observed(3000, draw_params(table1::Config{}.param_seed, 5), 88);
  EstimationContext ctx(sim.panel, Regime::static_plan(std::vector<int>(6, 0)));
  double score = 0.0;
  int steps = 0;
  for (bool correct : {true, false}) {
    const auto fits = fit_treatment_models(sim.panel, ctx.adh(), table1::treatment_specs(correct));
    for (int k = 1; k <= 5; ++k)
      for (int j : {k - 1, k}) {
        const auto cell = estimate_phi_tmle(ctx, fits, table1::outcome_specs(correct), j, k, sim.panel.response_column(j));
        for (const auto& s : cell.steps) {
          score = std::max(score, std::abs(s.score));
          ++steps;
        }
      }
  }
  return {wls_gap < 1e-10 && logit_gap < 1e-10 && score < 1e-8,
          "wls gap " + fmtd("%.1e", wls_gap) + ", intercept logit gap " + fmtd("%.1e", logit_gap) + ", max tmle score " +
              fmtd("%.1e", score) + " over " + std::to_string(steps) + " steps"};
}

// 9: planted-effect aggregated pipeline
Verdict agg_pipeline() {
  auto cfg = io::parse_estimator_config(io::read_json_file(source_path("specs/agg_pooled.json")), EstimatorKind::TMLE);
  const agg::PlantedConfig pc;
  const Regime kept = Regime::static_plan(std::vector<int>(static_cast<std::size_t>(pc.n_times), 1));
  int cover = 0, failed = 0;
  const int S = 100;
  for (int s = 1; s <= S; ++s) {
    const auto pd = agg::simulate_planted(pc, 1000 + static_cast<std::uint64_t>(s));
    BootstrapConfig b;
    b.mode = BootstrapMode::MultinomialCounts;
    b.replicates = 200;
    b.seed = static_cast<std::uint64_t>(s);
    b.jobs = default_jobs();
    try {
      const auto e = bootstrap_psi(pd.data.panel, kept, cfg, b, pc.n_times - 1);
      const auto ls = agg::lives_saved(e, pd.data.populations);
      cover += (ls.ci_lo <= pd.true_lives_saved && pd.true_lives_saved <= ls.ci_hi) ? 1 : 0;
    } catch (const Error&) {
      ++failed;
    }
  }
  return {cover >= 90, std::to_string(cover) + "/" + std::to_string(S) + " seeds cover the planted lives saved" +
                           (failed ? ", " + std::to_string(failed) + " failed" : "")};
}

// 10: static plans and constant rules give identical bits
Verdict regime_genericity() {
  int panels = 0, mismatches = 0;
  auto compare = [&](const LongPanel& panel, const std::vector<int>& plan, const std::function<EstimatorConfig(EstimatorKind)>& cfg) {
    ++panels;
    for (EstimatorKind kind : {EstimatorKind::IPTW, EstimatorKind::ICE, EstimatorKind::TMLE}) {
      const int t_max = panel.n_times() - 1;
      const auto a = estimate_psi(panel, Regime::static_plan(plan), cfg(kind), t_max);
      const auto b = estimate_psi(panel, Regime::constant_rule(plan), cfg(kind), t_max);
      for (std::size_t t = 0; t < a.psi.size(); ++t)
        if (a.psi[t] != b.psi[t] || a.natural_course[t] != b.natural_course[t]) {
          ++mismatches;
          std::printf("  mismatch %s t=%zu\n", kind_name(kind), t);
        }
    }
  };
  for (const auto& f : fixtures()) {
    const Regime r = f.regime();
    if (!r.is_static()) continue;
    const auto panel = oracle::sample_panel(f.dgp, 5000, 10);
    const auto plan = f.regime_json.at("static").get<std::vector<int>>();
    const int tau = f.dgp.tau;
    compare(panel, plan, [&](EstimatorKind k) {
      if (binary_w(f.dgp)) return saturated_config(k, tau);
      EstimatorConfig c;
      c.kind = k;
      c.outcome.nested = {{Term::intercept(), Term::covariate("W", 0)}, Family::Gaussian, Link::Identity};
      c.treatment.denominator = {{Term::intercept(), Term::covariate("W", 0)}, Family::Binomial, Link::Logit};
      return c;
    });
  }
  const auto sim = simulate_observed(5000, draw_params(table1::Config{}.param_seed, 5), 10);
  compare(sim.panel, std::vector<int>(6, 0), table1_config);
  const auto sample = agg::ingest_agg(source_path("data/sample_agg.csv"), agg::SchemaMap{});
  const auto agg_cfg = io::parse_estimator_config(io::read_json_file(source_path("specs/agg_pooled.json")), EstimatorKind::ICE);
  compare(sample.panel, std::vector<int>(static_cast<std::size_t>(sample.panel.n_times()), 1), [&](EstimatorKind k) {
    auto c = agg_cfg;
    c.kind = k;
    return c;
  });
  return {mismatches == 0, std::to_string(panels) + " panels x 3 estimators, " + std::to_string(mismatches) + " mismatches"};
}

}  // namespace

int main(int argc, char** argv) {
  // optional criterion ids restrict the run
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::stoi(argv[i]));
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& run) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  };
  report(1, "identification", identification);
  report(2, "plugin-equivalence", plugin_equivalence);
  Table1Verdicts t1;
  report(3, "table1-pattern", [&] {
    t1 = table1_pattern();
    return t1.pattern;
  });
  report(4, "variance-ordering", [&] { return t1.ordering; });
  report(5, "bootstrap-coverage", bootstrap_coverage);
  report(6, "trends-probe", trends_probe);
  report(7, "sensitivity-identities", sensitivity_identities);
  report(8, "glm-oracles", glm_oracles);
  report(9, "agg-pipeline", agg_pipeline);
  report(10, "regime-genericity", regime_genericity);
  std::printf("%d criteria failed\n", failures);
  return failures;
}
