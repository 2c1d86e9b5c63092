#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ptgf/error.hpp"
#include "ptgf/glm.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/parallel.hpp"
#include "ptgf/rng.hpp"

namespace ptgf {

/**
 * Parameters of the simulation DGP. Every vector has length tau + 1.
 * theta is the time-constant effect of the latent U on Y; theta_t, when
 * set, replaces it by a time-varying effect (which breaks parallel trends).
 */
struct DgpParams {
  int tau = 5;
  double omega0 = 0.0;
  std::vector<double> alpha0, alpha1;
  std::vector<double> gamma0, gamma1;
  std::vector<std::vector<double>> delta;  ///< delta[0..4][t]
  std::vector<std::vector<double>> beta;   ///< beta[0..4][t]
  double theta = 0.0;
  std::optional<std::vector<double>> theta_t;

  double theta_at(int t) const { return theta_t ? (*theta_t)[static_cast<std::size_t>(t)] : theta; }

  void validate() const {
    require(tau >= 1, ErrorCode::InvalidSpec, "tau must be >= 1");
    const auto len = static_cast<std::size_t>(tau) + 1;
    auto ok = [&](const std::vector<double>& v, const char* name) {
      require(v.size() == len, ErrorCode::DimensionMismatch, std::string(name) + " must have length tau + 1");
    };
    ok(alpha0, "alpha0");
    ok(alpha1, "alpha1");
    ok(gamma0, "gamma0");
    ok(gamma1, "gamma1");
    require(delta.size() == 5 && beta.size() == 5, ErrorCode::DimensionMismatch, "delta and beta need 5 rows");
    for (const auto& v : delta) ok(v, "delta");
    for (const auto& v : beta) ok(v, "beta");
    if (theta_t) ok(*theta_t, "theta_t");
  }
};

namespace detail {
constexpr std::uint64_t kParamStream = 0x7061'7261'6d73ULL;
}

/// Every scalar iid N(0.2, 1) from one stream, in a fixed order.
inline DgpParams draw_params(std::uint64_t seed, int tau) {
  require(tau >= 1, ErrorCode::InvalidSpec, "tau must be >= 1");
  CounterRng rng(seed, detail::kParamStream);
  auto draw = [&] { return 0.2 + rng.normal(); };
  auto vec = [&] {
    std::vector<double> v(static_cast<std::size_t>(tau) + 1);
    for (auto& x : v) x = draw();
    return v;
  };
  DgpParams p;
  p.tau = tau;
  p.omega0 = draw();
  p.alpha0 = vec();
  p.alpha1 = vec();
  p.gamma0 = vec();
  p.gamma1 = vec();
  for (int r = 0; r < 5; ++r) p.delta.push_back(vec());
  for (int r = 0; r < 5; ++r) p.beta.push_back(vec());
  p.theta = draw();
  return p;
}

struct SimulatedPanel {
  LongPanel panel;
  std::vector<int> latent_u;  ///< U_i0, never part of the analysis panel
};

namespace detail {

/// Draws for one unit in a fixed order: U, then per t: W1, W2, A-uniform, Y-noise.
struct UnitDraws {
  double u_uniform = 0.0;
  std::vector<double> w1_u, w2_z, a_u, y_z;

  UnitDraws(std::uint64_t seed, std::size_t unit, int T)
      : w1_u(static_cast<std::size_t>(T)), w2_z(w1_u.size()), a_u(w1_u.size()), y_z(w1_u.size()) {
    CounterRng rng(seed, unit);
    u_uniform = rng.uniform();
    for (std::size_t t = 0; t < w1_u.size(); ++t) {
      w1_u[t] = rng.uniform();
      w2_z[t] = rng.normal();
      a_u[t] = rng.uniform();
      y_z[t] = rng.normal();
    }
  }
};

inline double treatment_prob(const DgpParams& p, int t, int u, double w1, double w2) {
  const auto s = static_cast<std::size_t>(t);
  return expit(p.delta[0][s] + p.delta[1][s] * u + p.delta[2][s] * w1 + p.delta[3][s] * w2 + p.delta[4][s] * w2 * w2);
}

inline double outcome_mean(const DgpParams& p, int t, int u, double w1, double w2, int a) {
  const auto s = static_cast<std::size_t>(t);
  return p.beta[0][s] + p.beta[1][s] * w1 + p.beta[2][s] * w2 + p.beta[3][s] * w2 * w2 + p.beta[4][s] * a +
         p.theta_at(t) * u;
}

/// One unit's trajectory, either natural (regime == nullptr) or with A forced to the regime.
struct UnitPath {
  int u = 0;
  std::vector<double> w;  ///< [t][2]
  std::vector<int> a;
  std::vector<double> y;
  std::vector<int> natural_follow;  ///< forced runs: would the unit have followed at t given adherence so far
};

inline UnitPath simulate_unit(const DgpParams& p, std::uint64_t seed, std::size_t unit, const Regime* regime) {
  const int T = p.tau + 1;
  static const std::vector<std::string> names{"W1", "W2"};
  const UnitDraws d(seed, unit, T);
  UnitPath path;
  path.u = d.u_uniform < expit(p.omega0) ? 1 : 0;
  path.w.assign(static_cast<std::size_t>(T) * 2, 0.0);
  path.a.assign(static_cast<std::size_t>(T), 0);
  path.y.assign(static_cast<std::size_t>(T), 0.0);
  path.natural_follow.assign(static_cast<std::size_t>(T), 1);
  int a_prev = 0;
  for (int t = 0; t < T; ++t) {
    const auto s = static_cast<std::size_t>(t);
    const double w1 = d.w1_u[s] < expit(p.alpha0[s] + p.alpha1[s] * a_prev) ? 1.0 : 0.0;
    const double w2 = p.gamma0[s] + p.gamma1[s] * a_prev + d.w2_z[s];
    path.w[2 * s] = w1;
    path.w[2 * s + 1] = w2;
    int natural = 0;
    if (t > 0) natural = a_prev == 1 ? 1 : (d.a_u[s] < treatment_prob(p, t, path.u, w1, w2) ? 1 : 0);
    int a = natural;
    if (regime != nullptr) {
      a = regime->decide(HistoryView(path.w.data(), path.a.data(), 2, &names, t));
      path.natural_follow[s] = natural == a ? 1 : 0;
    }
    path.a[s] = a;
    path.y[s] = outcome_mean(p, t, path.u, w1, w2, a) + d.y_z[s];
    a_prev = a;
  }
  return path;
}

}  // namespace detail

/**
 * Observed-law panel with covariates W1, W2. Unit i uses stream
 * hash(seed, i), so a forced run with the same seed shares every draw.
 */
inline SimulatedPanel simulate_observed(std::size_t n, const DgpParams& params, std::uint64_t seed,
                                        unsigned jobs = 1) {
  params.validate();
  require(n >= 1, ErrorCode::InvalidSpec, "n must be >= 1");
  const int T = params.tau + 1;
  const auto Ts = static_cast<std::size_t>(T);
  std::vector<std::string> ids(n);
  std::vector<double> w(n * Ts * 2), y(n * Ts);
  std::vector<int> a(n * Ts), u(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto path = detail::simulate_unit(params, seed, i, nullptr);
    ids[i] = std::to_string(i);
    u[i] = path.u;
    std::copy(path.w.begin(), path.w.end(), w.begin() + static_cast<std::ptrdiff_t>(i * Ts * 2));
    std::copy(path.a.begin(), path.a.end(), a.begin() + static_cast<std::ptrdiff_t>(i * Ts));
    std::copy(path.y.begin(), path.y.end(), y.begin() + static_cast<std::ptrdiff_t>(i * Ts));
  });
  return {LongPanel(std::move(ids), T, {"W1", "W2"}, std::move(w), std::move(a), std::move(y)), std::move(u)};
}

struct CounterfactualMeans {
  std::vector<double> mean;
  std::vector<double> se;
};

/// Monte Carlo E{Y_t(regime)} with A forced to the regime; regime == nullptr gives the natural course.
inline CounterfactualMeans simulate_counterfactual(std::size_t n, const DgpParams& params, const Regime* regime,
                                                   std::uint64_t seed, unsigned jobs = 1) {
  params.validate();
  require(n >= 2, ErrorCode::InvalidSpec, "n must be >= 2");
  const auto Ts = static_cast<std::size_t>(params.tau) + 1;
  std::vector<double> y(n * Ts);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto path = detail::simulate_unit(params, seed, i, regime);
    std::copy(path.y.begin(), path.y.end(), y.begin() + static_cast<std::ptrdiff_t>(i * Ts));
  });
  CounterfactualMeans out;
  for (std::size_t t = 0; t < Ts; ++t) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += y[i * Ts + t];
    const double m = s / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ss += (y[i * Ts + t] - m) * (y[i * Ts + t] - m);
    out.mean.push_back(m);
    out.se.push_back(std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n)));
  }
  return out;
}

/**
 * Closed-form E{Y_t(ā*)} for a static plan. Under a forced plan W_t depends
 * only on a*_{t-1} and U is independent of W, so every expectation is a
 * finite sum: E W1 = expit(α0 + α1 a), E W2 = m, E W2² = m² + 1.
 */
inline std::vector<double> exact_static_mu(const DgpParams& params, const std::vector<int>& plan) {
  params.validate();
  const int T = params.tau + 1;
  require(static_cast<int>(plan.size()) >= T, ErrorCode::InvalidRegime, "plan shorter than the DGP horizon");
  std::vector<double> mu;
  const double pu = expit(params.omega0);
  for (int t = 0; t < T; ++t) {
    const auto s = static_cast<std::size_t>(t);
    const int a_prev = t == 0 ? 0 : plan[s - 1];
    const double ew1 = expit(params.alpha0[s] + params.alpha1[s] * a_prev);
    const double m = params.gamma0[s] + params.gamma1[s] * a_prev;
    mu.push_back(params.beta[0][s] + params.beta[1][s] * ew1 + params.beta[2][s] * m + params.beta[3][s] * (m * m + 1.0) +
                 params.beta[4][s] * plan[s] + params.theta_at(t) * pu);
  }
  return mu;
}

struct ProbeEntry {
  int t = 0;
  int k = 0;
  double coefficient = 0.0;
  double se = 0.0;
  double z = 0.0;
  std::size_t n_at_risk = 0;
};

struct ProbeReport {
  std::vector<ProbeEntry> entries;
  double max_abs_z = 0.0;
  bool pass = false;  ///< every |z| < 3
};

/**
 * Monte Carlo check of parallel trends under the plan ā*. Units are
 * simulated with A forced to ā* while recording whether each would have
 * followed the plan naturally. For 1 <= k <= t, ΔY_t = Y_t(ā*) - Y_{t-1}(ā*)
 * is regressed, among units naturally adherent through k-1, on an
 * intercept, the DGP covariate features (W1, W2, W2²) at times 0..k and the
 * indicator of natural adherence at k; the adherence coefficient is
 * reported with a heteroskedasticity-robust (HC0) standard error.
 */
inline ProbeReport probe_parallel_trends(const DgpParams& params, std::size_t n, std::uint64_t seed,
                                         const std::vector<int>& plan, unsigned jobs = 1) {
  params.validate();
  const int T = params.tau + 1;
  const auto Ts = static_cast<std::size_t>(T);
  const Regime regime = Regime::static_plan(plan);
  std::vector<double> w(n * Ts * 2), y(n * Ts);
  std::vector<int> follow(n * Ts);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto path = detail::simulate_unit(params, seed, i, &regime);
    std::copy(path.w.begin(), path.w.end(), w.begin() + static_cast<std::ptrdiff_t>(i * Ts * 2));
    std::copy(path.y.begin(), path.y.end(), y.begin() + static_cast<std::ptrdiff_t>(i * Ts));
    // cumulative natural adherence
    int adh = 1;
    for (std::size_t t = 0; t < Ts; ++t) {
      adh = adh && path.natural_follow[t];
      follow[i * Ts + t] = adh;
    }
  });

  ProbeReport report;
  std::vector<std::pair<int, int>> cells;
  for (int t = 1; t < T; ++t)
    for (int k = 1; k <= t; ++k) cells.emplace_back(t, k);
  report.entries.resize(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t c) {
    const auto [t, k] = cells[c];
    const auto ks = static_cast<std::size_t>(k);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (follow[i * Ts + ks - 1]) rows.push_back(i);
    const auto p = static_cast<Eigen::Index>(2 + 3 * (ks + 1));
    Matrix XtX = Matrix::Zero(p, p);
    Vector Xty = Vector::Zero(p);
    Vector x(p);
    auto fill = [&](std::size_t i) {
      x[0] = 1.0;
      Eigen::Index c2 = 1;
      for (std::size_t s = 0; s <= ks; ++s) {
        const double w1 = w[(i * Ts + s) * 2], w2 = w[(i * Ts + s) * 2 + 1];
        x[c2++] = w1;
        x[c2++] = w2;
        x[c2++] = w2 * w2;
      }
      x[c2] = follow[i * Ts + ks];
    };
    auto dy = [&](std::size_t i) { return y[i * Ts + static_cast<std::size_t>(t)] - y[i * Ts + static_cast<std::size_t>(t) - 1]; };
    for (std::size_t i : rows) {
      fill(i);
      XtX.selfadjointView<Eigen::Lower>().rankUpdate(x);
      Xty += x * dy(i);
    }
    XtX = XtX.selfadjointView<Eigen::Lower>();
    const Eigen::LDLT<Matrix> ldlt(XtX);
    const Vector beta = ldlt.solve(Xty);
    Matrix meat = Matrix::Zero(p, p);
    for (std::size_t i : rows) {
      fill(i);
      const double e = dy(i) - x.dot(beta);
      meat.selfadjointView<Eigen::Lower>().rankUpdate(x, e * e);
    }
    meat = meat.selfadjointView<Eigen::Lower>();
    const Matrix bread = ldlt.solve(Matrix::Identity(p, p));
    const Matrix cov = bread * meat * bread;
    ProbeEntry e;
    e.t = t;
    e.k = k;
    e.coefficient = beta[p - 1];
    e.se = std::sqrt(cov(p - 1, p - 1));
    e.z = e.se > 0.0 ? e.coefficient / e.se : 0.0;
    e.n_at_risk = rows.size();
    report.entries[c] = e;
  });
  for (const auto& e : report.entries) report.max_abs_z = std::max(report.max_abs_z, std::abs(e.z));
  report.pass = report.max_abs_z < 3.0;
  return report;
}

}  // namespace ptgf
