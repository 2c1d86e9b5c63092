#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptgf/error.hpp"
#include "ptgf/glm.hpp"
#include "ptgf/io.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/rng.hpp"

namespace ptgf::oracle {

/**
 * Small discrete DGP with one covariate W, binary A, latent binary U.
 *
 * Histories are indexed in mixed radix: w̄_t -> Σ_m idx(w_m) Π_{l<m} |W_l|,
 * ā_t -> Σ_m a_m 2^m. Table keys:
 *   w_prob[t][u + 2 (w̄_{t-1} + W_{t-1} ā_{t-1})]  -> probabilities over support[t]
 *   a_prob[t][u + 2 (w̄_t + W_t ā_{t-1})]          -> P(A_t = 1)
 *   y_mean[t][w̄_t + W_t ā_t]                       -> E(Y_t | w̄_t, ā_t, U = 0)
 * where W_t = Π_{l<=t} |W_l| is the number of histories through t.
 * Y_t = y_mean + theta[t] U + N(0, 1).
 */
struct DiscreteDgp {
  std::string name;
  int tau = 1;
  std::vector<std::vector<double>> support;
  double p_u = 0.0;
  std::vector<double> theta;
  std::vector<std::vector<std::vector<double>>> w_prob;
  std::vector<std::vector<double>> a_prob;
  std::vector<std::vector<double>> y_mean;

  int n_times() const { return tau + 1; }

  /// Number of covariate histories w̄_t.
  std::size_t n_hist(int t) const {
    std::size_t h = 1;
    for (int m = 0; m <= t; ++m) h *= support[static_cast<std::size_t>(m)].size();
    return h;
  }

  void validate() const {
    require(tau >= 0 && tau <= 3, ErrorCode::InvalidSpec, "oracle DGPs need tau <= 3");
    const auto T = static_cast<std::size_t>(tau) + 1;
    require(support.size() == T && theta.size() == T && w_prob.size() == T && a_prob.size() == T && y_mean.size() == T,
            ErrorCode::DimensionMismatch, name + ": every table needs tau + 1 entries");
    require(p_u >= 0.0 && p_u <= 1.0, ErrorCode::InvalidSpec, name + ": p_u outside [0, 1]");
    for (int t = 0; t < n_times(); ++t) {
      const auto s = static_cast<std::size_t>(t);
      require(!support[s].empty() && support[s].size() <= 3, ErrorCode::InvalidSpec, name + ": support size must be 1..3");
      const std::size_t prev = t == 0 ? 1 : n_hist(t - 1);
      const std::size_t a_prev = std::size_t{1} << s;
      require(w_prob[s].size() == 2 * prev * a_prev, ErrorCode::DimensionMismatch, name + ": w_prob size at t=" + std::to_string(t));
      for (const auto& row : w_prob[s]) {
        require(row.size() == support[s].size(), ErrorCode::DimensionMismatch, name + ": w_prob row width");
        double sum = 0.0;
        for (double p : row) {
          require(p >= 0.0, ErrorCode::InvalidSpec, name + ": negative probability");
          sum += p;
        }
        require(std::abs(sum - 1.0) < 1e-12, ErrorCode::InvalidSpec, name + ": w_prob row does not sum to 1");
      }
      require(a_prob[s].size() == 2 * n_hist(t) * a_prev, ErrorCode::DimensionMismatch, name + ": a_prob size");
      for (double p : a_prob[s]) require(p >= 0.0 && p <= 1.0, ErrorCode::InvalidSpec, name + ": a_prob outside [0, 1]");
      require(y_mean[s].size() == n_hist(t) * 2 * a_prev, ErrorCode::DimensionMismatch, name + ": y_mean size");
    }
  }
};

namespace detail {

/// A covariate/treatment history under construction, with its mixed-radix indices.
struct Path {
  std::vector<int> w_idx;
  std::vector<double> w_val;
  std::vector<int> a;

  std::size_t w_key(const DiscreteDgp& d, int through) const {
    std::size_t key = 0, radix = 1;
    for (int m = 0; m <= through; ++m) {
      key += static_cast<std::size_t>(w_idx[static_cast<std::size_t>(m)]) * radix;
      radix *= d.support[static_cast<std::size_t>(m)].size();
    }
    return key;
  }
  std::size_t a_key(int through) const {
    std::size_t key = 0;
    for (int m = 0; m <= through; ++m) key += static_cast<std::size_t>(a[static_cast<std::size_t>(m)]) << m;
    return key;
  }

  double p_w(const DiscreteDgp& d, int t, int u) const {
    const std::size_t prev = t == 0 ? 0 : w_key(d, t - 1);
    const std::size_t radix = t == 0 ? 1 : d.n_hist(t - 1);
    const std::size_t key = static_cast<std::size_t>(u) + 2 * (prev + radix * (t == 0 ? 0 : a_key(t - 1)));
    return d.w_prob[static_cast<std::size_t>(t)][key][static_cast<std::size_t>(w_idx[static_cast<std::size_t>(t)])];
  }
  double p_a1(const DiscreteDgp& d, int t, int u) const {
    const std::size_t key =
        static_cast<std::size_t>(u) + 2 * (w_key(d, t) + d.n_hist(t) * (t == 0 ? 0 : a_key(t - 1)));
    return d.a_prob[static_cast<std::size_t>(t)][key];
  }
  double y(const DiscreteDgp& d, int t, int u) const {
    const std::size_t key = w_key(d, t) + d.n_hist(t) * a_key(t);
    return d.y_mean[static_cast<std::size_t>(t)][key] + d.theta[static_cast<std::size_t>(t)] * u;
  }

  int decide(const Regime& regime, int t) const {
    static const std::vector<std::string> names{"W"};
    return regime.decide(HistoryView(w_val.data(), a.data(), 1, &names, t));
  }
};

/// Visits every covariate path w̄_k with regime treatments filled in.
template <class Fn>
void for_each_regime_path(const DiscreteDgp& d, const Regime& regime, int k, Fn&& fn) {
  Path p;
  p.w_idx.assign(static_cast<std::size_t>(k) + 1, 0);
  p.w_val.assign(static_cast<std::size_t>(k) + 1, 0.0);
  p.a.assign(static_cast<std::size_t>(k) + 1, 0);
  std::function<void(int)> rec = [&](int m) {
    if (m > k) {
      fn(p);
      return;
    }
    const auto s = static_cast<std::size_t>(m);
    for (std::size_t v = 0; v < d.support[s].size(); ++v) {
      p.w_idx[s] = static_cast<int>(v);
      p.w_val[s] = d.support[s][v];
      p.a[s] = p.decide(regime, m);
      rec(m + 1);
    }
  };
  rec(0);
}

inline std::string path_label(const Path& p, int k) {
  std::string s = "w=(";
  for (int m = 0; m <= k; ++m) s += (m ? "," : "") + io::fmt(p.w_val[static_cast<std::size_t>(m)]);
  return s + ")";
}

/**
 * Observational g-formula pieces along one regime path through k:
 * the product of f(w_m | w̄_{m-1}, ā*_{m-1}) and E(Y_j | w̄_k, ā*_k) for
 * j = k-1 and k. Returns weight 0 when the path has probability 0.
 */
struct PathTerms {
  double weight = 0.0;
  double ey_k = 0.0, ey_km1 = 0.0;
};

inline PathTerms path_terms(const DiscreteDgp& d, const Path& p, int k) {
  double pu[2] = {1.0 - d.p_u, d.p_u};
  double H[2] = {pu[0], pu[1]};  // P(u, w̄_{m-1}, Ā_{m-1} = ā*_{m-1})
  PathTerms out;
  out.weight = 1.0;
  for (int m = 0; m <= k; ++m) {
    const double denom = H[0] + H[1];
    if (denom <= 0.0) fail(ErrorCode::PositivityViolation, path_label(p, k) + " unreachable under adherence at m=" + std::to_string(m));
    double G[2];
    for (int u = 0; u < 2; ++u) G[u] = H[u] * p.p_w(d, m, u);
    out.weight *= (G[0] + G[1]) / denom;
    if (out.weight == 0.0) return out;
    for (int u = 0; u < 2; ++u) {
      const double p1 = p.p_a1(d, m, u);
      H[u] = G[u] * (p.a[static_cast<std::size_t>(m)] == 1 ? p1 : 1.0 - p1);
    }
  }
  const double z = H[0] + H[1];
  if (z <= 0.0) fail(ErrorCode::PositivityViolation, path_label(p, k) + ": nobody follows the regime through k=" + std::to_string(k));
  for (int u = 0; u < 2; ++u) {
    out.ey_k += H[u] * p.y(d, k, u) / z;
    if (k > 0) out.ey_km1 += H[u] * p.y(d, k - 1, u) / z;
  }
  return out;
}

}  // namespace detail

/// φ_{j,k} by exhaustive summation over covariate histories.
inline double exact_phi(const DiscreteDgp& d, const Regime& regime, int j, int k) {
  d.validate();
  require(k >= 0 && k <= d.tau && (j == k || j == k - 1), ErrorCode::InvalidSpec, "need 0 <= k <= tau and j in {k-1, k}");
  double total = 0.0;
  detail::for_each_regime_path(d, regime, k, [&](const detail::Path& p) {
    const auto terms = detail::path_terms(d, p, k);
    if (terms.weight > 0.0) total += terms.weight * (j == k ? terms.ey_k : terms.ey_km1);
  });
  return total;
}

/// ψ_t = E(Y_0) + Σ_k Σ_paths E(Y_k - Y_{k-1} | w̄_k, ā*_k) Π dF, summed path by path.
inline double exact_psi(const DiscreteDgp& d, const Regime& regime, int t) {
  d.validate();
  require(t >= 0 && t <= d.tau, ErrorCode::InvalidSpec, "t outside 0..tau");
  double psi = exact_phi(d, regime, 0, 0);
  for (int k = 1; k <= t; ++k) {
    detail::for_each_regime_path(d, regime, k, [&](const detail::Path& p) {
      const auto terms = detail::path_terms(d, p, k);
      if (terms.weight > 0.0) psi += terms.weight * (terms.ey_k - terms.ey_km1);
    });
  }
  return psi;
}

/// E{Y_t(ā*)} by enumerating the structural model with A forced to the regime.
inline double exact_mu(const DiscreteDgp& d, const Regime& regime, int t) {
  d.validate();
  require(t >= 0 && t <= d.tau, ErrorCode::InvalidSpec, "t outside 0..tau");
  double mu = 0.0;
  detail::for_each_regime_path(d, regime, t, [&](const detail::Path& p) {
    for (int u = 0; u < 2; ++u) {
      double w = u == 1 ? d.p_u : 1.0 - d.p_u;
      for (int m = 0; m <= t && w > 0.0; ++m) w *= p.p_w(d, m, u);
      mu += w * p.y(d, t, u);
    }
  });
  return mu;
}

/// Observed-law draw: n units, covariate "W", unit weights 1.
inline LongPanel sample_panel(const DiscreteDgp& d, std::size_t n, std::uint64_t seed) {
  d.validate();
  const int T = d.n_times();
  std::vector<std::string> ids(n);
  std::vector<double> w, y;
  std::vector<int> a;
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = std::to_string(i);
    CounterRng rng(seed, i);
    const int u = rng.uniform() < d.p_u ? 1 : 0;
    detail::Path p;
    for (int t = 0; t < T; ++t) {
      p.w_idx.push_back(0);
      p.w_val.push_back(0.0);
      p.a.push_back(0);
      const auto s = static_cast<std::size_t>(t);
      double r = rng.uniform(), acc = 0.0;
      std::size_t v = 0;
      for (; v + 1 < d.support[s].size(); ++v) {
        p.w_idx[s] = static_cast<int>(v);
        acc += p.p_w(d, t, u);
        if (r < acc) break;
      }
      p.w_idx[s] = static_cast<int>(v);
      p.w_val[s] = d.support[s][v];
      p.a[s] = rng.uniform() < p.p_a1(d, t, u) ? 1 : 0;
      w.push_back(p.w_val[s]);
      a.push_back(p.a[s]);
      y.push_back(p.y(d, t, u) + rng.normal());
    }
  }
  return LongPanel(std::move(ids), T, {"W"}, std::move(w), std::move(a), std::move(y));
}

/**
 * Plug-in g-formula on the empirical distribution of a panel whose
 * covariates take finitely many values:
 * φ̂_{j,k} = Σ_{w̄_k} Ê(Y_j | w̄_k, adherent through k) Π_m P̂(w_m | w̄_{m-1}, adherent through m-1),
 * with unit effective weights. Works on histories of all covariates jointly.
 */
inline double plugin_phi(const LongPanel& panel, const Regime& regime, int j, int k) {
  require(k >= 0 && k < panel.n_times() && (j == k || j == k - 1), ErrorCode::InvalidSpec, "bad (j, k)");
  const AdherenceMatrix adh = adherence(panel, regime);
  using Key = std::vector<double>;
  auto key = [&](std::size_t i, int through) {
    Key kk;
    for (int m = 0; m <= through; ++m)
      for (std::size_t c = 0; c < panel.n_covariates(); ++c) kk.push_back(panel.W(i, m, c));
    return kk;
  };
  // N[m][w̄_m]: weight of units adherent through m-1 with history w̄_m; D[m][w̄_{m-1}] likewise for w̄_{m-1}
  std::vector<std::map<Key, double>> N(static_cast<std::size_t>(k) + 1), D(static_cast<std::size_t>(k) + 1);
  std::map<Key, std::pair<double, double>> ey;  // Σ e·Y_j and Σ e among units adherent through k
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const double e = panel.effective_weight(i);
    for (int m = 0; m <= k; ++m) {
      if (!adh.adherent(i, m - 1)) break;
      N[static_cast<std::size_t>(m)][key(i, m)] += e;
      D[static_cast<std::size_t>(m)][m == 0 ? Key{} : key(i, m - 1)] += e;
    }
    if (adh.adherent(i, k)) {
      auto& cell = ey[key(i, k)];
      cell.first += e * panel.response(i, j);
      cell.second += e;
    }
  }
  const std::size_t width = panel.n_covariates();
  double total = 0.0;
  for (const auto& [wk, nk] : N[static_cast<std::size_t>(k)]) {
    (void)nk;
    auto it = ey.find(wk);
    require(it != ey.end(), ErrorCode::PositivityViolation, "no adherent unit with an observed history at k=" + std::to_string(k));
    double weight = 1.0;
    for (int m = 0; m <= k; ++m) {
      const Key wm(wk.begin(), wk.begin() + static_cast<std::ptrdiff_t>(width * static_cast<std::size_t>(m + 1)));
      const Key wm1(wk.begin(), wk.begin() + static_cast<std::ptrdiff_t>(width * static_cast<std::size_t>(m)));
      weight *= N[static_cast<std::size_t>(m)].at(wm) / D[static_cast<std::size_t>(m)].at(wm1);
    }
    total += weight * it->second.first / it->second.second;
  }
  return total;
}

inline double plugin_psi(const LongPanel& panel, const Regime& regime, int t) {
  double psi = plugin_phi(panel, regime, 0, 0);
  for (int k = 1; k <= t; ++k) psi += plugin_phi(panel, regime, k, k) - plugin_phi(panel, regime, k - 1, k);
  return psi;
}

/**
 * Saturated history model in covariate `name`: one column per subset of
 * lags {0..max_lag}, the product of W_{t-l} over the subset (the empty
 * subset is the intercept). Saturated for binary W.
 */
inline ModelSpec saturated_spec(const std::string& name, int max_lag, Family family) {
  ModelSpec s;
  s.family = family;
  s.link = family == Family::Gaussian ? Link::Identity : Link::Logit;
  const int L = max_lag + 1;
  for (unsigned mask = 0; mask < (1u << L); ++mask) {
    std::optional<Term> t;
    for (int l = 0; l < L; ++l) {
      if (!(mask & (1u << l))) continue;
      Term c = Term::covariate(name, l);
      t = t ? Term::interaction(*t, c) : c;
    }
    s.terms.push_back(t ? *t : Term::intercept());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

struct Fixture {
  DiscreteDgp dgp;
  nlohmann::json regime_json;
  bool conforming = true;
  std::string description;

  Regime regime() const { return io::parse_regime(regime_json); }
};

inline Fixture fixture_from_json(const nlohmann::json& j) {
  Fixture f;
  try {
    auto& d = f.dgp;
    d.name = j.at("name").get<std::string>();
    d.tau = j.at("tau").get<int>();
    d.support = j.at("support").get<std::vector<std::vector<double>>>();
    d.p_u = j.at("p_u").get<double>();
    d.theta = j.at("theta").get<std::vector<double>>();
    d.w_prob = j.at("w_prob").get<std::vector<std::vector<std::vector<double>>>>();
    d.a_prob = j.at("a_prob").get<std::vector<std::vector<double>>>();
    d.y_mean = j.at("y_mean").get<std::vector<std::vector<double>>>();
    f.regime_json = j.at("regime");
    f.conforming = j.at("conforming").get<bool>();
    f.description = j.value("description", "");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("oracle fixture: ") + e.what());
  }
  f.dgp.validate();
  return f;
}

inline Fixture load_fixture(const std::string& path) { return fixture_from_json(io::read_json_file(path)); }

}  // namespace ptgf::oracle
