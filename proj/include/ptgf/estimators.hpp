#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ptgf/error.hpp"
#include "ptgf/glm.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/stats.hpp"

namespace ptgf {

enum class EstimatorKind { IPTW, ICE, TMLE };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::IPTW: return "iptw";
    case EstimatorKind::ICE: return "ice";
    case EstimatorKind::TMLE: return "tmle";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "iptw") return EstimatorKind::IPTW;
  if (s == "ice") return EstimatorKind::ICE;
  if (s == "tmle") return EstimatorKind::TMLE;
  fail(ErrorCode::InvalidSpec, "unknown estimator '" + s + "'");
}

struct TreatmentSpecs {
  ModelSpec numerator{{Term::intercept()}, Family::Binomial, Link::Logit};
  ModelSpec denominator{{Term::intercept()}, Family::Binomial, Link::Logit};
  bool pooled = false;
};

/// Outcome regressions for the nested ICE/TMLE steps.
struct OutcomeSpecs {
  ModelSpec nested{{Term::intercept()}, Family::Gaussian, Link::Identity};
  std::optional<ModelSpec> first_step;  ///< used at m == k when set

  const ModelSpec& at(int /*j*/, int k, int m) const { return (m == k && first_step) ? *first_step : nested; }
};

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::ICE;
  TreatmentSpecs treatment;
  OutcomeSpecs outcome;
  std::optional<std::pair<double, double>> bounds;  ///< TMLE (L, U)
  double weight_cap = 100.0;                        ///< ExtremeWeights warning level
  std::optional<double> truncation;                 ///< symmetric percentile, e.g. 0.01
  double positivity_epsilon = 0.01;
};

/// Fitted treatment models and their predictions P(A_k = 1 | history) for every unit.
struct FittedTreatmentModels {
  TreatmentSpecs specs;
  std::vector<FitResult> numerator;    ///< index k = 1..tau, or a single pooled fit
  std::vector<FitResult> denominator;
  Matrix numerator_p1;                 ///< n_units x n_times, column 0 unused
  Matrix denominator_p1;
  std::vector<std::string> warnings;

  bool pooled() const noexcept { return specs.pooled; }

  /// Fitted probability of the observed or regime treatment value a at time k.
  static double prob_of(const Matrix& p1, std::size_t i, int k, int a) {
    const double p = p1(static_cast<Eigen::Index>(i), k);
    return a == 1 ? p : 1.0 - p;
  }
};

namespace detail {

inline std::string spec_key(const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << static_cast<int>(spec.family) << static_cast<int>(spec.link);
  std::function<void(const Term&)> put = [&](const Term& t) {
    os << '|' << static_cast<int>(t.kind) << ',' << t.name << ',' << t.lag << ',' << t.exponent << ',' << t.df;
    for (const auto& f : t.factors) {
      os << '(';
      put(f);
      os << ')';
    }
  };
  for (const auto& t : spec.terms) put(t);
  return os.str();
}

inline Vector gather(std::span<const double> v, std::span<const std::size_t> rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Eigen::Index>(r)] = v[rows[r]];
  return out;
}

}  // namespace detail

/**
 * Per-estimation cache: adherence, risk sets, design matrices and Gaussian
 * factorizations. Designs at step m are shared by every φ cell, so the
 * nested regressions of a whole trajectory reuse a handful of QR
 * factorizations. Not thread-safe; build one per estimation.
 */
class EstimationContext {
 public:
  EstimationContext(const LongPanel& panel, const Regime& regime)
      : panel_(&panel), regime_name_(regime.name()), adh_(adherence(panel, regime)) {
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
      require(adh_.adherent(i, 0), ErrorCode::BaselineDeviation,
              "unit " + panel.unit_id(i) + " deviates from the regime at t=0");
    }
    rows_.resize(static_cast<std::size_t>(panel.n_times()) + 1);
    for (int k = -1; k < panel.n_times(); ++k) rows_[static_cast<std::size_t>(k + 1)] = adh_.adherent_units(k);
    weight_.resize(panel.n_units());
    for (std::size_t i = 0; i < panel.n_units(); ++i) weight_[i] = panel.effective_weight(i);
    average_ = weight_;
  }

  const LongPanel& panel() const noexcept { return *panel_; }
  const std::string& regime_name() const noexcept { return regime_name_; }
  const AdherenceMatrix& adh() const noexcept { return adh_; }
  std::span<const double> weights() const noexcept { return weight_; }
  /// Weights of the final averages over units: effective weight times an optional per-unit factor.
  std::span<const double> average_weights() const noexcept { return average_; }

  /// Per-unit factor on the final averages; empty restores the effective weights.
  void set_average_factor(std::span<const double> factor) {
    average_ = weight_;
    if (factor.empty()) return;
    require(factor.size() == weight_.size(), ErrorCode::DimensionMismatch, "average factor length");
    for (std::size_t i = 0; i < average_.size(); ++i) average_[i] *= factor[i];
  }

  /// Units adherent through k; k = -1 gives every unit.
  const std::vector<std::size_t>& adherent_rows(int k) const { return rows_.at(static_cast<std::size_t>(k + 1)); }

  /// Design of `spec` at `time` over the units adherent through `through`.
  const Matrix& design(const ModelSpec& spec, int time, int through) {
    auto key = std::make_tuple(detail::spec_key(spec), time, through);
    auto it = designs_.find(key);
    if (it != designs_.end()) return it->second;
    return designs_.emplace(key, build_design(*panel_, spec, time, adh_, adherent_rows(through))).first->second;
  }

  /// Gaussian WLS factorization of the step-m design over units adherent through m.
  const WeightedLeastSquares& solver(const ModelSpec& spec, int m) {
    auto key = std::make_pair(detail::spec_key(spec), m);
    auto it = solvers_.find(key);
    if (it != solvers_.end()) return *it->second;
    const Matrix& X = design(spec, m, m);
    const Vector w = detail::gather(weight_, adherent_rows(m));
    return *solvers_.emplace(key, std::make_unique<WeightedLeastSquares>(X, w)).first->second;
  }

  double weighted_mean_all(std::span<const double> v) const { return stats::weighted_mean(v, average_); }

 private:
  const LongPanel* panel_;
  std::string regime_name_;
  AdherenceMatrix adh_;
  std::vector<std::vector<std::size_t>> rows_;
  std::vector<double> weight_;
  std::vector<double> average_;
  std::map<std::tuple<std::string, int, int>, Matrix> designs_;
  std::map<std::pair<std::string, int>, std::unique_ptr<WeightedLeastSquares>> solvers_;
};

// ---------------------------------------------------------------------------
// Treatment models
// ---------------------------------------------------------------------------

namespace detail {

inline void predict_treatment_column(const LongPanel& panel, const AdherenceMatrix& adh, const ModelSpec& spec,
                                     const FitResult& fit, int k, Matrix& p1) {
  std::vector<std::size_t> all(panel.n_units());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Matrix X = build_design(panel, spec, k, adh, all);
  p1.col(k) = predict(fit, X, Vector::Zero(X.rows()));
}

}  // namespace detail

/**
 * Fits f(a_k | ā_{k-1}) and f(a_k | ā_{k-1}, w̄_k) among units adherent
 * through k-1, one logistic model per k or one pooled over k = 1..tau.
 * Fits are weighted by unit_weight.
 */
inline FittedTreatmentModels fit_treatment_models(const LongPanel& panel, const AdherenceMatrix& adh,
                                                  const TreatmentSpecs& specs) {
  specs.numerator.validate();
  specs.denominator.validate();
  require(specs.numerator.family != Family::Gaussian && specs.denominator.family != Family::Gaussian,
          ErrorCode::InvalidSpec, "treatment models must be binomial/logit");
  const int tau = panel.tau();
  FittedTreatmentModels out;
  out.specs = specs;
  const auto n = static_cast<Eigen::Index>(panel.n_units());
  out.numerator_p1 = Matrix::Constant(n, panel.n_times(), 1.0);
  out.denominator_p1 = Matrix::Constant(n, panel.n_times(), 1.0);
  if (tau < 1) return out;

  auto risk_set = [&](int k) {
    std::vector<std::size_t> rows = adh.adherent_units(k - 1);
    require(rows.size() >= 2, ErrorCode::InsufficientAdherent,
            "fewer than 2 units adherent through time " + std::to_string(k - 1));
    return rows;
  };

  auto collect = [&](std::vector<FitResult>& fits) {
    for (const auto& f : fits)
      for (const auto& w : f.warnings) out.warnings.push_back(w);
  };

  if (!specs.pooled) {
    for (const ModelSpec* spec : {&specs.numerator, &specs.denominator}) {
      auto& fits = spec == &specs.numerator ? out.numerator : out.denominator;
      auto& p1 = spec == &specs.numerator ? out.numerator_p1 : out.denominator_p1;
      fits.resize(static_cast<std::size_t>(tau) + 1);
      for (int k = 1; k <= tau; ++k) {
        const ModelSpec s = spec->truncated_to(k);
        const auto rows = risk_set(k);
        const Matrix X = build_design(panel, s, k, adh, rows);
        Vector y(X.rows()), w(X.rows());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          y[static_cast<Eigen::Index>(r)] = panel.A(rows[r], k);
          w[static_cast<Eigen::Index>(r)] = panel.unit_weight(rows[r]);
        }
        fits[static_cast<std::size_t>(k)] = fit_glm(X, y, w, Vector::Zero(X.rows()), s.family, s.link);
        detail::predict_treatment_column(panel, adh, s, fits[static_cast<std::size_t>(k)], k, p1);
      }
      collect(fits);
    }
    return out;
  }

  for (const ModelSpec* spec : {&specs.numerator, &specs.denominator}) {
    require(spec->max_lag() <= 1, ErrorCode::InvalidLag, "pooled treatment models allow lags up to 1");
    std::vector<Matrix> blocks;
    std::vector<double> ys, ws;
    Eigen::Index total = 0;
    for (int k = 1; k <= tau; ++k) {
      const auto rows = risk_set(k);
      blocks.push_back(build_design(panel, *spec, k, adh, rows));
      total += blocks.back().rows();
      for (std::size_t i : rows) {
        ys.push_back(panel.A(i, k));
        ws.push_back(panel.unit_weight(i));
      }
    }
    Matrix X(total, static_cast<Eigen::Index>(spec->n_columns()));
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
      X.middleRows(r, b.rows()) = b;
      r += b.rows();
    }
    const Vector y = Eigen::Map<const Vector>(ys.data(), total);
    const Vector w = Eigen::Map<const Vector>(ws.data(), total);
    auto& fits = spec == &specs.numerator ? out.numerator : out.denominator;
    auto& p1 = spec == &specs.numerator ? out.numerator_p1 : out.denominator_p1;
    fits = {fit_glm(X, y, w, Vector::Zero(total), spec->family, spec->link)};
    for (int k = 1; k <= tau; ++k) detail::predict_treatment_column(panel, adh, *spec, fits[0], k, p1);
    collect(fits);
  }
  return out;
}

inline FittedTreatmentModels fit_treatment_models(const LongPanel& panel, const Regime& regime,
                                                  const ModelSpec& num_spec, const ModelSpec& den_spec, bool pooled) {
  validate_staggered(panel, regime);
  return fit_treatment_models(panel, adherence(panel, regime), TreatmentSpecs{num_spec, den_spec, pooled});
}

struct PositivityFlag {
  int time = 0;
  std::string unit;
  double fitted_prob = 0.0;
};

/// Units at risk at k whose fitted probability of following the regime is below epsilon.
inline std::vector<PositivityFlag> positivity_probe(const LongPanel& panel, const AdherenceMatrix& adh,
                                                    const FittedTreatmentModels& fits, double epsilon) {
  std::vector<PositivityFlag> out;
  for (int k = 1; k < panel.n_times(); ++k) {
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
      if (!adh.adherent(i, k - 1)) continue;
      const double p = FittedTreatmentModels::prob_of(fits.denominator_p1, i, k, adh.decision(i, k));
      if (p < epsilon) out.push_back({k, panel.unit_id(i), p});
    }
  }
  return out;
}

inline std::vector<PositivityFlag> positivity_probe(const LongPanel& panel, const Regime& regime,
                                                    const FittedTreatmentModels& fits, double epsilon = 0.01) {
  return positivity_probe(panel, adherence(panel, regime), fits, epsilon);
}

namespace detail {

/// Clips positive entries to their [p, 1 - p] percentiles.
inline void truncate_weights(std::vector<double>& w, std::span<const std::size_t> rows, double p) {
  std::vector<double> vals;
  for (std::size_t i : rows) vals.push_back(w[i]);
  if (vals.size() < 2) return;
  std::sort(vals.begin(), vals.end());
  const double lo = quantile_sorted(vals, p), hi = quantile_sorted(vals, 1.0 - p);
  for (std::size_t i : rows) w[i] = std::clamp(w[i], lo, hi);
}

}  // namespace detail

namespace detail {

/// True when every unit adherent through k followed the same decisions at 1..k.
inline bool shared_decision_path(const AdherenceMatrix& adh, int k) {
  const auto rows = adh.adherent_units(k);
  for (int m = 1; m <= k; ++m)
    for (std::size_t i : rows)
      if (adh.decision(i, m) != adh.decision(rows.front(), m)) return false;
  return true;
}

}  // namespace detail

/**
 * Stabilized weights π_k = Π f̂(a_m | ā_{m-1}) / Π f̂(a_m | ā_{m-1}, w̄_m)
 * over the times m <= k at which the unit was still at risk (adherent
 * through m-1), evaluated at the observed treatments. π_0 = 1.
 * The numerator is 1 when units adherent through k followed different
 * decision paths (dynamic rules): a numerator free of w̄ then no longer
 * cancels in the normalized mean.
 */
inline std::vector<double> compute_iptw_weights(const LongPanel& panel, const AdherenceMatrix& adh,
                                                const FittedTreatmentModels& fits, int k) {
  require(k >= 0 && k < panel.n_times(), ErrorCode::InvalidLag, "weight time outside the panel");
  const bool stabilize = detail::shared_decision_path(adh, k);
  std::vector<double> pi(panel.n_units(), 1.0);
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    for (int m = 1; m <= k; ++m) {
      if (!adh.adherent(i, m - 1)) break;
      const int a = panel.A(i, m);
      const double den = FittedTreatmentModels::prob_of(fits.denominator_p1, i, m, a);
      if (den < 1e-12) {
        fail(ErrorCode::ZeroDenominator, "unit " + panel.unit_id(i) + " at time " + std::to_string(m));
      }
      pi[i] *= (stabilize ? FittedTreatmentModels::prob_of(fits.numerator_p1, i, m, a) : 1.0) / den;
    }
  }
  return pi;
}

inline std::vector<double> compute_iptw_weights(const LongPanel& panel, const Regime& regime,
                                                const FittedTreatmentModels& fits, int k) {
  return compute_iptw_weights(panel, adherence(panel, regime), fits, k);
}

// ---------------------------------------------------------------------------
// φ_{j,k} estimators
// ---------------------------------------------------------------------------

/**
 * IPTW: the π_k-weighted regression of Y_j on I(Ā_k = ā*_k) evaluated at
 * adherence, i.e. the π_k × weight mean of the response among units
 * adherent through k.
 */
inline double estimate_phi_iptw(EstimationContext& ctx, const FittedTreatmentModels* fits, int j, int k,
                                std::span<const double> response, std::optional<double> truncation = {}) {
  require(j == k || j == k - 1, ErrorCode::InvalidSpec, "j must be k or k-1");
  if (k == 0) return ctx.weighted_mean_all(response);
  require(fits != nullptr, ErrorCode::InvalidSpec, "IPTW needs fitted treatment models");
  const auto& rows = ctx.adherent_rows(k);
  require(!rows.empty(), ErrorCode::NoAdherentUnits, "no units adherent through time " + std::to_string(k));
  std::vector<double> pi = compute_iptw_weights(ctx.panel(), ctx.adh(), *fits, k);
  if (truncation) detail::truncate_weights(pi, rows, *truncation);
  double num = 0.0, den = 0.0;
  for (std::size_t i : rows) {
    const double w = pi[i] * ctx.average_weights()[i];
    num += w * response[i];
    den += w;
  }
  return num / den;
}

namespace detail {

/// One nested regression step: fit on units adherent through m, predict for units adherent through m-1.
inline Vector outcome_step(EstimationContext& ctx, const ModelSpec& full_spec, int m, const Vector& response_fit) {
  const ModelSpec spec = full_spec.truncated_to(m);
  const auto& fit_rows = ctx.adherent_rows(m);
  require(!fit_rows.empty(), ErrorCode::NoAdherentUnits, "no units adherent through time " + std::to_string(m));
  const Matrix& Xpred = ctx.design(spec, m, m - 1);
  if (spec.family == Family::Gaussian) {
    const Vector beta = ctx.solver(spec, m).solve(response_fit);
    return Xpred * beta;
  }
  const Matrix& Xfit = ctx.design(spec, m, m);
  const Vector w = gather(ctx.weights(), fit_rows);
  const FitResult fit = fit_glm(Xfit, response_fit, w, Vector::Zero(Xfit.rows()), spec.family, spec.link);
  return predict(fit, Xpred, Vector::Zero(Xpred.rows()));
}

/// Restricts values on the rows adherent through m-1 to the rows adherent through m.
inline Vector restrict_rows(const EstimationContext& ctx, const Vector& on_prev, int m) {
  const auto& prev = ctx.adherent_rows(m - 1);
  const auto& cur = ctx.adherent_rows(m);
  Vector out(static_cast<Eigen::Index>(cur.size()));
  std::size_t p = 0;
  for (std::size_t r = 0; r < cur.size(); ++r) {
    while (prev[p] != cur[r]) ++p;
    out[static_cast<Eigen::Index>(r)] = on_prev[static_cast<Eigen::Index>(p)];
  }
  return out;
}

}  // namespace detail

/**
 * ICE: Q^{k+1} = Y_j; for m = k..0 regress Q^{m+1} on the step-m design
 * among units adherent through m and predict for units adherent through
 * m-1. Returns the weighted mean of Q^0 over all units.
 */
inline double estimate_phi_ice(EstimationContext& ctx, const OutcomeSpecs& specs, int j, int k,
                               std::span<const double> response) {
  require(j == k || j == k - 1, ErrorCode::InvalidSpec, "j must be k or k-1");
  require(k >= 0 && k < ctx.panel().n_times(), ErrorCode::InvalidLag, "k outside the panel");
  Vector q = detail::gather(response, ctx.adherent_rows(k));
  for (int m = k; m >= 0; --m) {
    q = detail::outcome_step(ctx, specs.at(j, k, m), m, q);  // now on units adherent through m-1
  }
  // q now lives on every unit (adherent through -1)
  const auto& all = ctx.adherent_rows(-1);
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < all.size(); ++r) {
    num += ctx.average_weights()[all[r]] * q[static_cast<Eigen::Index>(r)];
    den += ctx.average_weights()[all[r]];
  }
  return num / den;
}

struct FluctuationStep {
  int m = 0;
  double epsilon = 0.0;
  double score = 0.0;        ///< weighted mean of (scaled pseudo-outcome - updated prediction)
  double max_weight = 0.0;
};

struct TmleCell {
  double value = 0.0;
  std::pair<double, double> bounds;
  std::vector<FluctuationStep> steps;  ///< in order m = k..0
  std::vector<std::string> warnings;
};

/// Default TMLE bounds: (0, 1) for binomial-family outcome models, else the observed range padded by 5%.
inline std::pair<double, double> default_bounds(std::span<const double> response, std::span<const std::size_t> rows,
                                                const ModelSpec& spec) {
  if (spec.family != Family::Gaussian) return {0.0, 1.0};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i : rows) {
    lo = std::min(lo, response[i]);
    hi = std::max(hi, response[i]);
  }
  const double pad = hi > lo ? 0.05 * (hi - lo) : std::max(1e-8, 0.05 * std::abs(hi));
  return {lo - pad, hi + pad};
}

/**
 * TMLE of φ_{j,k}: ICE with, at each step, an intercept-only logit
 * fluctuation of the (bounds-scaled) initial prediction. The fluctuation
 * uses the incoming pseudo-outcome as response and weights
 * I(Ā_m = ā*_m) / ĝ_m × weight, where ĝ_m is the cumulative fitted
 * probability of following the regime through m.
 */
inline TmleCell estimate_phi_tmle(EstimationContext& ctx, const FittedTreatmentModels& fits, const OutcomeSpecs& specs,
                                  int j, int k, std::span<const double> response,
                                  std::optional<std::pair<double, double>> bounds = {}, double weight_cap = 100.0,
                                  std::optional<double> truncation = {}) {
  require(j == k || j == k - 1, ErrorCode::InvalidSpec, "j must be k or k-1");
  require(k >= 0 && k < ctx.panel().n_times(), ErrorCode::InvalidLag, "k outside the panel");
  TmleCell cell;
  const auto& top_rows = ctx.adherent_rows(k);
  require(!top_rows.empty(), ErrorCode::NoAdherentUnits, "no units adherent through time " + std::to_string(k));
  cell.bounds = bounds ? *bounds : default_bounds(response, top_rows, specs.at(j, k, k));
  const auto [L, U] = cell.bounds;
  require(U > L, ErrorCode::InvalidSpec, "TMLE bounds must satisfy L < U");

  Vector q(static_cast<Eigen::Index>(top_rows.size()));
  for (std::size_t r = 0; r < top_rows.size(); ++r) {
    const double v = (response[top_rows[r]] - L) / (U - L);
    require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidSpec, "response outside the TMLE bounds");
    q[static_cast<Eigen::Index>(r)] = v;
  }

  // cumulative ĝ_m for every unit, built forward once
  const std::size_t n = ctx.panel().n_units();
  std::vector<std::vector<double>> g(static_cast<std::size_t>(k) + 1, std::vector<double>(n, 1.0));
  for (int m = 1; m <= k; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = FittedTreatmentModels::prob_of(fits.denominator_p1, i, m, ctx.adh().decision(i, m));
      g[static_cast<std::size_t>(m)][i] = g[static_cast<std::size_t>(m) - 1][i] * p;
    }
  }

  static constexpr double clamp_eps = 1e-6;
  for (int m = k; m >= 0; --m) {
    const auto& fit_rows = ctx.adherent_rows(m);
    Vector qhat = detail::outcome_step(ctx, specs.at(j, k, m), m, q);
    qhat = qhat.unaryExpr([](double v) { return std::clamp(v, clamp_eps, 1.0 - clamp_eps); });
    const Vector offset_pred = qhat.unaryExpr([](double v) { return logit(v); });

    // fluctuation on the units adherent through m
    const Vector offset_fit = detail::restrict_rows(ctx, offset_pred, m);
    std::vector<double> w(fit_rows.size());
    for (std::size_t r = 0; r < fit_rows.size(); ++r) {
      const double gi = g[static_cast<std::size_t>(m)][fit_rows[r]];
      if (gi < 1e-12) fail(ErrorCode::ZeroDenominator, "unit " + ctx.panel().unit_id(fit_rows[r]) + " at time " + std::to_string(m));
      w[r] = 1.0 / gi;
    }
    if (truncation) {
      std::vector<std::size_t> idx(w.size());
      for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = r;
      detail::truncate_weights(w, idx, *truncation);
    }
    const double max_w = w.empty() ? 0.0 : *std::max_element(w.begin(), w.end());
    Vector wv(static_cast<Eigen::Index>(w.size()));
    for (std::size_t r = 0; r < w.size(); ++r) wv[static_cast<Eigen::Index>(r)] = w[r] * ctx.weights()[fit_rows[r]];

    const FitResult flu = fit_offset_intercept_logit(q, wv, offset_fit);
    const double eps = flu.coefficients[0];

    Vector updated = (offset_pred.array() + eps).matrix().unaryExpr([](double e) { return expit(e); });
    const Vector updated_fit = detail::restrict_rows(ctx, updated, m);
    const double score = (wv.cwiseProduct(q - updated_fit)).sum() / wv.sum();
    cell.steps.push_back({m, eps, score, max_w});
    if (max_w > weight_cap) {
      cell.warnings.push_back("ExtremeWeights: max 1/g = " + std::to_string(max_w) + " at m = " + std::to_string(m));
    }
    q = updated;
  }
  // q lives on every unit
  const auto& all = ctx.adherent_rows(-1);
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < all.size(); ++r) {
    num += ctx.average_weights()[all[r]] * q[static_cast<Eigen::Index>(r)];
    den += ctx.average_weights()[all[r]];
  }
  cell.value = L + (U - L) * num / den;
  return cell;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

struct PhiTable {
  std::map<std::pair<int, int>, double> entries;  ///< (j, k) -> φ̂
  EstimatorKind tag = EstimatorKind::ICE;

  void set(int j, int k, double v) { entries[{j, k}] = v; }
  bool has(int j, int k) const { return entries.count({j, k}) != 0; }
  double at(int j, int k) const {
    auto it = entries.find({j, k});
    require(it != entries.end(), ErrorCode::IncompletePhiTable,
            "missing cell (" + std::to_string(j) + "," + std::to_string(k) + ")");
    return it->second;
  }

  std::vector<std::pair<int, int>> missing_cells(int t) const {
    std::vector<std::pair<int, int>> out;
    if (!has(0, 0)) out.emplace_back(0, 0);
    for (int k = 1; k <= t; ++k) {
      if (!has(k - 1, k)) out.emplace_back(k - 1, k);
      if (!has(k, k)) out.emplace_back(k, k);
    }
    return out;
  }
};

/// Cells needed for ψ_0..ψ_t.
inline std::vector<std::pair<int, int>> required_cells(int t) {
  std::vector<std::pair<int, int>> cells{{0, 0}};
  for (int k = 1; k <= t; ++k) {
    cells.emplace_back(k - 1, k);
    cells.emplace_back(k, k);
  }
  return cells;
}

struct PsiEstimate {
  EstimatorKind estimator = EstimatorKind::ICE;
  std::vector<double> psi;
  std::vector<double> natural_course;
  std::vector<double> contrast;
  std::vector<double> se, ci_lo, ci_hi;  ///< empty unless bootstrapped
  PhiTable phis;
  std::vector<std::string> warnings;
  std::map<std::string, std::string> metadata;
  /// Bootstrap replicate trajectories (successful replicates only).
  std::vector<std::vector<double>> replicate_psi;
  std::vector<std::vector<double>> replicate_natural;
  std::size_t failed_replicates = 0;
};

/**
 * ψ̂_t = φ̂_{0,0} + Σ_{k=1}^t (φ̂_{k,k} - φ̂_{k-1,k}) for t = 0..t_max, with
 * the weighted observed mean of Y_t as the natural course.
 */
inline PsiEstimate assemble_psi(const PhiTable& phis, const LongPanel& panel, int t_max,
                                std::span<const double> average_weights = {}) {
  require(t_max >= 0 && t_max < panel.n_times(), ErrorCode::InvalidSpec, "t_max outside the panel");
  const auto missing = phis.missing_cells(t_max);
  if (!missing.empty()) {
    std::string s;
    for (auto [j, k] : missing) s += "(" + std::to_string(j) + "," + std::to_string(k) + ")";
    fail(ErrorCode::IncompletePhiTable, "missing cells " + s);
  }
  PsiEstimate est;
  est.estimator = phis.tag;
  est.phis = phis;
  std::vector<double> w(panel.n_units());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = average_weights.empty() ? panel.effective_weight(i) : average_weights[i];
  double psi = phis.at(0, 0);
  for (int t = 0; t <= t_max; ++t) {
    if (t > 0) psi += phis.at(t, t) - phis.at(t - 1, t);
    est.psi.push_back(psi);
    est.natural_course.push_back(stats::weighted_mean(panel.response_column(t), w));
    est.contrast.push_back(est.psi.back() - est.natural_course.back());
  }
  return est;
}

/// Response vector for φ_{j,k}; the default is the observed Y_j.
using ResponseProvider = std::function<std::vector<double>(int j, int k)>;

struct EstimateOptions {
  const FittedTreatmentModels* treatment = nullptr;  ///< reuse instead of refitting
  ResponseProvider response;                         ///< override Y_j per cell
  std::vector<double> average_factor;                ///< per-unit factor on the final averages, e.g. populations
};

/// Trajectory ψ̂_0..ψ̂_{t_max}, reusing a context (and its cached designs) across configurations.
inline PsiEstimate estimate_psi(EstimationContext& ctx, const EstimatorConfig& config, int t_max,
                                const EstimateOptions& options = {}) {
  const LongPanel& panel = ctx.panel();
  require(t_max >= 0 && t_max < panel.n_times(), ErrorCode::InvalidSpec, "t_max outside the panel");
  ctx.set_average_factor(options.average_factor);
  std::optional<FittedTreatmentModels> own;
  const FittedTreatmentModels* fits = options.treatment;
  if (config.kind != EstimatorKind::ICE && fits == nullptr && t_max >= 1) {
    own = fit_treatment_models(panel, ctx.adh(), config.treatment);
    fits = &*own;
  }
  PhiTable table;
  table.tag = config.kind;
  std::vector<std::string> warnings;
  if (fits) warnings = fits->warnings;
  for (auto [j, k] : required_cells(t_max)) {
    const std::vector<double> y = options.response ? options.response(j, k) : panel.response_column(j);
    require(y.size() == panel.n_units(), ErrorCode::DimensionMismatch, "response vector length");
    double v = 0.0;
    switch (config.kind) {
      case EstimatorKind::IPTW:
        v = estimate_phi_iptw(ctx, fits, j, k, y, config.truncation);
        break;
      case EstimatorKind::ICE:
        v = estimate_phi_ice(ctx, config.outcome, j, k, y);
        break;
      case EstimatorKind::TMLE: {
        if (k == 0 && fits == nullptr) {
          v = estimate_phi_ice(ctx, config.outcome, j, k, y);
          break;
        }
        TmleCell c = estimate_phi_tmle(ctx, *fits, config.outcome, j, k, y, config.bounds, config.weight_cap,
                                       config.truncation);
        v = c.value;
        for (auto& w : c.warnings) warnings.push_back(std::move(w));
        break;
      }
    }
    table.set(j, k, v);
  }
  PsiEstimate est = assemble_psi(table, panel, t_max, ctx.average_weights());
  est.warnings = std::move(warnings);
  est.metadata["estimator"] = to_string(config.kind);
  est.metadata["regime"] = ctx.regime_name();
  est.metadata["averaging"] = options.average_factor.empty() ? "unit_weight*trials" : "unit_weight*trials*factor";
  est.metadata["truncation"] = config.truncation ? std::to_string(*config.truncation) : "none";
  if (fits) est.metadata["treatment_models"] = fits->pooled() ? "pooled" : "per-time";
  return est;
}

/// Full trajectory ψ̂_0..ψ̂_{t_max} for one estimator configuration.
inline PsiEstimate estimate_psi(const LongPanel& panel, const Regime& regime, const EstimatorConfig& config, int t_max,
                                const EstimateOptions& options = {}) {
  EstimationContext ctx(panel, regime);
  return estimate_psi(ctx, config, t_max, options);
}

// Conveniences that build their own context.

inline double estimate_phi_iptw(const LongPanel& panel, const Regime& regime, const FittedTreatmentModels& fits, int j,
                                int k) {
  EstimationContext ctx(panel, regime);
  return estimate_phi_iptw(ctx, &fits, j, k, panel.response_column(j));
}

inline double estimate_phi_ice(const LongPanel& panel, const Regime& regime, const OutcomeSpecs& specs, int j, int k) {
  EstimationContext ctx(panel, regime);
  return estimate_phi_ice(ctx, specs, j, k, panel.response_column(j));
}

inline TmleCell estimate_phi_tmle(const LongPanel& panel, const Regime& regime, const FittedTreatmentModels& fits,
                                  const OutcomeSpecs& specs, int j, int k,
                                  std::optional<std::pair<double, double>> bounds = {}) {
  EstimationContext ctx(panel, regime);
  return estimate_phi_tmle(ctx, fits, specs, j, k, panel.response_column(j), bounds);
}

}  // namespace ptgf
