#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ptgf/error.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/panel.hpp"

namespace ptgf {

/// Δ(w̄, t) = c for every history and target time.
struct DeltaConstant {
  double c = 0.0;
};

/// Δ(w̄, t) = c_t.
struct DeltaTimeVarying {
  std::vector<double> c;
};

/// Δ(w̄_m, t) = intercept_t + Σ_name coef_{t,name} · W_{m,name}.
struct DeltaCovariateLinear {
  std::vector<double> intercept;
  std::map<std::string, std::vector<double>> coefficients;
};

/// Δ(w̄_m, t) = values[t][bin(W_{m,covariate})], bins given by sorted interior cut points.
struct DeltaTabulated {
  std::string covariate;
  std::vector<double> cuts;
  std::vector<std::vector<double>> values;
};

struct DeltaSpec {
  std::variant<DeltaConstant, DeltaTimeVarying, DeltaCovariateLinear, DeltaTabulated> form;
  std::string label;

  static DeltaSpec constant(double c) {
    std::ostringstream os;
    os << "constant(" << c << ")";
    return {DeltaConstant{c}, os.str()};
  }
  static DeltaSpec zero() { return constant(0.0); }

  /// Offset for a unit whose history through m is `h` (h.time() == m), applied to target time t.
  double evaluate(const HistoryView& h, int t) const {
    const auto bad = [&](const std::string& why) {
      fail(ErrorCode::DeltaNotEvaluable, label + " at m=" + std::to_string(h.time()) + ", t=" + std::to_string(t) + ": " + why);
    };
    const auto at = [&](const std::vector<double>& v) {
      if (t < 0 || static_cast<std::size_t>(t) >= v.size()) bad("no value for this time");
      return v[static_cast<std::size_t>(t)];
    };
    double out = std::visit(
        [&](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, DeltaConstant>) {
            return f.c;
          } else if constexpr (std::is_same_v<F, DeltaTimeVarying>) {
            return at(f.c);
          } else if constexpr (std::is_same_v<F, DeltaCovariateLinear>) {
            double v = f.intercept.empty() ? 0.0 : at(f.intercept);
            for (const auto& [name, coefs] : f.coefficients) {
              const double c = at(coefs);
              try {
                v += c * h.covariate(name, h.time());
              } catch (const Error&) {
                bad("unknown covariate " + name);
              }
            }
            return v;
          } else {
            double w = 0.0;
            try {
              w = h.covariate(f.covariate, h.time());
            } catch (const Error&) {
              bad("unknown covariate " + f.covariate);
            }
            const auto bin = static_cast<std::size_t>(std::upper_bound(f.cuts.begin(), f.cuts.end(), w) - f.cuts.begin());
            const auto& row = [&]() -> const std::vector<double>& {
              if (t < 0 || static_cast<std::size_t>(t) >= f.values.size()) bad("no table row for this time");
              return f.values[static_cast<std::size_t>(t)];
            }();
            if (bin >= row.size()) bad("covariate value outside the table");
            return row[bin];
          }
        },
        form);
    if (!std::isfinite(out)) bad("non-finite value");
    return out;
  }
};

/**
 * Outcome vector entering φ'_{j,k}: Y_k + Σ_{m=1}^k Δ(W̄_m, k) when j = k,
 * the raw Y_{k-1} when j = k-1. Values are on the response scale.
 */
inline std::vector<double> apply_delta(const LongPanel& panel, const DeltaSpec& delta, int j, int k) {
  require(j == k || j == k - 1, ErrorCode::InvalidSpec, "j must be k or k-1");
  require(j >= 0 && k < panel.n_times(), ErrorCode::InvalidLag, "cell outside the panel");
  std::vector<double> y = panel.response_column(j);
  if (j != k) return y;
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    for (int m = 1; m <= k; ++m) y[i] += delta.evaluate(panel.history(i, m), k);
  }
  return y;
}

struct SweepRow {
  std::string label;
  double psi_prime = 0.0;
  double contrast = 0.0;
  std::vector<double> psi_trajectory;
};

/// One estimation per Δ in grid order; treatment models are fit once and shared.
inline std::vector<SweepRow> sensitivity_sweep(const LongPanel& panel, const Regime& regime,
                                               const EstimatorConfig& config, const std::vector<DeltaSpec>& grid,
                                               int t) {
  validate_staggered(panel, regime);
  std::optional<FittedTreatmentModels> fits;
  if (config.kind != EstimatorKind::ICE && t >= 1) {
    fits = fit_treatment_models(panel, adherence(panel, regime), config.treatment);
  }
  std::vector<SweepRow> rows;
  for (const auto& delta : grid) {
    EstimateOptions opt;
    opt.treatment = fits ? &*fits : nullptr;
    opt.response = [&](int j, int k) { return apply_delta(panel, delta, j, k); };
    const PsiEstimate est = estimate_psi(panel, regime, config, t, opt);
    rows.push_back({delta.label, est.psi[static_cast<std::size_t>(t)], est.contrast[static_cast<std::size_t>(t)], est.psi});
  }
  return rows;
}

}  // namespace ptgf
