#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ptgf/error.hpp"

namespace ptgf {

/**
 * Read-only view of one unit's history up to time k.
 *
 * Covariates are visible for t <= k, treatments for t < k. Regime rules
 * receive this view, which keeps them from peeking at the decision they are
 * supposed to make.
 */
class HistoryView {
 public:
  HistoryView(const double* covariates, const int* treatments, std::size_t n_covariates,
              const std::vector<std::string>* names, int time)
      : w_(covariates), a_(treatments), n_cov_(n_covariates), names_(names), time_(time) {}

  int time() const noexcept { return time_; }
  std::size_t n_covariates() const noexcept { return n_cov_; }

  double covariate(std::size_t c, int t) const {
    require(t >= 0 && t <= time_ && c < n_cov_, ErrorCode::InvalidLag,
            "covariate access outside the visible history");
    return w_[static_cast<std::size_t>(t) * n_cov_ + c];
  }

  double covariate(std::string_view name, int t) const {
    for (std::size_t c = 0; c < n_cov_; ++c) {
      if ((*names_)[c] == name) return covariate(c, t);
    }
    fail(ErrorCode::UnknownCovariate, std::string(name));
  }

  int treatment(int t) const {
    require(t >= 0 && t < time_, ErrorCode::InvalidLag, "treatment access outside the visible history");
    return a_[t];
  }

 private:
  const double* w_;
  const int* a_;
  std::size_t n_cov_;
  const std::vector<std::string>* names_;
  int time_;
};

/**
 * Rectangular unit-by-time panel of covariates W, binary treatment A and
 * outcome Y, plus an optional per-unit weight and binomial denominator.
 *
 * Storage is unit-major so one unit's history is contiguous.
 */
class LongPanel {
 public:
  LongPanel() = default;

  LongPanel(std::vector<std::string> unit_ids, int n_times, std::vector<std::string> covariate_names,
            std::vector<double> covariates, std::vector<int> treatment, std::vector<double> outcome,
            std::vector<double> unit_weight = {}, std::vector<double> trials = {})
      : ids_(std::move(unit_ids)),
        n_times_(n_times),
        names_(std::move(covariate_names)),
        w_(std::move(covariates)),
        a_(std::move(treatment)),
        y_(std::move(outcome)),
        weight_(std::move(unit_weight)),
        trials_(std::move(trials)) {
    const std::size_t n = ids_.size();
    if (weight_.empty()) weight_.assign(n, 1.0);
    validate();
  }

  std::size_t n_units() const noexcept { return ids_.size(); }
  int n_times() const noexcept { return n_times_; }
  int tau() const noexcept { return n_times_ - 1; }
  std::size_t n_covariates() const noexcept { return names_.size(); }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }
  const std::vector<std::string>& unit_ids() const noexcept { return ids_; }
  const std::string& unit_id(std::size_t i) const { return ids_[i]; }

  std::optional<std::size_t> covariate_index(std::string_view name) const {
    for (std::size_t c = 0; c < names_.size(); ++c)
      if (names_[c] == name) return c;
    return std::nullopt;
  }

  double W(std::size_t i, int t, std::size_t c) const { return w_[cell(i, t) * names_.size() + c]; }
  int A(std::size_t i, int t) const { return a_[cell(i, t)]; }
  double Y(std::size_t i, int t) const { return y_[cell(i, t)]; }

  double unit_weight(std::size_t i) const { return weight_[i]; }
  bool has_trials() const noexcept { return !trials_.empty(); }
  double trials(std::size_t i) const { return has_trials() ? trials_[i] : 1.0; }

  /// Outcome on the modelling scale: Y / trials for count outcomes, Y otherwise.
  double response(std::size_t i, int t) const { return has_trials() ? Y(i, t) / trials_[i] : Y(i, t); }

  /// Weight of a unit in fits and averages: unit_weight * trials.
  double effective_weight(std::size_t i) const { return weight_[i] * trials(i); }

  /// Response column Y_t (modelling scale) for every unit.
  std::vector<double> response_column(int t) const {
    std::vector<double> out(n_units());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = response(i, t);
    return out;
  }

  HistoryView history(std::size_t i, int time) const {
    return HistoryView(w_.data() + cell(i, 0) * names_.size(), a_.data() + cell(i, 0), names_.size(), &names_,
                       time);
  }

  const std::vector<double>& raw_covariates() const noexcept { return w_; }
  const std::vector<int>& raw_treatment() const noexcept { return a_; }
  const std::vector<double>& raw_outcome() const noexcept { return y_; }
  const std::vector<double>& raw_weights() const noexcept { return weight_; }
  const std::vector<double>& raw_trials() const noexcept { return trials_; }

  /// New panel built from the listed units (duplicates allowed), trajectories intact.
  LongPanel select_units(std::span<const std::size_t> units) const {
    const std::size_t c = names_.size();
    const auto T = static_cast<std::size_t>(n_times_);
    std::vector<std::string> ids;
    std::vector<double> w, y, wt, tr;
    std::vector<int> a;
    ids.reserve(units.size());
    w.reserve(units.size() * T * c);
    a.reserve(units.size() * T);
    y.reserve(units.size() * T);
    for (std::size_t i : units) {
      require(i < n_units(), ErrorCode::DimensionMismatch, "unit index out of range");
      ids.push_back(ids_[i]);
      w.insert(w.end(), w_.begin() + cell(i, 0) * c, w_.begin() + (cell(i, 0) + T) * c);
      a.insert(a.end(), a_.begin() + cell(i, 0), a_.begin() + cell(i, 0) + T);
      y.insert(y.end(), y_.begin() + cell(i, 0), y_.begin() + cell(i, 0) + T);
      wt.push_back(weight_[i]);
      if (has_trials()) tr.push_back(trials_[i]);
    }
    return LongPanel(std::move(ids), n_times_, names_, std::move(w), std::move(a), std::move(y), std::move(wt),
                     std::move(tr));
  }

  /// Same panel with the outcome matrix replaced (unit-major, n_units * n_times).
  LongPanel with_outcome(std::vector<double> outcome) const {
    return LongPanel(ids_, n_times_, names_, w_, a_, std::move(outcome), weight_, trials_);
  }

  /// Same panel with the unit weights replaced.
  LongPanel with_unit_weights(std::vector<double> weights) const {
    return LongPanel(ids_, n_times_, names_, w_, a_, y_, std::move(weights), trials_);
  }

 private:
  std::size_t cell(std::size_t i, int t) const { return i * static_cast<std::size_t>(n_times_) + static_cast<std::size_t>(t); }

  void validate() const {
    const std::size_t n = ids_.size();
    require(n >= 1, ErrorCode::InvalidPanel, "panel has no units");
    require(n_times_ >= 1, ErrorCode::InvalidPanel, "panel has no time points");
    const std::size_t cells = n * static_cast<std::size_t>(n_times_);
    require(w_.size() == cells * names_.size(), ErrorCode::DimensionMismatch, "covariate block has wrong size");
    require(a_.size() == cells && y_.size() == cells, ErrorCode::DimensionMismatch,
            "treatment/outcome block has wrong size");
    require(weight_.size() == n, ErrorCode::DimensionMismatch, "unit_weight length differs from n_units");
    require(trials_.empty() || trials_.size() == n, ErrorCode::DimensionMismatch,
            "trials length differs from n_units");
    for (int v : a_) require(v == 0 || v == 1, ErrorCode::InvalidPanel, "treatment values must be 0 or 1");
    for (double v : y_) require(std::isfinite(v), ErrorCode::InvalidPanel, "non-finite outcome");
    for (double v : w_) require(std::isfinite(v), ErrorCode::InvalidPanel, "non-finite covariate");
    for (double v : weight_) require(std::isfinite(v) && v > 0.0, ErrorCode::InvalidPanel, "unit_weight must be > 0");
    for (std::size_t i = 0; i < trials_.size(); ++i) {
      require(trials_[i] > 0.0, ErrorCode::InvalidPanel, "trials must be positive");
      for (int t = 0; t < n_times_; ++t) {
        const double v = y_[cell(i, t)];
        require(v >= 0.0 && v <= trials_[i], ErrorCode::NegativeCount,
                "outcome outside [0, trials] for unit " + ids_[i]);
      }
    }
  }

  std::vector<std::string> ids_;
  int n_times_ = 0;
  std::vector<std::string> names_;
  std::vector<double> w_;
  std::vector<int> a_;
  std::vector<double> y_;
  std::vector<double> weight_;
  std::vector<double> trials_;
};

/// Deterministic decision rule g_k(W̄_k, Ā_{k-1}) -> {0, 1}.
using RuleFn = std::function<int(const HistoryView&)>;

/**
 * Treatment plan: either a static vector ā* or a dynamic rule.
 *
 * Estimators only ever look at the per-unit decisions, so a static plan and
 * the same plan wrapped as a constant rule produce identical results.
 */
class Regime {
 public:
  static Regime static_plan(std::vector<int> plan) {
    require(!plan.empty(), ErrorCode::InvalidRegime, "empty static plan");
    for (int v : plan) require(v == 0 || v == 1, ErrorCode::InvalidRegime, "plan entries must be 0 or 1");
    Regime r;
    r.plan_ = std::move(plan);
    r.name_ = "static";
    return r;
  }

  static Regime dynamic(std::string name, RuleFn rule) {
    require(static_cast<bool>(rule), ErrorCode::InvalidRegime, "empty rule");
    Regime r;
    r.rule_ = std::move(rule);
    r.name_ = std::move(name);
    return r;
  }

  /// A static plan expressed as a dynamic rule returning plan[k].
  static Regime constant_rule(std::vector<int> plan) {
    require(!plan.empty(), ErrorCode::InvalidRegime, "empty plan");
    return dynamic("constant_plan", [plan = std::move(plan)](const HistoryView& h) {
      const auto k = static_cast<std::size_t>(h.time());
      require(k < plan.size(), ErrorCode::InvalidRegime, "plan shorter than panel");
      return plan[k];
    });
  }

  bool is_static() const noexcept { return !rule_; }
  const std::vector<int>& plan() const noexcept { return plan_; }
  const std::string& name() const noexcept { return name_; }

  int decide(const HistoryView& h) const {
    if (is_static()) {
      const auto k = static_cast<std::size_t>(h.time());
      require(k < plan_.size(), ErrorCode::InvalidRegime, "static plan shorter than panel");
      return plan_[k];
    }
    const int d = rule_(h);
    require(d == 0 || d == 1, ErrorCode::InvalidRegime, "rule returned a non-binary decision");
    return d;
  }

 private:
  Regime() = default;
  std::vector<int> plan_;
  RuleFn rule_;
  std::string name_;
};

/**
 * Regime decisions d_ik and cumulative adherence I(Ā_ik = ā*_k) for every
 * unit and time. Decisions for dynamic rules use the unit's observed
 * covariate and treatment history.
 */
class AdherenceMatrix {
 public:
  AdherenceMatrix() = default;
  AdherenceMatrix(std::size_t n_units, int n_times)
      : n_(n_units), T_(n_times), ind_(n_units * static_cast<std::size_t>(n_times), 0),
        dec_(n_units * static_cast<std::size_t>(n_times), 0) {}

  std::size_t n_units() const noexcept { return n_; }
  int n_times() const noexcept { return static_cast<int>(T_); }

  /// Adherent through time k; k < 0 is the empty history and always true.
  bool adherent(std::size_t i, int k) const { return k < 0 ? true : ind_[i * T_ + static_cast<std::size_t>(k)] != 0; }
  int decision(std::size_t i, int k) const { return dec_[i * T_ + static_cast<std::size_t>(k)]; }

  std::size_t count(int k) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i) c += adherent(i, k) ? 1 : 0;
    return c;
  }

  /// Units adherent through k (every unit when k < 0).
  std::vector<std::size_t> adherent_units(int k) const {
    std::vector<std::size_t> out;
    out.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i)
      if (adherent(i, k)) out.push_back(i);
    return out;
  }

  void set(std::size_t i, int k, bool adherent_through_k, int decision) {
    ind_[i * T_ + static_cast<std::size_t>(k)] = adherent_through_k ? 1 : 0;
    dec_[i * T_ + static_cast<std::size_t>(k)] = static_cast<std::int8_t>(decision);
  }

  bool operator==(const AdherenceMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t T_ = 0;
  std::vector<std::uint8_t> ind_;
  std::vector<std::int8_t> dec_;
};

inline AdherenceMatrix adherence(const LongPanel& panel, const Regime& regime) {
  AdherenceMatrix m(panel.n_units(), panel.n_times());
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    bool still = true;
    for (int k = 0; k < panel.n_times(); ++k) {
      const int d = regime.decide(panel.history(i, k));
      still = still && panel.A(i, k) == d;
      m.set(i, k, still, d);
    }
  }
  return m;
}

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> deviating_units;
  std::vector<std::size_t> adherent_counts;  ///< per time 0..tau
};

/// Non-throwing check of the staggered discontinuation design.
inline ValidationReport check_staggered(const LongPanel& panel, const Regime& regime) {
  ValidationReport report;
  const AdherenceMatrix adh = adherence(panel, regime);
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    if (!adh.adherent(i, 0)) report.deviating_units.push_back(panel.unit_id(i));
  }
  report.ok = report.deviating_units.empty();
  for (int k = 0; k < panel.n_times(); ++k) report.adherent_counts.push_back(adh.count(k));
  return report;
}

/// Requires A_i0 to equal the regime's baseline decision for every unit.
inline ValidationReport validate_staggered(const LongPanel& panel, const Regime& regime) {
  ValidationReport report = check_staggered(panel, regime);
  if (!report.ok) {
    std::string ids;
    for (const auto& id : report.deviating_units) ids += (ids.empty() ? "" : ",") + id;
    fail(ErrorCode::BaselineDeviation, "units {" + ids + "} deviate from the regime at t=0");
  }
  return report;
}

}  // namespace ptgf
