#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ptgf/error.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/parallel.hpp"
#include "ptgf/rng.hpp"
#include "ptgf/stats.hpp"

namespace ptgf {

enum class BootstrapMode { UnitResample, MultinomialCounts };

inline std::string to_string(BootstrapMode m) {
  return m == BootstrapMode::UnitResample ? "unit" : "multinomial";
}

inline BootstrapMode parse_bootstrap_mode(const std::string& s) {
  if (s == "unit" || s == "unit-resample") return BootstrapMode::UnitResample;
  if (s == "multinomial") return BootstrapMode::MultinomialCounts;
  fail(ErrorCode::InvalidSpec, "unknown bootstrap mode '" + s + "'");
}

struct BootstrapConfig {
  BootstrapMode mode = BootstrapMode::UnitResample;
  int replicates = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
  bool percentile = false;  ///< diagnostic percentile interval instead of Wald
  unsigned jobs = 1;
  double max_failed_fraction = 0.10;
};

/// Units drawn with replacement for replicate b.
inline std::vector<std::size_t> resample_units(std::size_t n, std::uint64_t seed, int b) {
  CounterRng rng(seed, static_cast<std::uint64_t>(b));
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
  return idx;
}

/**
 * Per-unit redraw of (Y_0, ..., Y_tau, survivors) from
 * Multinomial(n_s, (Y_0, ..., Y_tau, survivors) / n_s), holding A and W fixed.
 * Requires integer counts and trials.
 */
inline LongPanel resample_counts(const LongPanel& panel, std::uint64_t seed, int b) {
  require(panel.has_trials(), ErrorCode::InvalidPanel, "multinomial bootstrap needs trials");
  CounterRng rng(seed, static_cast<std::uint64_t>(b));
  std::vector<double> y = panel.raw_outcome();
  const int T = panel.n_times();
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const double n_s = panel.trials(i);
    require(n_s == std::floor(n_s), ErrorCode::InvalidPanel, "trials must be integers for multinomial resampling");
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
      const double v = panel.Y(i, t);
      require(v == std::floor(v), ErrorCode::InvalidPanel, "counts must be integers for multinomial resampling");
      total += v;
    }
    require(total <= n_s, ErrorCode::NegativeCount, "unit " + panel.unit_id(i) + " has more events than trials");
    // sequential conditional binomials
    auto remaining = static_cast<long long>(n_s);
    double mass = n_s;
    for (int t = 0; t < T; ++t) {
      const double c = panel.Y(i, t);
      long long draw = 0;
      if (remaining > 0 && c > 0.0) {
        const double p = std::min(1.0, c / mass);
        draw = p >= 1.0 ? remaining : std::binomial_distribution<long long>(remaining, p)(rng);
      }
      y[i * static_cast<std::size_t>(T) + static_cast<std::size_t>(t)] = static_cast<double>(draw);
      remaining -= draw;
      mass -= c;
    }
  }
  return panel.with_outcome(std::move(y));
}

/**
 * Bootstrap ψ̂: replicate b resamples with stream hash(seed, b), refits every
 * model, and re-estimates. Replicates failing with a numerical error are
 * excluded and counted. se is the SD over successful replicates.
 */
inline PsiEstimate bootstrap_psi(const LongPanel& panel, const Regime& regime, const EstimatorConfig& config,
                                 const BootstrapConfig& boot, int t_max) {
  require(boot.replicates >= 2, ErrorCode::InvalidSpec, "bootstrap needs B >= 2");
  require(boot.level > 0.0 && boot.level < 1.0, ErrorCode::InvalidSpec, "ci level must be in (0, 1)");
  PsiEstimate base = estimate_psi(panel, regime, config, t_max);
  const auto B = static_cast<std::size_t>(boot.replicates);
  std::vector<std::optional<PsiEstimate>> reps(B);
  parallel_for(B, boot.jobs, [&](std::size_t b) {
    try {
      if (boot.mode == BootstrapMode::UnitResample) {
        const auto idx = resample_units(panel.n_units(), boot.seed, static_cast<int>(b));
        reps[b] = estimate_psi(panel.select_units(idx), regime, config, t_max);
      } else {
        reps[b] = estimate_psi(resample_counts(panel, boot.seed, static_cast<int>(b)), regime, config, t_max);
      }
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::Numerical) throw;
    }
  });
  for (auto& r : reps) {
    if (!r) {
      ++base.failed_replicates;
      continue;
    }
    base.replicate_psi.push_back(std::move(r->psi));
    base.replicate_natural.push_back(std::move(r->natural_course));
  }
  if (static_cast<double>(base.failed_replicates) > boot.max_failed_fraction * static_cast<double>(B) ||
      base.replicate_psi.size() < 2) {
    fail(ErrorCode::TooManyFailedReplicates,
         std::to_string(base.failed_replicates) + " of " + std::to_string(B) + " replicates failed");
  }
  const double z = stats::normal_quantile(0.5 + boot.level / 2.0);
  for (int t = 0; t <= t_max; ++t) {
    std::vector<double> col;
    for (const auto& r : base.replicate_psi) col.push_back(r[static_cast<std::size_t>(t)]);
    const double se = stats::sd(col);
    base.se.push_back(se);
    const double psi = base.psi[static_cast<std::size_t>(t)];
    if (boot.percentile) {
      std::sort(col.begin(), col.end());
      base.ci_lo.push_back(quantile_sorted(col, (1.0 - boot.level) / 2.0));
      base.ci_hi.push_back(quantile_sorted(col, 0.5 + boot.level / 2.0));
    } else {
      base.ci_lo.push_back(psi - z * se);
      base.ci_hi.push_back(psi + z * se);
    }
  }
  base.metadata["bootstrap_mode"] = to_string(boot.mode);
  base.metadata["bootstrap_B"] = std::to_string(boot.replicates);
  base.metadata["bootstrap_seed"] = std::to_string(boot.seed);
  base.metadata["bootstrap_interval"] = boot.percentile ? "percentile" : "wald";
  base.metadata["failed_replicates"] = std::to_string(base.failed_replicates);
  return base;
}

}  // namespace ptgf
