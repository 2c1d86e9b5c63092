#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ptgf/error.hpp"

namespace ptgf::stats {

inline double mean(std::span<const double> x) {
  require(!x.empty(), ErrorCode::InvalidSpec, "mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance with denominator n - 1.
inline double variance(std::span<const double> x) {
  require(x.size() >= 2, ErrorCode::InvalidSpec, "variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

inline double sd(std::span<const double> x) { return std::sqrt(variance(x)); }

inline double weighted_mean(std::span<const double> x, std::span<const double> w) {
  require(x.size() == w.size() && !x.empty(), ErrorCode::DimensionMismatch, "weighted mean size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += w[i] * x[i];
    den += w[i];
  }
  require(den > 0.0, ErrorCode::NoAdherentUnits, "weights sum to zero");
  return num / den;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

struct LillieforsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/**
 * Lilliefors test of normality: Kolmogorov-Smirnov distance to the normal
 * with estimated mean and sd, p-value from the Dallal-Wilkinson
 * approximation (refined for p > 0.1 by the Stephens-type polynomial).
 * Returns nullopt below 5 observations.
 */
inline std::optional<LillieforsResult> lilliefors(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 5) return std::nullopt;
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double m = mean(x);
  const double s = sd(x);
  if (!(s > 0.0)) return std::nullopt;
  const double nd_full = static_cast<double>(n);
  double dplus = -1.0, dminus = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = normal_cdf((x[i] - m) / s);
    dplus = std::max(dplus, static_cast<double>(i + 1) / nd_full - p);
    dminus = std::max(dminus, p - static_cast<double>(i) / nd_full);
  }
  const double K = std::max(dplus, dminus);
  double Kd = K, nd = nd_full;
  if (n > 100) {
    Kd = K * std::pow(nd_full / 100.0, 0.49);
    nd = 100.0;
  }
  double p = std::exp(-7.01256 * Kd * Kd * (nd + 2.78019) + 2.99587 * Kd * std::sqrt(nd + 2.78019) - 0.122119 +
                      0.974598 / std::sqrt(nd) + 1.67997 / nd);
  if (p > 0.1) {
    const double KK = (std::sqrt(nd_full) - 0.01 + 0.85 / std::sqrt(nd_full)) * K;
    if (KK <= 0.302) {
      p = 1.0;
    } else if (KK <= 0.5) {
      p = 2.76773 - 19.828315 * KK + 80.709644 * KK * KK - 138.55152 * std::pow(KK, 3) + 81.218052 * std::pow(KK, 4);
    } else if (KK <= 0.9) {
      p = -4.901232 + 40.662806 * KK - 97.490286 * KK * KK + 94.029866 * std::pow(KK, 3) -
          32.355711 * std::pow(KK, 4);
    } else if (KK <= 1.31) {
      p = 6.198765 - 19.558097 * KK + 23.186922 * KK * KK - 12.234627 * std::pow(KK, 3) +
          2.423045 * std::pow(KK, 4);
    } else {
      p = 0.0;
    }
  }
  return LillieforsResult{K, p};
}

}  // namespace ptgf::stats
