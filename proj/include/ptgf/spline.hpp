#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ptgf/error.hpp"

namespace ptgf {

/// Type-7 sample quantile of sorted values (the default of most stats packages).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), ErrorCode::InvalidSpec, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/**
 * Natural cubic spline basis without intercept, df columns.
 *
 * Knots: boundary knots at the ends of the grid, df - 1 interior knots at
 * equally spaced quantiles of the grid. Columns use the truncated-power
 * form N_1(s) = s, N_{k+1}(s) = d_k(s) - d_{K-1}(s) on s rescaled to [0, 1];
 * every column is linear outside the boundary knots.
 */
class NaturalSplineBasis {
 public:
  NaturalSplineBasis(int df, const std::vector<double>& grid) : df_(df) {
    require(df >= 1, ErrorCode::InvalidSpec, "spline df must be >= 1");
    require(!grid.empty(), ErrorCode::InvalidSpec, "spline grid is empty");
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    lo_ = sorted.front();
    hi_ = sorted.back();
    require(hi_ > lo_, ErrorCode::InvalidSpec, "spline grid must span more than one point");
    knots_.push_back(0.0);
    for (int q = 1; q < df; ++q) {
      knots_.push_back((quantile_sorted(sorted, static_cast<double>(q) / df) - lo_) / (hi_ - lo_));
    }
    knots_.push_back(1.0);
  }

  int df() const noexcept { return df_; }
  double lower() const noexcept { return lo_; }
  double upper() const noexcept { return hi_; }

  /// Knots on the original scale, boundary knots included.
  std::vector<double> knots() const {
    std::vector<double> out;
    for (double k : knots_) out.push_back(lo_ + k * (hi_ - lo_));
    return out;
  }

  std::vector<double> evaluate(double x) const {
    const double s = (x - lo_) / (hi_ - lo_);
    std::vector<double> out(static_cast<std::size_t>(df_));
    out[0] = s;
    const std::size_t K = knots_.size();
    const double dlast = d(s, K - 2);
    for (std::size_t k = 0; k + 2 < K; ++k) out[k + 1] = d(s, k) - dlast;
    return out;
  }

 private:
  static double cube_pos(double v) { return v > 0.0 ? v * v * v : 0.0; }

  double d(double s, std::size_t k) const {
    const double last = knots_.back();
    return (cube_pos(s - knots_[k]) - cube_pos(s - last)) / (last - knots_[k]);
  }

  int df_;
  double lo_ = 0.0, hi_ = 1.0;
  std::vector<double> knots_;  // rescaled, includes both boundaries
};

}  // namespace ptgf
