#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ptgf/error.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/spline.hpp"

namespace ptgf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Family { Gaussian, Binomial, Quasibinomial };
enum class Link { Identity, Logit };

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One term of a design-matrix recipe.
struct Term {
  enum class Kind { Intercept, Covariate, Power, LogCovariate, TimeSpline, TreatmentIndicator, Interaction };

  Kind kind = Kind::Intercept;
  std::string name;
  int lag = 0;
  double exponent = 1.0;
  int df = 0;
  std::vector<Term> factors;

  static Term intercept() { return {}; }
  static Term covariate(std::string name, int lag = 0) {
    Term t;
    t.kind = Kind::Covariate;
    t.name = std::move(name);
    t.lag = lag;
    return t;
  }
  static Term power(std::string name, int lag, double exponent) {
    Term t = covariate(std::move(name), lag);
    t.kind = Kind::Power;
    t.exponent = exponent;
    return t;
  }
  static Term log_covariate(std::string name, int lag = 0) {
    Term t = covariate(std::move(name), lag);
    t.kind = Kind::LogCovariate;
    return t;
  }
  static Term time_spline(int df) {
    Term t;
    t.kind = Kind::TimeSpline;
    t.df = df;
    return t;
  }
  static Term treatment() {
    Term t;
    t.kind = Kind::TreatmentIndicator;
    return t;
  }
  static Term interaction(Term a, Term b) {
    Term t;
    t.kind = Kind::Interaction;
    t.factors = {std::move(a), std::move(b)};
    return t;
  }

  int max_lag() const {
    switch (kind) {
      case Kind::Covariate:
      case Kind::Power:
      case Kind::LogCovariate:
        return lag;
      case Kind::Interaction: {
        int m = 0;
        for (const auto& f : factors) m = std::max(m, f.max_lag());
        return m;
      }
      default:
        return 0;
    }
  }

  std::size_t width() const {
    switch (kind) {
      case Kind::TimeSpline:
        return static_cast<std::size_t>(df);
      case Kind::Interaction: {
        std::size_t w = 1;
        for (const auto& f : factors) w *= f.width();
        return w;
      }
      default:
        return 1;
    }
  }

  std::string label() const {
    const std::string at = lag == 0 ? "" : "_lag" + std::to_string(lag);
    switch (kind) {
      case Kind::Intercept: return "(Intercept)";
      case Kind::Covariate: return name + at;
      case Kind::Power: return name + at + "^" + std::to_string(exponent).substr(0, 4);
      case Kind::LogCovariate: return "log(" + name + at + ")";
      case Kind::TimeSpline: return "ns(time," + std::to_string(df) + ")";
      case Kind::TreatmentIndicator: return "a*";
      case Kind::Interaction: {
        std::string s;
        for (const auto& f : factors) s += (s.empty() ? "" : ":") + f.label();
        return s;
      }
    }
    return "?";
  }
};

/// Declarative regression: ordered terms plus family and link.
struct ModelSpec {
  std::vector<Term> terms;
  Family family = Family::Gaussian;
  Link link = Link::Identity;

  void validate() const {
    if (family == Family::Gaussian)
      require(link == Link::Identity, ErrorCode::InvalidSpec, "Gaussian family pairs only with the identity link");
    else
      require(link == Link::Logit, ErrorCode::InvalidSpec, "binomial families pair only with the logit link");
    for (const auto& t : terms) check_term(t);
  }

  int max_lag() const {
    int m = 0;
    for (const auto& t : terms) m = std::max(m, t.max_lag());
    return m;
  }

  std::size_t n_columns() const {
    std::size_t c = 0;
    for (const auto& t : terms) c += t.width();
    return c;
  }

  /// Drops terms whose lags reach before t = 0 at the given time.
  ModelSpec truncated_to(int time) const {
    ModelSpec out{{}, family, link};
    for (const auto& t : terms)
      if (t.max_lag() <= time) out.terms.push_back(t);
    return out;
  }

 private:
  static void check_term(const Term& t) {
    require(t.lag >= 0, ErrorCode::InvalidLag, "negative lag in term " + t.label());
    if (t.kind == Term::Kind::TimeSpline) require(t.df >= 1, ErrorCode::InvalidSpec, "TimeSpline df must be >= 1");
    if (t.kind == Term::Kind::Interaction) {
      require(t.factors.size() == 2, ErrorCode::InvalidSpec, "interaction needs exactly two terms");
      for (const auto& f : t.factors) check_term(f);
    }
  }
};

namespace detail {

enum class Source { Covariate, Treatment, Outcome };

/// Where a term's values come from: "A" and "Y" name the treatment and outcome, anything else a covariate.
inline std::pair<Source, std::size_t> resolve_source(const LongPanel& panel, const std::string& name, int lag) {
  if (name == "A") return {Source::Treatment, 0};
  if (name == "Y") {
    require(lag >= 1, ErrorCode::InvalidLag, "lagged outcome Y needs lag >= 1");
    return {Source::Outcome, 0};
  }
  const auto c = panel.covariate_index(name);
  require(c.has_value(), ErrorCode::UnknownCovariate, name);
  return {Source::Covariate, *c};
}

inline void fill_term(const LongPanel& panel, const Term& term, int time, const AdherenceMatrix& adh,
                      std::span<const std::size_t> rows, Matrix& out, Eigen::Index col) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  using K = Term::Kind;
  switch (term.kind) {
    case K::Intercept:
      out.col(col).setOnes();
      return;
    case K::Covariate:
    case K::Power:
    case K::LogCovariate: {
      const int t = time - term.lag;
      require(t >= 0, ErrorCode::InvalidLag,
              term.label() + " at time " + std::to_string(time) + " precedes t=0");
      require(t < panel.n_times(), ErrorCode::InvalidLag, term.label() + " beyond the panel");
      const auto [source, cov] = resolve_source(panel, term.name, term.lag);
      for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = rows[static_cast<std::size_t>(r)];
        double v = source == Source::Covariate ? panel.W(i, t, cov)
                   : source == Source::Treatment ? static_cast<double>(panel.A(i, t))
                                                 : panel.Y(i, t);
        if (term.kind == K::Power) {
          v = term.exponent == 2.0 ? v * v : std::pow(v, term.exponent);
        } else if (term.kind == K::LogCovariate) {
          require(v > 0.0, ErrorCode::InvalidSpec, "log of nonpositive value");
          v = std::log(v);
        }
        out(r, col) = v;
      }
      return;
    }
    case K::TimeSpline: {
      std::vector<double> grid;
      for (int t = 0; t < panel.n_times(); ++t) grid.push_back(t);
      const NaturalSplineBasis basis(term.df, grid);
      const auto vals = basis.evaluate(static_cast<double>(time));
      for (std::size_t c = 0; c < vals.size(); ++c) out.col(col + static_cast<Eigen::Index>(c)).setConstant(vals[c]);
      return;
    }
    case K::TreatmentIndicator:
      for (Eigen::Index r = 0; r < n; ++r) out(r, col) = adh.decision(rows[static_cast<std::size_t>(r)], time);
      return;
    case K::Interaction: {
      const Term& a = term.factors[0];
      const Term& b = term.factors[1];
      Matrix left(n, static_cast<Eigen::Index>(a.width()));
      Matrix right(n, static_cast<Eigen::Index>(b.width()));
      fill_term(panel, a, time, adh, rows, left, 0);
      fill_term(panel, b, time, adh, rows, right, 0);
      Eigen::Index c = col;
      for (Eigen::Index p = 0; p < left.cols(); ++p)
        for (Eigen::Index q = 0; q < right.cols(); ++q) out.col(c++) = left.col(p).cwiseProduct(right.col(q));
      return;
    }
  }
}

}  // namespace detail

/// Design matrix for the listed units at `time`, columns in term order.
inline Matrix build_design(const LongPanel& panel, const ModelSpec& spec, int time, const AdherenceMatrix& adh,
                           std::span<const std::size_t> rows) {
  spec.validate();
  require(time >= 0 && time < panel.n_times(), ErrorCode::InvalidLag, "design time outside the panel");
  Matrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(spec.n_columns()));
  Eigen::Index col = 0;
  for (const auto& term : spec.terms) {
    detail::fill_term(panel, term, time, adh, rows, X, col);
    col += static_cast<Eigen::Index>(term.width());
  }
  return X;
}

/// Design matrix with one row per unit.
inline Matrix build_design(const LongPanel& panel, const ModelSpec& spec, int time, const Regime& regime) {
  const AdherenceMatrix adh = adherence(panel, regime);
  std::vector<std::size_t> rows(panel.n_units());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return build_design(panel, spec, time, adh, rows);
}

struct FitResult {
  Vector coefficients;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  double score_max = 0.0;  ///< max |X'Ω(y - μ)| / rows at the returned coefficients
  Family family = Family::Gaussian;
  Link link = Link::Identity;
  std::vector<std::string> warnings;
};

struct GlmOptions {
  int max_iterations = 100;
  double deviance_tolerance = 1e-10;
  double score_tolerance = 1e-8;
  double rank_tolerance = 1e-12;
  bool throw_on_nonconvergence = true;
};

/**
 * Weighted least squares with a reusable factorization of sqrt(w) X.
 * Rank is decided by the column-pivoted QR with threshold tol * max pivot.
 */
class WeightedLeastSquares {
 public:
  WeightedLeastSquares(const Matrix& X, const Vector& w, double rank_tolerance = 1e-12) : sqrt_w_(w.cwiseSqrt()) {
    qr_.setThreshold(rank_tolerance);
    qr_.compute(sqrt_w_.asDiagonal() * X);
    if (qr_.rank() < X.cols()) {
      fail(ErrorCode::RankDeficient, "design of " + std::to_string(X.cols()) + " columns has rank " +
                                         std::to_string(qr_.rank()));
    }
  }

  Vector solve(const Vector& y) const { return qr_.solve(sqrt_w_.cwiseProduct(y)); }

 private:
  Vector sqrt_w_;
  Eigen::ColPivHouseholderQR<Matrix> qr_;
};

namespace detail {

inline double binomial_deviance(const Vector& y, const Vector& mu, const Vector& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = y[i], mi = mu[i];
    double d = 0.0;
    if (yi > 0.0) d += yi * std::log(yi / mi);
    if (yi < 1.0) d += (1.0 - yi) * std::log((1.0 - yi) / (1.0 - mi));
    dev += 2.0 * w[i] * d;
  }
  return dev;
}

inline double score_max(const Matrix& X, const Vector& y, const Vector& mu, const Vector& w) {
  if (X.rows() == 0) return 0.0;
  const Vector s = X.transpose() * (w.cwiseProduct(y - mu));
  return s.cwiseAbs().maxCoeff() / static_cast<double>(X.rows());
}

constexpr double kMuEps = 1e-15;

}  // namespace detail

/**
 * Weighted GLM fit by iteratively reweighted least squares.
 *
 * Rows with zero weight are dropped. Converged means the relative deviance
 * change fell below the tolerance and the scaled score is below its
 * tolerance. Quasibinomial accepts any response in [0, 1].
 */
inline FitResult fit_glm(const Matrix& X, const Vector& y, const Vector& weights, const Vector& offset, Family family,
                         Link link, const GlmOptions& opt = {}) {
  ModelSpec{{}, family, link}.validate();
  const Eigen::Index n = X.rows(), p = X.cols();
  require(y.size() == n && weights.size() == n && offset.size() == n, ErrorCode::DimensionMismatch,
          "X, y, weights and offset must have equal row counts");

  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(weights[i] >= 0.0 && std::isfinite(weights[i]), ErrorCode::InvalidSpec, "weights must be nonnegative");
    require(std::isfinite(y[i]) && std::isfinite(offset[i]), ErrorCode::InvalidSpec, "non-finite response or offset");
    if (weights[i] > 0.0) keep.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(keep.size());
  require(m >= p && m > 0, ErrorCode::RankDeficient, "fewer positive-weight rows than columns");
  Matrix Xr(m, p);
  Vector yr(m), wr(m), offr(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    Xr.row(r) = X.row(keep[r]);
    yr[r] = y[keep[r]];
    wr[r] = weights[keep[r]];
    offr[r] = offset[keep[r]];
  }

  FitResult fit;
  fit.family = family;
  fit.link = link;

  if (family == Family::Gaussian) {
    const WeightedLeastSquares wls(Xr, wr, opt.rank_tolerance);
    fit.coefficients = wls.solve(yr - offr);
    const Vector mu = Xr * fit.coefficients + offr;
    fit.deviance = wr.dot((yr - mu).cwiseAbs2());
    fit.iterations = 1;
    fit.score_max = detail::score_max(Xr, yr, mu, wr);
    fit.converged = true;
    return fit;
  }

  for (Eigen::Index i = 0; i < m; ++i)
    require(yr[i] >= 0.0 && yr[i] <= 1.0, ErrorCode::InvalidSpec, "binomial response outside [0, 1]");

  Vector mu(m), eta(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    mu[i] = (yr[i] + 0.5) / 2.0;
    eta[i] = logit(mu[i]);
  }
  double dev_old = detail::binomial_deviance(yr, mu, wr);
  Vector beta = Vector::Zero(p);
  bool have_beta = false;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    Vector var = mu.cwiseProduct(Vector::Ones(m) - mu).cwiseMax(detail::kMuEps);
    Vector z = (eta - offr) + (yr - mu).cwiseQuotient(var);
    const WeightedLeastSquares wls(Xr, wr.cwiseProduct(var), opt.rank_tolerance);
    Vector beta_new = wls.solve(z);

    auto evaluate = [&](const Vector& b, Vector& eta_out, Vector& mu_out) {
      eta_out = Xr * b + offr;
      mu_out = eta_out.unaryExpr([](double e) {
        return std::clamp(expit(e), detail::kMuEps, 1.0 - detail::kMuEps);
      });
      return detail::binomial_deviance(yr, mu_out, wr);
    };
    Vector eta_new, mu_new;
    double dev = evaluate(beta_new, eta_new, mu_new);
    for (int half = 0; !std::isfinite(dev) && have_beta && half < 30; ++half) {
      beta_new = 0.5 * (beta_new + beta);
      dev = evaluate(beta_new, eta_new, mu_new);
    }
    require(std::isfinite(dev), ErrorCode::NotConverged, "non-finite deviance in IRLS");

    beta = beta_new;
    have_beta = true;
    eta = eta_new;
    mu = mu_new;
    fit.iterations = it;
    const bool dev_ok = std::abs(dev - dev_old) / (std::abs(dev) + 0.1) < opt.deviance_tolerance;
    dev_old = dev;
    fit.score_max = detail::score_max(Xr, yr, mu, wr);
    if (dev_ok && fit.score_max < opt.score_tolerance) {
      fit.converged = true;
      break;
    }
  }

  fit.coefficients = beta;
  fit.deviance = dev_old;
  const double max_abs = p > 0 ? beta.cwiseAbs().maxCoeff() : 0.0;
  const bool boundary = (mu.array() < 1e-10).any() || (mu.array() > 1.0 - 1e-10).any();
  if (max_abs > 30.0 || boundary) {
    fit.warnings.emplace_back("fitted probabilities numerically 0 or 1 (max |coef| = " + std::to_string(max_abs) +
                              "); possible separation");
  }
  if (!fit.converged && opt.throw_on_nonconvergence) {
    fail(ErrorCode::NotConverged, "IRLS did not converge in " + std::to_string(fit.iterations) + " iterations");
  }
  return fit;
}

/**
 * Intercept-only logit fit with a fixed offset, y in [0, 1]: solves
 * Σ w (y - expit(offset + ε)) = 0 by safeguarded Newton steps. Same result
 * as fit_glm on a column of ones, without the deviance bookkeeping.
 */
inline FitResult fit_offset_intercept_logit(const Vector& y, const Vector& w, const Vector& offset,
                                            const GlmOptions& opt = {}) {
  const Eigen::Index n = y.size();
  require(w.size() == n && offset.size() == n, ErrorCode::DimensionMismatch,
          "y, weights and offset must have equal row counts");
  require(n > 0 && w.sum() > 0.0, ErrorCode::RankDeficient, "no positive-weight rows");
  FitResult fit;
  fit.family = Family::Quasibinomial;
  fit.link = Link::Logit;
  const double target = w.dot(y);
  double eps = 0.0;
  auto score_info = [&](double e, double& info) {
    double s = 0.0;
    info = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = expit(offset[i] + e);
      s += w[i] * mu;
      info += w[i] * mu * (1.0 - mu);
    }
    return target - s;
  };
  double info = 0.0;
  double s = score_info(eps, info);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    fit.iterations = it;
    if (std::abs(s) / static_cast<double>(n) < opt.score_tolerance * 1e-3) break;
    double step = s / std::max(info, 1e-300);
    step = std::clamp(step, -5.0, 5.0);
    double info_new = 0.0;
    double s_new = score_info(eps + step, info_new);
    for (int half = 0; std::abs(s_new) > std::abs(s) && half < 30; ++half) {
      step *= 0.5;
      s_new = score_info(eps + step, info_new);
    }
    eps += step;
    s = s_new;
    info = info_new;
    if (std::abs(step) < 1e-12 * (1.0 + std::abs(eps))) break;
  }
  fit.coefficients = Vector::Constant(1, eps);
  fit.score_max = std::abs(s) / static_cast<double>(n);
  fit.converged = std::isfinite(eps) && fit.score_max < opt.score_tolerance;
  require(fit.converged || !opt.throw_on_nonconvergence, ErrorCode::NotConverged,
          "offset logit fluctuation did not converge");
  return fit;
}

enum class Scale { Response, Linear };

inline Vector predict(const FitResult& fit, const Matrix& X, const Vector& offset, Scale scale = Scale::Response) {
  require(X.cols() == fit.coefficients.size(), ErrorCode::DimensionMismatch,
          "design has " + std::to_string(X.cols()) + " columns, model has " +
              std::to_string(fit.coefficients.size()));
  require(offset.size() == X.rows(), ErrorCode::DimensionMismatch, "offset length differs from rows");
  Vector eta = X * fit.coefficients + offset;
  if (scale == Scale::Linear || fit.link == Link::Identity) return eta;
  return eta.unaryExpr([](double e) { return expit(e); });
}

}  // namespace ptgf
