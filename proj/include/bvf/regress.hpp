#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bvf/error.hpp"

namespace bvf {

// ---------------------------------------------------------------------------
// Student t distribution

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InputError("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for T ~ t(df).
inline double t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InputError("t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

inline double t_cdf(double t, double df) {
  const double tail = 0.5 * t_two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

/// Inverse CDF by bisection on the implemented CDF.
inline double t_quantile(double q, double df) {
  if (!(q > 0.0 && q < 1.0)) throw InputError("t_quantile: q must lie in (0, 1)");
  if (q == 0.5) return 0.0;
  if (q < 0.5) return -t_quantile(1.0 - q, df);
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, df) < q) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) return hi;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf(mid, df) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Ordinary least squares

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct LinearModel {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
  std::size_t point_count = 0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  double residual_se = 0.0;
  // Kept so that intervals can be formed after the fit.
  double x_mean = 0.0;
  double sxx = 0.0;

  double operator()(double x) const { return slope * x + intercept; }

  /// Confidence interval for the mean response at x.
  Interval mean_interval(double x, double level = 0.95) const { return band(x, level, 0.0); }
  /// Prediction interval for a new observation at x.
  Interval prediction_interval(double x, double level = 0.95) const { return band(x, level, 1.0); }

 private:
  Interval band(double x, double level, double extra) const {
    if (point_count < 3) throw FitError("interval needs at least 3 points (df >= 1)");
    const double df = static_cast<double>(point_count - 2);
    const double tq = t_quantile(0.5 + 0.5 * level, df);
    const double m = static_cast<double>(point_count);
    const double half =
        tq * residual_se * std::sqrt(extra + 1.0 / m + (x - x_mean) * (x - x_mean) / sxx);
    const double y = (*this)(x);
    return {y - half, y + half};
  }
};

/// Least-squares line through (x, y) points with R^2 and standard errors.
/// R^2 is reported as 1 when all y are equal.
inline LinearModel ols(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw FitError("ols needs at least 2 points");
  // Sums are accumulated in extended precision and rounded once.
  using wide = long double;
  const wide m = static_cast<wide>(points.size());
  wide sx = 0, sy = 0;
  for (auto [x, y] : points) {
    if (!std::isfinite(x) || !std::isfinite(y)) throw FitError("ols: non-finite point");
    sx += x;
    sy += y;
  }
  const wide xm = sx / m, ym = sy / m;
  wide sxx = 0, sxy = 0, syy = 0;
  for (auto [x, y] : points) {
    sxx += (x - xm) * (x - xm);
    sxy += (x - xm) * (y - ym);
    syy += (y - ym) * (y - ym);
  }
  if (!(sxx > 0)) throw FitError("ols: all x values are equal");

  const wide slope = sxy / sxx, intercept = ym - slope * xm;
  LinearModel fit;
  fit.slope = static_cast<double>(slope);
  fit.intercept = static_cast<double>(intercept);
  fit.point_count = points.size();
  fit.x_mean = static_cast<double>(xm);
  fit.sxx = static_cast<double>(sxx);
  wide ss_res = 0;
  for (auto [x, y] : points) {
    const wide r = y - (slope * x + intercept);
    ss_res += r * r;
  }
  fit.r2 = syy > 0 ? std::clamp(static_cast<double>(1 - ss_res / syy), 0.0, 1.0) : 1.0;
  if (points.size() > 2) {
    fit.residual_se = static_cast<double>(std::sqrt(ss_res / (m - 2)));
    fit.slope_se = static_cast<double>(std::sqrt(ss_res / (m - 2) / sxx));
    fit.intercept_se = static_cast<double>(std::sqrt(ss_res / (m - 2) * (1 / m + xm * xm / sxx)));
  }
  return fit;
}

/// The constant minimising mean squared error: the arithmetic mean.
inline double constant_fit(std::span<const double> values) {
  if (values.empty()) throw FitError("constant_fit: no values");
  long double s = 0;
  for (double v : values) s += v;
  return static_cast<double>(s / static_cast<long double>(values.size()));
}

// ---------------------------------------------------------------------------
// Power law  e(n) = a * n^b + asymptote,  a > 0, b < 0, asymptote fixed

struct PowerLawModel {
  double a = 0.0;
  double b = 0.0;
  double asymptote = 0.0;
  double residual_se = 0.0;
  double a_se = 0.0;
  double b_se = 0.0;
  std::size_t point_count = 0;
  bool robust = false;
  bool converged = true;
  int iterations = 0;

  double operator()(double n) const { return a * std::pow(n, b) + asymptote; }
};

inline constexpr double kPowerLawMinExponent = -3.0;
inline constexpr double kPowerLawMaxExponent = -0.001;

namespace detail {

struct PowerLawPoints {
  std::vector<double> n, y;  // y = e - asymptote
};

struct ProfileFit {
  double a = 0.0, b = 0.0, sse = 0.0;
};

/// Optimal a >= 0 for fixed b, and the resulting weighted SSE.
inline ProfileFit profile(const PowerLawPoints& p, std::span<const double> w, double b) {
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < p.n.size(); ++i) {
    const double x = std::pow(p.n[i], b);
    sxy += w[i] * x * p.y[i];
    sxx += w[i] * x * x;
  }
  const double a = sxx > 0.0 ? std::max(0.0, sxy / sxx) : 0.0;
  double sse = 0.0;
  for (std::size_t i = 0; i < p.n.size(); ++i) {
    const double r = p.y[i] - a * std::pow(p.n[i], b);
    sse += w[i] * r * r;
  }
  return {a, b, sse};
}

/// Coarse grid over b, then golden-section refinement to |db| < 1e-8.
inline ProfileFit weighted_power_fit(const PowerLawPoints& p, std::span<const double> w) {
  constexpr int kGrid = 300;
  constexpr double lo = kPowerLawMinExponent, hi = kPowerLawMaxExponent;
  const double step = (hi - lo) / kGrid;
  ProfileFit best = profile(p, w, lo);
  int best_i = 0;
  for (int i = 1; i <= kGrid; ++i) {
    const auto f = profile(p, w, lo + step * i);
    if (f.sse < best.sse) {
      best = f;
      best_i = i;
    }
  }
  double left = lo + step * std::max(0, best_i - 1);
  double right = lo + step * std::min(kGrid, best_i + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = right - inv_phi * (right - left);
  double x2 = left + inv_phi * (right - left);
  auto f1 = profile(p, w, x1);
  auto f2 = profile(p, w, x2);
  while (right - left > 1e-8) {
    if (f1.sse <= f2.sse) {
      right = x2;
      x2 = x1;
      f2 = f1;
      x1 = right - inv_phi * (right - left);
      f1 = profile(p, w, x1);
    } else {
      left = x1;
      x1 = x2;
      f1 = f2;
      x2 = left + inv_phi * (right - left);
      f2 = profile(p, w, x2);
    }
  }
  for (const auto& f : {f1, f2, profile(p, w, 0.5 * (left + right))})
    if (f.sse < best.sse) best = f;
  return best;
}

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

}  // namespace detail

/// Weighted least-squares fit of a * n^b + asymptote with the asymptote held
/// fixed. With `robust`, Huber weights are applied by iteratively reweighted
/// least squares; the tuning constant is 1.345 times the robust residual scale
/// (1.4826 * median absolute residual) of the current iterate.
inline PowerLawModel fit_power_law(std::span<const std::pair<double, double>> points, double asymptote,
                                   bool robust) {
  if (points.size() < 2) throw FitError("power-law fit needs at least 2 points");
  detail::PowerLawPoints p;
  std::size_t above = 0;
  for (auto [n, e] : points) {
    if (!(n > 0.0) || !std::isfinite(n) || !std::isfinite(e))
      throw FitError("power-law fit: sizes must be positive and errors finite");
    p.n.push_back(n);
    p.y.push_back(e - asymptote);
    if (e > asymptote) ++above;
  }
  if (above < 2) throw FitError("power-law fit: fewer than 2 points lie above the asymptote");

  const std::size_t m = points.size();
  std::vector<double> w(m, 1.0);
  auto fit = detail::weighted_power_fit(p, w);

  PowerLawModel model;
  model.asymptote = asymptote;
  model.point_count = m;
  model.robust = robust;
  model.iterations = 1;

  if (robust) {
    constexpr int kMaxIter = 50;
    constexpr double kHuber = 1.345;
    double scale_floor = 0.0;
    for (double y : p.y) scale_floor = std::max(scale_floor, std::fabs(y));
    scale_floor = 1e-12 * (1.0 + scale_floor);
    model.converged = false;
    for (int iter = 0; iter < kMaxIter; ++iter) {
      std::vector<double> abs_res(m);
      for (std::size_t i = 0; i < m; ++i)
        abs_res[i] = std::fabs(p.y[i] - fit.a * std::pow(p.n[i], fit.b));
      const double scale = std::max(1.4826 * detail::median(abs_res), scale_floor);
      const double k = kHuber * scale;
      for (std::size_t i = 0; i < m; ++i) w[i] = abs_res[i] <= k ? 1.0 : k / abs_res[i];
      const auto next = detail::weighted_power_fit(p, w);
      const double change = std::max(std::fabs(next.a - fit.a), std::fabs(next.b - fit.b));
      fit = next;
      model.iterations = iter + 2;
      if (change < 1e-10) {
        model.converged = true;
        break;
      }
    }
  }

  if (!(fit.a > 0.0)) throw FitError("power-law fit: data show no decreasing trend above the asymptote");
  model.a = fit.a;
  model.b = fit.b;

  // Asymptotic standard errors from the weighted Jacobian.
  double jaa = 0.0, jab = 0.0, jbb = 0.0, sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = std::pow(p.n[i], fit.b);
    const double da = x, db = fit.a * x * std::log(p.n[i]);
    jaa += w[i] * da * da;
    jab += w[i] * da * db;
    jbb += w[i] * db * db;
    const double r = p.y[i] - fit.a * x;
    sse += w[i] * r * r;
  }
  model.residual_se = m > 2 ? std::sqrt(sse / static_cast<double>(m - 2)) : 0.0;
  const double det = jaa * jbb - jab * jab;
  if (det > 0.0) {
    const double s2 = model.residual_se * model.residual_se;
    model.a_se = std::sqrt(s2 * jbb / det);
    model.b_se = std::sqrt(s2 * jaa / det);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Paired t-test

struct TTestResult {
  double t = 0.0;
  int df = 1;
  double p_two_sided = 1.0;
  /// Zero spread with a nonzero mean difference: t is infinite and p is 0.
  bool degenerate = false;
};

/// Paired test on (predicted, observed) pairs; differences are predicted - observed.
inline TTestResult paired_t_test(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) throw InputError("paired t-test needs at least 2 pairs");
  const double m = static_cast<double>(pairs.size());
  double mean = 0.0;
  for (auto [pred, obs] : pairs) mean += pred - obs;
  mean /= m;
  double ss = 0.0;
  for (auto [pred, obs] : pairs) ss += (pred - obs - mean) * (pred - obs - mean);
  const double sd = std::sqrt(ss / (m - 1.0));

  TTestResult r;
  r.df = static_cast<int>(pairs.size()) - 1;
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_two_sided = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(m));
  r.p_two_sided = std::clamp(t_two_sided_p(r.t, r.df), 0.0, 1.0);
  return r;
}

}  // namespace bvf
