#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace bvf::testing {

/// Exact rational arithmetic on 64-bit integers (small inputs only).
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational(std::int64_t n = 0, std::int64_t d = 1) : num(n), den(d) { normalize(); }
  void normalize() {
    if (den < 0) num = -num, den = -den;
    const auto g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) num /= g, den /= g;
  }
  friend Rational operator+(Rational a, Rational b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
  friend Rational operator-(Rational a, Rational b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }
  friend Rational operator*(Rational a, Rational b) { return {a.num * b.num, a.den * b.den}; }
  friend Rational operator/(Rational a, Rational b) { return {a.num * b.den, a.den * b.num}; }
  friend bool operator==(Rational a, Rational b) { return a.num == b.num && a.den == b.den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct RationalLine {
  Rational slope, intercept, r2;
};

/// Normal equations solved exactly for integer points.
inline RationalLine exact_ols(std::span<const std::pair<std::int64_t, std::int64_t>> pts) {
  Rational n(static_cast<std::int64_t>(pts.size())), sx, sy, sxx, sxy;
  for (auto [x, y] : pts) {
    sx = sx + Rational(x);
    sy = sy + Rational(y);
    sxx = sxx + Rational(x * x);
    sxy = sxy + Rational(x * y);
  }
  const Rational slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const Rational intercept = (sy - slope * sx) / n;
  const Rational ym = sy / n;
  Rational ss_res, ss_tot;
  for (auto [x, y] : pts) {
    const Rational r = Rational(y) - (slope * Rational(x) + intercept);
    const Rational d = Rational(y) - ym;
    ss_res = ss_res + r * r;
    ss_tot = ss_tot + d * d;
  }
  return {slope, intercept, Rational(1) - ss_res / ss_tot};
}

/// Student t density.
inline double t_density(double t, double df) {
  const double logc = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) - 0.5 * std::log(df * M_PI);
  return std::exp(logc - 0.5 * (df + 1.0) * std::log1p(t * t / df));
}

/// Two-sided p-value by composite Simpson quadrature of the density on [0, |t|].
inline double t_two_sided_p_quadrature(double t, double df, int intervals = 20000) {
  const double x = std::fabs(t);
  if (x == 0.0) return 1.0;
  const double h = x / intervals;
  double s = t_density(0.0, df) + t_density(x, df);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * t_density(i * h, df);
  return 1.0 - 2.0 * (s * h / 3.0);
}

/// One-sided exact binomial sign test: P(X >= wins | n, 1/2).
inline double sign_test_p(int wins, int trials) {
  double p = 0.0;
  for (int k = wins; k <= trials; ++k)
    p += std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) -
                  trials * std::log(2.0));
  return p;
}

}  // namespace bvf::testing
