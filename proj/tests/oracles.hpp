#pragma once

// Independent reference computations for the unit tests. Nothing here calls
// into the library.

#include <cmath>
#include <functional>

namespace oracle {

constexpr double kPi = 3.14159265358979323846;

/// Composite Simpson rule on [a, b] with `intervals` (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int intervals = 20000) {
  if (intervals % 2) ++intervals;
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int k = 1; k < intervals; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

inline double normal_pdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * kPi));
}

/// Integral of (sqrt p - sqrt q)^2 for two 1-D normals.
inline double hellinger_sq_quadrature(double m1, double s1, double m2, double s2) {
  const double lo = std::min(m1 - 12 * s1, m2 - 12 * s2), hi = std::max(m1 + 12 * s1, m2 + 12 * s2);
  return simpson(
      [&](double x) {
        const double d = std::sqrt(normal_pdf(x, m1, s1)) - std::sqrt(normal_pdf(x, m2, s2));
        return d * d;
      },
      lo, hi);
}

/// Integral of p log(p / q) for two 1-D normals.
inline double kl_quadrature(double m1, double s1, double m2, double s2) {
  return simpson(
      [&](double x) {
        const double p = normal_pdf(x, m1, s1);
        if (p <= 0.0) return 0.0;
        const double lp = -0.5 * std::pow((x - m1) / s1, 2) - std::log(s1);
        const double lq = -0.5 * std::pow((x - m2) / s2, 2) - std::log(s2);
        return p * (lp - lq);
      },
      m1 - 14 * s1, m1 + 14 * s1);
}

/// log N(x; 0, [[a, c], [c, b]]) in two dimensions.
inline double bivariate_normal_log_pdf(double x, double y, double a, double b, double c) {
  const double det = a * b - c * c;
  const double q = (b * x * x - 2 * c * x * y + a * y * y) / det;
  return -std::log(2 * kPi) - 0.5 * std::log(det) - 0.5 * q;
}

}  // namespace oracle
