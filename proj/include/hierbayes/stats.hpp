#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hierbayes {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLn2 = 0.69314718055994530942;
inline constexpr double kLog2Pi = 1.83787706640934548356;

/// Streaming mean and variance (Welford), mergeable in a fixed order.
struct MeanAccumulator {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const MeanAccumulator& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double n1 = static_cast<double>(count);
    const double n2 = static_cast<double>(other.count);
    const double delta = other.mean - mean;
    const double n = n1 + n2;
    mean += delta * n2 / n;
    m2 += other.m2 + delta * delta * n1 * n2 / n;
    count += other.count;
  }

  [[nodiscard]] double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  [[nodiscard]] double std_error() const {
    return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
  }
};

/// log(sum(exp(v))) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> values) {
  double hi = -kInf;
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : values) s += std::exp(v - hi);
  return hi + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

enum class SlopeVariable { ln_n, ln_m, ln_inv_eps };

inline std::string to_string(SlopeVariable v) {
  switch (v) {
    case SlopeVariable::ln_n: return "ln_n";
    case SlopeVariable::ln_m: return "ln_m";
    case SlopeVariable::ln_inv_eps: return "ln_inv_eps";
  }
  return "?";
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  SlopeVariable x_variable = SlopeVariable::ln_n;
  std::size_t points_used = 0;
};

/// Weighted least-squares line y = intercept + slope * x. Weights default to 1.
/// A perfectly flat response gives r2 = 1.
inline SlopeFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> w = {},
                         SlopeVariable var = SlopeVariable::ln_n) {
  if (x.size() != y.size() || (!w.empty() && w.size() != x.size()))
    throw std::invalid_argument("fit_line: mismatched input lengths");
  if (x.size() < 3) throw std::invalid_argument("fit_line: at least 3 points required");

  auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(weight(i) > 0.0) || !std::isfinite(weight(i)))
      throw std::invalid_argument("fit_line: weights must be positive and finite");
    sw += weight(i);
    sx += weight(i) * x[i];
    sy += weight(i) * y[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += weight(i) * dx * dx;
    sxy += weight(i) * dx * dy;
    syy += weight(i) * dy * dy;
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: degenerate design (all x equal)");

  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ss_res += weight(i) * r * r;
  }
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  fit.x_variable = var;
  fit.points_used = x.size();
  return fit;
}

}  // namespace hierbayes
