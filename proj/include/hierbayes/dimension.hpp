#pragma once

// Local metric dimension from Hellinger-ball measures: -log P(B_eps) regressed
// on log(1/eps) over a geometric eps grid.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "linear_gaussian.hpp"
#include "model.hpp"

namespace hierbayes {

class InsufficientResolution : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BallMeasure {
  double probability = 0.0;
  double std_error = 0.0;
  std::size_t hits = 0;
  std::size_t samples = 0;
};

struct DimensionOptions {
  double eps_max = 0.5;
  double ratio = 0.5;
  std::size_t max_levels = 40;
  std::size_t samples = 1'000'000;
  std::size_t min_hits = 30;
  double r2_threshold = 0.95;
  unsigned threads = 1;
};

struct DimensionEstimate {
  double dim = 0.0;
  std::vector<double> epsilons;           // retained levels, decreasing
  std::vector<double> ball_measures;
  std::vector<double> std_errors;
  std::vector<double> log_ball_measures;  // -log P(B_eps)
  std::vector<std::size_t> hits_per_epsilon;
  double slope_r2 = 0.0;
  bool low_fit = false;  // slope_r2 below the configured threshold
  SlopeFit fit;
};

namespace detail {

/// Per-level sums for pooled, possibly weighted, ball indicators.
struct BallCounts {
  std::vector<double> w;
  std::vector<double> w2;
  std::vector<std::size_t> hits;
  std::size_t samples = 0;

  void resize(std::size_t levels) {
    if (w.empty()) {
      w.assign(levels, 0.0);
      w2.assign(levels, 0.0);
      hits.assign(levels, 0);
    }
  }
  /// Records a draw at Hellinger distance `d` (square-rooted) with weight `weight`.
  void add(double d, double weight, const DimensionOptions& opts) {
    ++samples;
    if (d > opts.eps_max) return;
    std::size_t last = opts.max_levels - 1;
    if (d > 0.0) {
      const double j = std::floor(std::log(d / opts.eps_max) / std::log(opts.ratio));
      last = std::min(last, static_cast<std::size_t>(std::max(j, 0.0)));
      // Guard the floor against rounding at level boundaries.
      while (last > 0 && d > opts.eps_max * std::pow(opts.ratio, static_cast<double>(last))) --last;
      while (last + 1 < opts.max_levels && d <= opts.eps_max * std::pow(opts.ratio, static_cast<double>(last + 1)))
        ++last;
    }
    w[last] += weight;
    w2[last] += weight * weight;
    ++hits[last];
  }
  void merge(const BallCounts& o) {
    if (o.w.empty()) return;
    resize(o.w.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] += o.w[k];
      w2[k] += o.w2[k];
      hits[k] += o.hits[k];
    }
    samples += o.samples;
  }
};

template <typename Draw>
BallCounts pooled_ball_counts(const DimensionOptions& opts, const SeedSpec& seed, Draw&& draw) {
  if (!(opts.eps_max > 0.0) || !(opts.ratio > 0.0 && opts.ratio < 1.0) || opts.max_levels < 3)
    throw RejectedInput("dimension: need eps_max > 0, ratio in (0, 1) and at least 3 levels");
  if (opts.min_hits < 30) throw RejectedInput("dimension: min_hits must be at least 30");
  if (opts.samples == 0) throw RejectedInput("dimension: samples must be positive");
  return chunked_reduce<BallCounts>(opts.samples, 8192, seed, opts.threads,
                                    [&](Rng& rng, std::size_t b, std::size_t e, BallCounts& acc) {
                                      acc.resize(opts.max_levels);
                                      for (std::size_t s = b; s < e; ++s) {
                                        const auto [d, weight] = draw(rng);
                                        acc.add(d, weight, opts);
                                      }
                                    });
}

inline DimensionEstimate fit_dimension(const BallCounts& counts, const DimensionOptions& opts) {
  DimensionEstimate out;
  const double N = static_cast<double>(counts.samples);
  double cw = 0.0, cw2 = 0.0;
  std::size_t ch = 0;
  // Cumulate from the smallest ball outwards, then walk the grid downwards.
  std::vector<double> p(opts.max_levels), se(opts.max_levels);
  std::vector<std::size_t> hits(opts.max_levels);
  for (std::size_t k = opts.max_levels; k-- > 0;) {
    cw += counts.w[k];
    cw2 += counts.w2[k];
    ch += counts.hits[k];
    p[k] = cw / N;
    se[k] = std::sqrt(std::max(cw2 / N - p[k] * p[k], 0.0) / N);
    hits[k] = ch;
  }
  std::vector<double> x, y, wts;
  for (std::size_t k = 0; k < opts.max_levels; ++k) {
    if (hits[k] < opts.min_hits || !(p[k] > 0.0)) break;
    const double eps = opts.eps_max * std::pow(opts.ratio, static_cast<double>(k));
    out.epsilons.push_back(eps);
    out.ball_measures.push_back(p[k]);
    out.std_errors.push_back(se[k]);
    out.log_ball_measures.push_back(-std::log(p[k]));
    out.hits_per_epsilon.push_back(hits[k]);
    x.push_back(std::log(1.0 / eps));
    y.push_back(-std::log(p[k]));
    // Var(-log P) ~ (SE / P)^2, floored at one draw's worth of resolution.
    const double rel = std::max(se[k] / p[k], 1.0 / N);
    wts.push_back(1.0 / (rel * rel));
  }
  if (x.size() < 3)
    throw InsufficientResolution("dimension: only " + std::to_string(x.size()) + " eps levels have at least " +
                                 std::to_string(opts.min_hits) + " hits; increase samples or eps_max");
  out.fit = fit_line(x, y, wts, SlopeVariable::ln_inv_eps);
  out.dim = std::max(out.fit.slope, 0.0);
  out.slope_r2 = out.fit.r2;
  out.low_fit = out.slope_r2 < opts.r2_threshold;
  return out;
}

}  // namespace detail

/// Fraction of hyper-prior draws pi with Delta_H^{1/2}(center, pi) <= eps.
inline BallMeasure ball_measure(const HierarchicalModel& model, const Vector& center, double eps, std::size_t samples,
                                const SeedSpec& seed, unsigned threads = 1) {
  if (!model.prior_hellinger_sq) throw RejectedInput("ball_measure: instance lacks Delta_H between priors");
  if (!(eps > 0.0)) throw RejectedInput("ball_measure: eps must be positive");
  struct Acc {
    std::size_t hits = 0, n = 0;
    void merge(const Acc& o) {
      hits += o.hits;
      n += o.n;
    }
  };
  const Acc acc = chunked_reduce<Acc>(samples, 8192, seed, threads, [&](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
    for (std::size_t s = b; s < e; ++s) {
      const Vector pi = model.hyper_sample(rng);
      if (std::sqrt(model.prior_hellinger_sq(center, pi)) <= eps) ++a.hits;
      ++a.n;
    }
  });
  BallMeasure out;
  out.samples = acc.n;
  out.hits = acc.hits;
  out.probability = static_cast<double>(acc.hits) / static_cast<double>(acc.n);
  out.std_error = std::sqrt(out.probability * (1.0 - out.probability) / static_cast<double>(acc.n));
  return out;
}

/// dim_{P_Pi}(center) from balls over pooled hyper-prior draws.
inline DimensionEstimate estimate_local_dimension(const HierarchicalModel& model, const Vector& center,
                                                  const DimensionOptions& opts, const SeedSpec& seed) {
  if (!model.prior_hellinger_sq) throw RejectedInput("estimate_local_dimension: instance lacks Delta_H");
  const auto counts = detail::pooled_ball_counts(opts, seed, [&](Rng& rng) {
    const Vector pi = model.hyper_sample(rng);
    return std::pair{std::sqrt(model.prior_hellinger_sq(center, pi)), 1.0};
  });
  return detail::fit_dimension(counts, opts);
}

enum class TaskMeasure { mixture, fixed_pi };

/// dim of P_{Theta^n} (or P_{Theta^n | pi}) at the stacked task vector `center`,
/// with the Hellinger distance between the product likelihoods over Z^n.
///
/// Draws are taken by importance sampling in the latent coordinates
/// (x_a^i, pi, e_i), theta_i = (x_a^i, pi + sigma_pi e_i): the proposal is an
/// equal mixture of Gaussians centred on `center` with widths matched to each
/// eps level, and the sigma_pi noise is drawn from the model itself.
inline DimensionEstimate dimension_product_law(const LinearGaussianStructure& s, const Vector& center, std::size_t n,
                                               TaskMeasure measure, const DimensionOptions& opts,
                                               const SeedSpec& seed) {
  const int d = s.task_dim();
  if (n == 0 || center.size() != d * static_cast<Eigen::Index>(n))
    throw RejectedInput("dimension_product_law: center must stack n task vectors");
  const Eigen::JacobiSVD<Matrix> svd(s.design);
  const double smin = svd.singularValues().minCoeff();
  if (!(smin > 0.0)) throw RejectedInput("dimension_product_law: design is rank deficient");

  const double nd = static_cast<double>(n);
  Vector center_pi = Vector::Zero(s.b);
  Matrix center_a(s.a, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ti = center.segment(d * static_cast<Eigen::Index>(i), d);
    center_a.col(static_cast<Eigen::Index>(i)) = ti.head(s.a);
    center_pi += ti.tail(s.b) / nd;
  }
  const bool random_pi = measure == TaskMeasure::mixture && s.tau > 0.0 && s.b > 0;
  const bool random_a = s.out_std > 0.0 && s.a > 0;

  // Proposal widths: the theta-space radius of each eps ball. Levels stop once
  // the ball radius approaches the delta-smoothing width, below which the
  // per-task shared blocks separate and the measured dimension changes.
  const double smoothing = 10.0 * s.sigma_pi * std::sqrt(nd * std::max(s.b, 1));
  std::vector<double> widths;
  for (std::size_t k = 0; k < opts.max_levels; ++k) {
    const double eps = opts.eps_max * std::pow(opts.ratio, static_cast<double>(k));
    const double rho = 2.0 * s.noise_std * eps / smin;
    if (s.b > 0 && rho < smoothing) break;
    widths.push_back(rho);
  }
  if (widths.size() < 3)
    throw InsufficientResolution("dimension_product_law: fewer than 3 eps levels lie above the smoothing width; "
                                 "decrease sigma_pi or increase eps_max");
  DimensionOptions local = opts;
  local.max_levels = widths.size();
  const double log_components = std::log(static_cast<double>(widths.size()));
  const int dim_a = random_a ? s.a * static_cast<int>(n) : 0;
  const int dim_pi = random_pi ? s.b : 0;

  const auto counts = detail::pooled_ball_counts(local, seed, [&](Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, widths.size() - 1);
    const double rho = widths[pick(rng)];
    Matrix xa = center_a;
    Vector pi = measure == TaskMeasure::mixture && !random_pi ? s.hyper_mean : center_pi;
    if (random_a)
      for (Eigen::Index i = 0; i < xa.cols(); ++i)
        for (Eigen::Index k = 0; k < xa.rows(); ++k) xa(k, i) += rho * standard_normal(rng);
    if (random_pi)
      for (Eigen::Index k = 0; k < pi.size(); ++k) pi[k] += rho / std::sqrt(nd) * standard_normal(rng);

    // log p / log q over the proposal coordinates.
    double log_p = 0.0;
    double sq_a = 0.0, sq_pi = 0.0;
    if (random_a) {
      for (Eigen::Index i = 0; i < xa.cols(); ++i) {
        log_p += iso_normal_log_pdf(xa.col(i), s.out_mean, s.out_std);
        sq_a += (xa.col(i) - center_a.col(i)).squaredNorm();
      }
    }
    if (random_pi) {
      log_p += iso_normal_log_pdf(pi, s.hyper_mean, s.tau);
      sq_pi = nd * (pi - center_pi).squaredNorm();
    }
    std::vector<double> comps;
    comps.reserve(widths.size());
    for (double r : widths) {
      const double dims = static_cast<double>(dim_a + dim_pi);
      comps.push_back(-0.5 * dims * kLog2Pi - dims * std::log(r) + 0.5 * dim_pi * std::log(nd) -
                      0.5 * (sq_a + sq_pi) / (r * r));
    }
    const double log_q = log_sum_exp(comps) - log_components;
    const double weight = dim_a + dim_pi == 0 ? 1.0 : std::exp(log_p - log_q);

    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Vector ti(d);
      ti.head(s.a) = xa.col(static_cast<Eigen::Index>(i));
      ti.tail(s.b) = pi + s.sigma_pi * Vector(Vector::NullaryExpr(s.b, [&](Eigen::Index) { return standard_normal(rng); }));
      const Vector delta = s.design * (ti - center.segment(d * static_cast<Eigen::Index>(i), d));
      sq += delta.squaredNorm();
    }
    const double hsq = -2.0 * std::expm1(-sq / (8.0 * s.noise_std * s.noise_std));
    return std::pair{std::sqrt(hsq), weight};
  });
  return detail::fit_dimension(counts, local);
}

}  // namespace hierbayes
