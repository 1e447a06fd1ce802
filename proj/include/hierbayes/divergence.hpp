#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "model.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace hierbayes {

enum class EstimateMethod { closed_form, monte_carlo, quadrature, enumeration };

inline std::string to_string(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::closed_form: return "closed_form";
    case EstimateMethod::monte_carlo: return "monte_carlo";
    case EstimateMethod::quadrature: return "quadrature";
    case EstimateMethod::enumeration: return "enumeration";
  }
  return "?";
}

/// A divergence or information value. Natural-log units for KL; Hellinger
/// squared is dimensionless and lies in [0, 2].
struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  EstimateMethod method = EstimateMethod::closed_form;
  std::size_t sample_count = 0;
  bool support_violation = false;
};

namespace detail {

inline void require_same_length(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size()) throw RejectedInput(std::string(what) + ": vectors differ in length");
}

inline void require_positive_scale(double s, const char* what) {
  if (!(s > 0.0) || !std::isfinite(s)) throw RejectedInput(std::string(what) + ": scale must be positive");
}

}  // namespace detail

/// Delta_H between N(mean1, s^2 I) and N(mean2, s^2 I): 2(1 - exp(-|d|^2 / 8s^2)).
inline DivergenceEstimate hellinger_sq_gaussian(const Vector& mean1, const Vector& mean2, double sigma) {
  detail::require_same_length(mean1, mean2, "hellinger_sq_gaussian");
  detail::require_positive_scale(sigma, "hellinger_sq_gaussian");
  const double d2 = (mean1 - mean2).squaredNorm();
  return {-2.0 * std::expm1(-d2 / (8.0 * sigma * sigma)), 0.0, EstimateMethod::closed_form, 0, false};
}

/// Delta_K between N(mean1, s^2 I) and N(mean2, s^2 I): |d|^2 / 2s^2.
inline DivergenceEstimate kl_gaussian_equal_cov(const Vector& mean1, const Vector& mean2, double sigma) {
  detail::require_same_length(mean1, mean2, "kl_gaussian_equal_cov");
  detail::require_positive_scale(sigma, "kl_gaussian_equal_cov");
  return {(mean1 - mean2).squaredNorm() / (2.0 * sigma * sigma), 0.0, EstimateMethod::closed_form, 0, false};
}

/// KL(N(mean1, cov1) || N(mean2, cov2)).
inline DivergenceEstimate kl_gaussian_general(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                                              const Matrix& cov2) {
  detail::require_same_length(mean1, mean2, "kl_gaussian_general");
  const GaussianDensity p(mean1, cov1);
  const GaussianDensity q(mean2, cov2);
  const double k = static_cast<double>(mean1.size());
  const Matrix cov2_inv_cov1 = q.llt().solve(cov1);
  const Vector diff = mean2 - mean1;
  const double maha = diff.dot(q.llt().solve(diff));
  const double value = 0.5 * (cov2_inv_cov1.trace() + maha - k + q.log_det() - p.log_det());
  return {std::max(value, 0.0), 0.0, EstimateMethod::closed_form, 0, false};
}

using LogDensityFn = std::function<double(const Vector&)>;
using SamplerFn = std::function<Vector(Rng&)>;

/// Monte Carlo KL(p || q) = E_p[log p - log q]. A draw where q has zero density
/// yields +inf with the support-violation flag set.
inline DivergenceEstimate kl_monte_carlo(const LogDensityFn& p_log_density, const LogDensityFn& q_log_density,
                                         const SamplerFn& p_sampler, std::size_t samples, const SeedSpec& seed,
                                         unsigned threads = 1) {
  if (samples == 0) throw RejectedInput("kl_monte_carlo: sample count must be positive");
  struct Acc {
    MeanAccumulator stats;
    bool violation = false;
    void merge(const Acc& o) {
      stats.merge(o.stats);
      violation = violation || o.violation;
    }
  };
  const Acc acc = chunked_reduce<Acc>(samples, 4096, seed, threads, [&](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
    for (std::size_t i = b; i < e; ++i) {
      const Vector x = p_sampler(rng);
      const double lq = q_log_density(x);
      if (lq == -kInf) {
        a.violation = true;
        continue;
      }
      a.stats.add(p_log_density(x) - lq);
    }
  });
  if (acc.violation) return {kInf, 0.0, EstimateMethod::monte_carlo, samples, true};
  return {acc.stats.mean, acc.stats.std_error(), EstimateMethod::monte_carlo, samples, false};
}

/// Shannon entropy in bits of a probability vector.
inline double entropy_bits(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

inline double entropy_bits(const Vector& probs) { return entropy_bits(std::span<const double>(probs.data(), probs.size())); }

/// Entropy in bits of the uniform distribution on `count` points.
inline double uniform_entropy_bits(double count) { return std::log2(count); }

/// KL(p || q) in nats between discrete distributions on a shared support.
inline DivergenceEstimate kl_discrete(const Vector& p, const Vector& q) {
  detail::require_same_length(p, q, "kl_discrete");
  double v = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return {kInf, 0.0, EstimateMethod::enumeration, 0, true};
    v += p[i] * std::log(p[i] / q[i]);
  }
  return {std::max(v, 0.0), 0.0, EstimateMethod::enumeration, 0, false};
}

inline DivergenceEstimate hellinger_sq_discrete(const Vector& p, const Vector& q) {
  detail::require_same_length(p, q, "hellinger_sq_discrete");
  const double bc = (p.array().sqrt() * q.array().sqrt()).sum();
  return {std::clamp(2.0 - 2.0 * bc, 0.0, 2.0), 0.0, EstimateMethod::enumeration, 0, false};
}

struct FeynmanCheck {
  double lhs = 0.0;  // -E_V log E_W exp(u)
  double rhs = 0.0;  // -log E_W exp(E_V u)
  bool holds = false;
};

/// Evaluates both sides of -E_V log E_W e^u <= -log E_W e^{E_V u} for independent
/// finite W, V with marginals `pw`, `pv` and `u(w, v)` given as a |W| x |V| table.
inline FeynmanCheck check_feynman_inequality(const Vector& pw, const Vector& pv, const Matrix& u) {
  if (u.rows() != pw.size() || u.cols() != pv.size())
    throw RejectedInput("check_feynman_inequality: table shape does not match marginals");
  auto log_mean_exp_w = [&](const Vector& values) {
    std::vector<double> terms;
    for (Eigen::Index w = 0; w < pw.size(); ++w)
      if (pw[w] > 0.0) terms.push_back(std::log(pw[w]) + values[w]);
    return log_sum_exp(terms);
  };
  FeynmanCheck out;
  for (Eigen::Index v = 0; v < pv.size(); ++v)
    if (pv[v] > 0.0) out.lhs -= pv[v] * log_mean_exp_w(u.col(v));
  out.rhs = -log_mean_exp_w(u * pv);
  out.holds = out.lhs <= out.rhs + 1e-12;
  return out;
}

struct DominationCertificate {
  double alpha = 1.0;  // max observed Delta_K / Delta_H
  std::size_t tested_pairs = 0;
  double max_ratio_observed = 1.0;
  bool unbounded = false;  // some pair had Delta_H = 0 < Delta_K
};

/// Empirical alpha in Delta_K(pi, pi') <= alpha Delta_H(pi, pi') over hyper-prior pairs.
inline DominationCertificate fit_domination_constant(const HierarchicalModel& model, std::size_t pair_count,
                                                     const SeedSpec& seed) {
  if (!model.prior_hellinger_sq || !model.prior_kl)
    throw RejectedInput("fit_domination_constant: instance lacks Delta_H / Delta_K evaluators");
  DominationCertificate cert;
  if (model.hyper_point_mass) pair_count = 1;
  Rng rng = make_rng(seed);
  for (std::size_t k = 0; k < pair_count; ++k) {
    const Vector p1 = model.hyper_sample(rng);
    const Vector p2 = model.hyper_sample(rng);
    const double dh = model.prior_hellinger_sq(p1, p2);
    const double dk = model.prior_kl(p1, p2);
    double ratio = 1.0;
    if (dh > 0.0) {
      ratio = dk / dh;
    } else if (dk > 0.0) {
      cert.unbounded = true;
      ratio = kInf;
    }
    cert.max_ratio_observed = k == 0 ? ratio : std::max(cert.max_ratio_observed, ratio);
    ++cert.tested_pairs;
  }
  cert.alpha = cert.max_ratio_observed;
  return cert;
}

}  // namespace hierbayes
