#pragma once

// Information quantities and risk curves: D_K(P_{Theta^n|pi*} || P_{Theta^n}),
// per-task information, instantaneous and cumulative prediction risk, the
// hierarchical-vs-independent comparison and the sandwich bounds on I(Pi; Theta^n).

#include <cmath>
#include <string>
#include <vector>

#include "divergence.hpp"
#include "enumerate.hpp"
#include "inference.hpp"
#include "linear_gaussian.hpp"
#include "model.hpp"

namespace hierbayes {

enum class RiskKind { per_task_info, instantaneous, cumulative, mutual_info, kl_true_vs_mixture };

inline std::string to_string(RiskKind k) {
  switch (k) {
    case RiskKind::per_task_info: return "per_task_info";
    case RiskKind::instantaneous: return "instantaneous";
    case RiskKind::cumulative: return "cumulative";
    case RiskKind::mutual_info: return "mutual_info";
    case RiskKind::kl_true_vs_mixture: return "kl_true_vs_mixture";
  }
  return "?";
}

struct RiskRecord {
  std::size_t n = 1;
  std::size_t m = 0;
  double value = 0.0;  // nats
  double std_error = 0.0;
  RiskKind kind = RiskKind::kl_true_vs_mixture;
  EstimateMethod method = EstimateMethod::closed_form;
  bool support_violation = false;
};

struct RiskOptions {
  std::size_t replicates = 10000;
  SeedSpec seed{};
  unsigned threads = 1;
  /// Sample the next column instead of integrating it out analytically.
  bool raw_z_next = false;
};

// ---------------------------------------------------------------------------
// D_K between the true and mixture task distributions

/// D_K(P_{Theta^n | pi*} || P_{Theta^n}). `closed_form` uses the instance hook,
/// `monte_carlo` averages log p(theta^n | pi*) - log p(theta^n) over
/// theta^n ~ p(. | pi*) with the instance's mixture density.
inline RiskRecord kl_true_vs_mixture(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                     EstimateMethod method, std::size_t samples = 100000, const SeedSpec& seed = {},
                                     unsigned threads = 1) {
  if (n == 0) throw RejectedInput("kl_true_vs_mixture: n must be at least 1");
  if (!model.in_hyper_support(pi_star)) throw RejectedInput("kl_true_vs_mixture: pi* outside hyper-prior support");
  RiskRecord r;
  r.n = n;
  r.kind = RiskKind::kl_true_vs_mixture;
  r.method = method;
  switch (method) {
    case EstimateMethod::closed_form:
    case EstimateMethod::enumeration:
      if (!model.kl_true_vs_mixture) throw RejectedInput("kl_true_vs_mixture: no closed form for this instance");
      r.value = model.kl_true_vs_mixture(pi_star, n);
      return r;
    case EstimateMethod::monte_carlo:
    case EstimateMethod::quadrature: {
      if (!model.mixture_log_density) throw RejectedInput("kl_true_vs_mixture: instance lacks a mixture density");
      const int d = model.dims.theta;
      auto p_log = [&](const Vector& x) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < x.size() / d; ++i) acc += model.prior_log_density(pi_star, x.segment(i * d, d));
        return acc;
      };
      auto q_log = [&](const Vector& x) {
        const auto ts = detail::unstack(x, d);
        return model.mixture_log_density(ts);
      };
      auto sampler = [&](Rng& rng) {
        Vector x(d * static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) x.segment(d * static_cast<Eigen::Index>(i), d) = model.prior_sample(pi_star, rng);
        return x;
      };
      const DivergenceEstimate est = kl_monte_carlo(p_log, q_log, sampler, samples, seed, threads);
      r.method = EstimateMethod::monte_carlo;
      r.value = est.value;
      r.std_error = est.std_error;
      r.support_violation = est.support_violation;
      return r;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Per-task information and entropy

/// (1/n) D_K + H(P_{Theta | pi*}), in nats, with H the Shannon entropy of the
/// quantized part of the prior.
inline RiskRecord per_task_information(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                       EstimateMethod method = EstimateMethod::closed_form,
                                       std::size_t samples = 100000, const SeedSpec& seed = {}) {
  if (!model.prior_entropy_bits)
    throw RejectedInput("per_task_information: instance has no quantized prior, so H is not a Shannon entropy");
  RiskRecord r = kl_true_vs_mixture(model, pi_star, n, method, samples, seed);
  const double nd = static_cast<double>(n);
  r.value = r.value / nd + model.prior_entropy_bits(pi_star) * kLn2;
  r.std_error /= nd;
  r.kind = RiskKind::per_task_info;
  return r;
}

/// Exact (1/n) E_{theta^n | pi*}[-log p(theta^n)] on a finite instance, by
/// enumerating count vectors of theta^n.
inline double per_task_information_direct(const HierarchicalModel& model, const Vector& pi_star, std::size_t n) {
  if (!model.discrete || !model.mixture_log_density)
    throw RejectedInput("per_task_information_direct: requires a finite instance");
  const DiscreteStructure& ds = *model.discrete;
  const int k = static_cast<int>(pi_star[0]);
  double acc = 0.0;
  for_each_composition(static_cast<int>(n), ds.theta_size(), [&](const std::vector<int>& c) {
    double log_p = 0.0;
    std::vector<Vector> ts;
    for (int l = 0; l < ds.theta_size(); ++l) {
      if (c[static_cast<std::size_t>(l)] == 0) continue;
      const double p = ds.prior_table(k, l);
      log_p += p > 0.0 ? c[static_cast<std::size_t>(l)] * std::log(p) : -kInf;
      for (int r = 0; r < c[static_cast<std::size_t>(l)]; ++r) ts.push_back(Vector::Constant(1, l));
    }
    if (log_p == -kInf) return;
    acc += std::exp(log_multinomial(c) + log_p) * -model.mixture_log_density(ts);
  });
  return acc / static_cast<double>(n);
}

/// H(P_{Theta^n | pi}) / n in bits on a finite instance, by enumerating count vectors.
inline double joint_entropy_bits_per_task(const HierarchicalModel& model, const Vector& pi, std::size_t n) {
  if (!model.discrete) throw RejectedInput("joint_entropy_bits_per_task: requires a finite instance");
  const DiscreteStructure& ds = *model.discrete;
  const int k = static_cast<int>(pi[0]);
  double acc = 0.0;
  for_each_composition(static_cast<int>(n), ds.theta_size(), [&](const std::vector<int>& c) {
    double log_p = 0.0;
    for (int l = 0; l < ds.theta_size(); ++l) {
      if (c[static_cast<std::size_t>(l)] == 0) continue;
      const double p = ds.prior_table(k, l);
      log_p += p > 0.0 ? c[static_cast<std::size_t>(l)] * std::log(p) : -kInf;
    }
    if (log_p == -kInf) return;
    acc -= std::exp(log_multinomial(c) + log_p) * log_p;
  });
  return acc / (static_cast<double>(n) * kLn2);
}

// ---------------------------------------------------------------------------
// Prediction risk on linear-Gaussian instances

/// Risk computations for a Bayesian learner with prior `learner_prior` on
/// theta^n while tasks come from p(theta^n | pi*). Posterior covariances do not
/// depend on the data, so they are factored once per m.
class LinearRiskEngine {
 public:
  LinearRiskEngine(const LinearGaussianStructure& s, GaussianParams learner_prior, const Vector& pi_star, std::size_t n)
      : s_(s), n_(n), learner_(s, learner_prior, n), truth_(lg::true_tasks(s, pi_star, n)),
        truth_density_(truth_.mean, truth_.cov) {}

  [[nodiscard]] std::size_t n() const { return n_; }
  [[nodiscard]] const LinearGaussianLearner& learner() const { return learner_; }
  [[nodiscard]] const GaussianParams& truth() const { return truth_; }

  /// K(m) = E_{theta^n | pi*} D_K(P_{Z^(n,m) | theta^n} || learner's P_{Z^(n,m)}).
  [[nodiscard]] double expected_log_ratio(double m) const { return learner_.expected_log_ratio(truth_, m); }

  /// Stuffed path: (K(m + 1) - K(m)) / n.
  [[nodiscard]] double instantaneous_closed_form(std::size_t m) const {
    const double md = static_cast<double>(m);
    return (expected_log_ratio(md + 1.0) - expected_log_ratio(md)) / static_cast<double>(n_);
  }

  /// Direct path: (1/n) E[log p(z_next | theta^n) - log p(z_next | z)] over
  /// theta^n, z and (analytically, unless raw) z_next.
  [[nodiscard]] RiskRecord instantaneous_monte_carlo(std::size_t m, const RiskOptions& opts) const {
    const Step st = step(static_cast<double>(m));
    const double v = s_.noise_std * s_.noise_std;
    const double k = static_cast<double>(st.pred_mean_map.rows());
    // KL(N(H theta, v I) || N(mu, C)) = 0.5 [v tr C^-1 + r' C^-1 r - k + log det C - k log v].
    const double const_part = 0.5 * (v * st.pred_cov_inv_trace - k + st.pred_log_det - k * std::log(v));
    const Matrix H = learner_.stacked_design();
    struct Acc {
      MeanAccumulator stats;
      void merge(const Acc& o) { stats.merge(o.stats); }
    };
    const Acc acc = chunked_reduce<Acc>(opts.replicates, 256, opts.seed, opts.threads,
                                        [&](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
                                          for (std::size_t r = b; r < e; ++r) {
                                            const Vector theta = truth_density_.sample(rng);
                                            const Vector mu = posterior_mean(st, theta, static_cast<double>(m), rng);
                                            const Vector mean_true = H * theta;
                                            const Vector mean_pred = st.pred_mean_map * mu;
                                            double loss;
                                            if (opts.raw_z_next) {
                                              Vector zn = mean_true;
                                              for (Eigen::Index j = 0; j < zn.size(); ++j)
                                                zn[j] += s_.noise_std * standard_normal(rng);
                                              const Vector rt = zn - mean_true, rp = zn - mean_pred;
                                              loss = -0.5 * rt.squaredNorm() / v - 0.5 * k * std::log(v) +
                                                     0.5 * st.pred_llt.matrixL().solve(rp).squaredNorm() +
                                                     0.5 * st.pred_log_det;
                                            } else {
                                              const Vector w = st.pred_llt.matrixL().solve(mean_true - mean_pred);
                                              loss = const_part + 0.5 * w.squaredNorm();
                                            }
                                            a.stats.add(loss / static_cast<double>(n_));
                                          }
                                        });
    RiskRecord r;
    r.n = n_;
    r.m = m;
    r.value = acc.stats.mean;
    r.std_error = acc.stats.std_error();
    r.kind = RiskKind::instantaneous;
    r.method = EstimateMethod::monte_carlo;
    return r;
  }

  /// Monte Carlo K(m) / n via log p(z | theta) - log p(z) = log p(theta | z) - log p(theta).
  [[nodiscard]] RiskRecord cumulative_monte_carlo(std::size_t m_plus_one, const RiskOptions& opts) const {
    const double md = static_cast<double>(m_plus_one);
    const Step st = step(md);
    struct Acc {
      MeanAccumulator stats;
      void merge(const Acc& o) { stats.merge(o.stats); }
    };
    const Acc acc = chunked_reduce<Acc>(opts.replicates, 256, opts.seed, opts.threads,
                                        [&](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
                                          for (std::size_t r = b; r < e; ++r) {
                                            const Vector theta = truth_density_.sample(rng);
                                            const Vector mu = posterior_mean(st, theta, md, rng);
                                            const double lr = st.post.log_pdf(theta - mu + st.post.mean()) -
                                                              learner_.prior_log_pdf(theta);
                                            a.stats.add(lr / static_cast<double>(n_));
                                          }
                                        });
    RiskRecord r;
    r.n = n_;
    r.m = m_plus_one - 1;
    r.value = acc.stats.mean;
    r.std_error = acc.stats.std_error();
    r.kind = RiskKind::cumulative;
    r.method = EstimateMethod::monte_carlo;
    return r;
  }

 private:
  struct Step {
    GaussianDensity post;      // posterior covariance; mean holds the data-free part
    Matrix gain;               // maps flattened observation sums to the posterior mean
    Matrix pred_mean_map;      // stacked design
    Eigen::LLT<Matrix> pred_llt;
    double pred_log_det = 0.0;
    double pred_cov_inv_trace = 0.0;
  };

  [[nodiscard]] Step step(double m) const {
    const Eigen::Index dim = learner_.dim();
    const Matrix prec = learner_.posterior_precision(m);
    const Eigen::LLT<Matrix> llt(prec);
    Matrix cov = llt.solve(Matrix::Identity(dim, dim));
    cov = 0.5 * (cov + cov.transpose());
    const Matrix& H = learner_.stacked_design();
    const GaussianParams& pr = learner_.prior();
    const Eigen::LLT<Matrix> prior_llt(pr.cov);
    const Vector fixed = cov * prior_llt.solve(pr.mean);
    Step st{GaussianDensity(fixed, cov), cov * H.transpose() / (s_.noise_std * s_.noise_std), H, {}, 0.0, 0.0};
    Matrix pc = H * cov * H.transpose();
    pc.diagonal().array() += s_.noise_std * s_.noise_std;
    st.pred_llt.compute(pc);
    const Matrix L = st.pred_llt.matrixL();
    st.pred_log_det = 2.0 * L.diagonal().array().log().sum();
    st.pred_cov_inv_trace = st.pred_llt.solve(Matrix::Identity(pc.rows(), pc.cols())).trace();
    return st;
  }

  /// Posterior mean after m observations per task, drawing the per-task sums
  /// (their exact sampling distribution) instead of individual entries.
  [[nodiscard]] Vector posterior_mean(const Step& st, const Vector& theta, double m, Rng& rng) const {
    if (m == 0.0) return st.post.mean();
    const Matrix& H = learner_.stacked_design();
    Vector sums = m * (H * theta);
    const double sd = std::sqrt(m) * s_.noise_std;
    for (Eigen::Index j = 0; j < sums.size(); ++j) sums[j] += sd * standard_normal(rng);
    return st.post.mean() + st.gain * sums;
  }

  LinearGaussianStructure s_;
  std::size_t n_;
  LinearGaussianLearner learner_;
  GaussianParams truth_;
  GaussianDensity truth_density_;
};

enum class LearnerKind { hierarchical, independent };

inline const LinearGaussianStructure& require_linear(const HierarchicalModel& model, const char* what) {
  if (!model.linear_gaussian) throw RejectedInput(std::string(what) + ": requires a linear-Gaussian instance");
  return *model.linear_gaussian;
}

inline LinearRiskEngine make_risk_engine(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                         LearnerKind learner = LearnerKind::hierarchical) {
  const LinearGaussianStructure& s = require_linear(model, "risk");
  if (n == 0) throw RejectedInput("risk: n must be at least 1");
  if (pi_star.size() != s.b) throw RejectedInput("risk: pi* has wrong dimension");
  return {s, learner == LearnerKind::hierarchical ? lg::mixture_tasks(s, n) : lg::independent_tasks(s, n), pi_star, n};
}

struct InstantaneousRisk {
  RiskRecord direct;           // Monte Carlo predictive loss
  RiskRecord stuffed;          // (K(m + 1) - K(m)) / n
  bool paths_agree = true;     // within 3 combined SE
};

/// R_{n,m,pi*} by both routes.
inline InstantaneousRisk instantaneous_risk(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                            std::size_t m, const RiskOptions& opts,
                                            LearnerKind learner = LearnerKind::hierarchical) {
  const LinearRiskEngine engine = make_risk_engine(model, pi_star, n, learner);
  InstantaneousRisk out;
  out.direct = engine.instantaneous_monte_carlo(m, opts);
  out.stuffed = out.direct;
  out.stuffed.value = engine.instantaneous_closed_form(m);
  out.stuffed.std_error = 0.0;
  out.stuffed.method = EstimateMethod::closed_form;
  out.paths_agree = std::abs(out.direct.value - out.stuffed.value) <= 3.0 * out.direct.std_error + 1e-12;
  return out;
}

/// Partial sums sum_{k=0}^{m} R_{n,k,pi*} = K(m + 1) / n at each m of `m_grid`,
/// closed form, with the Monte Carlo cross-check when `opts.replicates` > 0.
struct CumulativeRisk {
  std::vector<RiskRecord> closed_form;
  std::vector<RiskRecord> monte_carlo;
};

inline CumulativeRisk cumulative_risk(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                      std::span<const std::size_t> m_grid, const RiskOptions& opts,
                                      LearnerKind learner = LearnerKind::hierarchical) {
  const LinearRiskEngine engine = make_risk_engine(model, pi_star, n, learner);
  CumulativeRisk out;
  for (std::size_t k = 0; k < m_grid.size(); ++k) {
    const std::size_t m = m_grid[k];
    RiskRecord r;
    r.n = n;
    r.m = m;
    r.kind = RiskKind::cumulative;
    r.value = engine.expected_log_ratio(static_cast<double>(m) + 1.0) / static_cast<double>(n);
    out.closed_form.push_back(r);
    if (opts.replicates > 0) {
      RiskOptions o = opts;
      o.seed = opts.seed.child(k);
      out.monte_carlo.push_back(engine.cumulative_monte_carlo(m + 1, o));
    }
  }
  return out;
}

struct RiskComparison {
  RiskRecord hierarchical;
  RiskRecord independent;
  double ratio = 1.0;  // hierarchical / independent
};

/// Instantaneous risk of the hierarchical learner vs n independent single-task
/// learners, closed form (`opts.replicates` == 0) or Monte Carlo with common draws.
inline RiskComparison hierarchical_vs_independent(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                                  std::size_t m, const RiskOptions& opts) {
  const LinearRiskEngine hier = make_risk_engine(model, pi_star, n, LearnerKind::hierarchical);
  const LinearRiskEngine indep = make_risk_engine(model, pi_star, n, LearnerKind::independent);
  RiskComparison out;
  if (opts.replicates == 0) {
    out.hierarchical.n = out.independent.n = n;
    out.hierarchical.m = out.independent.m = m;
    out.hierarchical.kind = out.independent.kind = RiskKind::instantaneous;
    out.hierarchical.value = hier.instantaneous_closed_form(m);
    out.independent.value = indep.instantaneous_closed_form(m);
  } else {
    out.hierarchical = hier.instantaneous_monte_carlo(m, opts);
    out.independent = indep.instantaneous_monte_carlo(m, opts);
  }
  out.ratio = out.independent.value == 0.0 ? 1.0 : out.hierarchical.value / out.independent.value;
  return out;
}

// ---------------------------------------------------------------------------
// Exact risk on finite instances

namespace detail {

/// Calls f(theta index tuple, log p(theta^n | pi*)) over all theta^n in support.
template <typename F>
void for_each_task_tuple(const DiscreteStructure& ds, int k, std::size_t n, F&& f) {
  for_each_tuple(static_cast<int>(n), ds.theta_size(), [&](const std::vector<int>& t) {
    double lp = 0.0;
    for (int l : t) lp += ds.prior_table(k, l) > 0.0 ? std::log(ds.prior_table(k, l)) : -kInf;
    if (lp > -kInf) f(t, lp);
  });
}

inline SampleMatrix index_sample(const std::vector<int>& flat, std::size_t n, std::size_t m) {
  SampleMatrix z(n, m, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) z(i, j) = Vector::Constant(1, flat[i * m + j]);
  return z;
}

}  // namespace detail

/// Exact (1/n) E_{theta^n | pi*} D_K(P_{Z^(n,m) | theta^n} || P_{Z^(n,m)}) on a
/// finite instance, by enumerating theta^n and z.
inline double discrete_cumulative_exact(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                        std::size_t m) {
  if (!model.discrete) throw RejectedInput("discrete_cumulative_exact: requires a finite instance");
  if (m == 0) return 0.0;
  const DiscreteStructure& ds = *model.discrete;
  const int k = static_cast<int>(pi_star[0]);
  double acc = 0.0;
  detail::for_each_task_tuple(ds, k, n, [&](const std::vector<int>& t, double lp_theta) {
    for_each_tuple(static_cast<int>(n * m), ds.z_size(), [&](const std::vector<int>& flat) {
      double ll = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double p = ds.likelihood_table(t[i], flat[i * m + j]);
          ll += p > 0.0 ? std::log(p) : -kInf;
        }
      if (ll == -kInf) return;
      const double evidence = log_evidence(model, detail::index_sample(flat, n, m));
      acc += std::exp(lp_theta + ll) * (ll - evidence);
    });
  });
  return acc / static_cast<double>(n);
}

/// Exact R_{n,m,pi*} on a finite instance from the predictive distribution.
inline double discrete_instantaneous_exact(const HierarchicalModel& model, const Vector& pi_star, std::size_t n,
                                           std::size_t m) {
  if (!model.discrete) throw RejectedInput("discrete_instantaneous_exact: requires a finite instance");
  const DiscreteStructure& ds = *model.discrete;
  const int k = static_cast<int>(pi_star[0]);
  double acc = 0.0;
  detail::for_each_task_tuple(ds, k, n, [&](const std::vector<int>& t, double lp_theta) {
    for_each_tuple(static_cast<int>(n * m), ds.z_size(), [&](const std::vector<int>& flat) {
      double ll = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double p = ds.likelihood_table(t[i], flat[i * m + j]);
          ll += p > 0.0 ? std::log(p) : -kInf;
        }
      if (ll == -kInf) return;
      const SampleMatrix z = detail::index_sample(flat, n, m);
      const PosteriorRepresentation post =
          m == 0 ? PosteriorRepresentation{} : posterior_over_tasks(model, z);
      for_each_tuple(static_cast<int>(n), ds.z_size(), [&](const std::vector<int>& next) {
        double ln = 0.0;
        std::vector<Vector> zn;
        for (std::size_t i = 0; i < n; ++i) {
          const double p = ds.likelihood_table(t[i], next[i]);
          ln += p > 0.0 ? std::log(p) : -kInf;
          zn.push_back(Vector::Constant(1, next[i]));
        }
        if (ln == -kInf) return;
        double pred;
        if (m == 0) {
          pred = log_evidence(model, detail::index_sample(next, n, 1));
        } else {
          pred = predictive_log_density(model, post, zn);
        }
        acc += std::exp(lp_theta + ll + ln) * (ln - pred);
      });
    });
  });
  return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Sandwich bounds on I(Pi; Theta^n)

struct BoundOptions {
  std::size_t outer = 200;   // pi* draws (ignored for finite hyper-priors)
  std::size_t inner = 4000;  // pi draws per pi*
  SeedSpec seed{};
};

struct BoundTriple {
  std::size_t n = 1;
  std::string instance;
  double lower = 0.0, lower_se = 0.0;
  double middle = 0.0, middle_se = 0.0;
  double upper = 0.0, upper_se = 0.0;
  // Paired SEs of middle - lower and upper - middle.
  double gap_lower_se = 0.0, gap_upper_se = 0.0;
  bool lower_holds = true;  // lower <= middle within 3 SE
  bool upper_holds = true;  // middle <= upper within 3 SE
  std::size_t udk_checked = 0;
  std::size_t udk_violations = 0;  // pointwise D_K(pi*) above its bound by more than 3 SE
  bool support_violation = false;
};

namespace detail {

struct InnerResult {
  double value = 0.0;
  double std_error = 0.0;
};

/// -log E_pi exp(-c * f(pi)): exact over a finite hyper-prior, else Monte Carlo
/// with a delta-method SE.
template <typename F>
InnerResult neg_log_mean_exp(const HierarchicalModel& model, F&& f, std::size_t draws, Rng& rng) {
  std::vector<double> terms;
  if (hyper_is_finite(model)) {
    const WeightedPoints support = finite_hyper_support(model);
    for (std::size_t k = 0; k < support.nodes.size(); ++k)
      terms.push_back(support.log_weights[static_cast<Eigen::Index>(k)] - f(support.nodes[k]));
    return {-log_sum_exp(terms), 0.0};
  }
  terms.reserve(draws);
  for (std::size_t k = 0; k < draws; ++k) terms.push_back(-f(model.hyper_sample(rng)));
  const double lme = log_sum_exp(terms) - std::log(static_cast<double>(draws));
  MeanAccumulator acc;
  for (double t : terms) acc.add(std::exp(t - lme));
  return {-lme, acc.std_error()};
}

}  // namespace detail

/// lower = -E log E e^{-(n/4) Delta_H}, middle = I(Pi; Theta^n), upper =
/// -E log E e^{-n Delta_K}, plus the pointwise check of D_K(pi*) against
/// -log E_pi e^{-n Delta_K(pi, pi*)} at every outer pi*.
inline BoundTriple sandwich_bounds(const HierarchicalModel& model, std::size_t n, const BoundOptions& opts,
                                   EstimateMethod middle_method = EstimateMethod::closed_form,
                                   std::size_t middle_samples = 20000) {
  if (!model.prior_hellinger_sq || !model.prior_kl) throw RejectedInput("sandwich_bounds: instance lacks Delta_H / Delta_K");
  if (n == 0) throw RejectedInput("sandwich_bounds: n must be at least 1");
  BoundTriple out;
  out.n = n;
  out.instance = model.name;
  const double nd = static_cast<double>(n);

  std::vector<Vector> outer;
  std::vector<double> outer_w;
  const bool finite = detail::hyper_is_finite(model);
  Rng rng = make_rng(opts.seed);
  if (finite) {
    const WeightedPoints support = detail::finite_hyper_support(model);
    outer = support.nodes;
    for (Eigen::Index k = 0; k < support.log_weights.size(); ++k) outer_w.push_back(std::exp(support.log_weights[k]));
  } else {
    for (std::size_t k = 0; k < opts.outer; ++k) outer.push_back(model.hyper_sample(rng));
    outer_w.assign(outer.size(), 1.0 / static_cast<double>(outer.size()));
  }

  MeanAccumulator lo, mid, up, gap_lo, gap_up;
  double wlo = 0.0, wmid = 0.0, wup = 0.0;
  double mid_var = 0.0;
  for (std::size_t k = 0; k < outer.size(); ++k) {
    const Vector& ps = outer[k];
    Rng inner_rng = make_rng(opts.seed.child(k + 1));
    const auto l = detail::neg_log_mean_exp(
        model, [&](const Vector& pi) { return 0.25 * nd * model.prior_hellinger_sq(ps, pi); }, opts.inner, inner_rng);
    const auto u = detail::neg_log_mean_exp(
        model, [&](const Vector& pi) { return nd * model.prior_kl(pi, ps); }, opts.inner, inner_rng);
    const RiskRecord dk = kl_true_vs_mixture(model, ps, n, middle_method, middle_samples, opts.seed.child(1000000 + k));
    out.support_violation = out.support_violation || dk.support_violation;

    ++out.udk_checked;
    if (dk.value > u.value + 3.0 * std::hypot(u.std_error, dk.std_error) + 1e-12) ++out.udk_violations;

    if (finite) {
      wlo += outer_w[k] * l.value;
      wmid += outer_w[k] * dk.value;
      wup += outer_w[k] * u.value;
      mid_var += outer_w[k] * outer_w[k] * dk.std_error * dk.std_error;
    } else {
      lo.add(l.value);
      mid.add(dk.value);
      up.add(u.value);
      gap_lo.add(dk.value - l.value);
      gap_up.add(u.value - dk.value);
    }
  }
  if (finite) {
    out.lower = wlo;
    out.middle = wmid;
    out.upper = wup;
    out.middle_se = out.gap_lower_se = out.gap_upper_se = std::sqrt(mid_var);
  } else {
    out.lower = lo.mean;
    out.middle = mid.mean;
    out.upper = up.mean;
    out.lower_se = lo.std_error();
    out.middle_se = mid.std_error();
    out.upper_se = up.std_error();
    out.gap_lower_se = gap_lo.std_error();
    out.gap_upper_se = gap_up.std_error();
  }
  out.lower_holds = out.lower <= out.middle + 3.0 * out.gap_lower_se + 1e-12;
  out.upper_holds = out.middle <= out.upper + 3.0 * out.gap_upper_se + 1e-12;
  return out;
}

// ---------------------------------------------------------------------------
// Convergence in measure of D_K / ln n

/// For each n, the fraction of pi* draws with |D_K / ln n - dim/2| < tol * dim/2.
inline std::vector<double> kl_rate_convergence_fraction(const HierarchicalModel& model, std::span<const std::size_t> ns,
                                                        double dim, std::size_t draws, double tol,
                                                        const SeedSpec& seed) {
  if (draws < 20) throw RejectedInput("kl_rate_convergence_fraction: at least 20 pi* draws required");
  Rng rng = make_rng(seed);
  std::vector<Vector> pis;
  for (std::size_t k = 0; k < draws; ++k) pis.push_back(model.hyper_sample(rng));
  std::vector<double> out;
  for (std::size_t n : ns) {
    std::size_t good = 0;
    for (const Vector& p : pis) {
      const double r = kl_true_vs_mixture(model, p, n, EstimateMethod::closed_form).value / std::log(static_cast<double>(n));
      if (std::abs(r - dim / 2.0) < tol * dim / 2.0) ++good;
    }
    out.push_back(static_cast<double>(good) / static_cast<double>(draws));
  }
  return out;
}

}  // namespace hierbayes
