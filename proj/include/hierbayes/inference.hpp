#pragma once

// Hierarchical Bayesian updating: the mixture prior p(theta^n), p(pi | theta^n),
// p(theta^n | z) and the learner's predictive distribution.

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "enumerate.hpp"
#include "linear_gaussian.hpp"
#include "mlp.hpp"
#include "model.hpp"

namespace hierbayes {

class DegeneratePosterior : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PosteriorKind { closed_form_gaussian, grid, weighted_samples };

inline std::string to_string(PosteriorKind k) {
  switch (k) {
    case PosteriorKind::closed_form_gaussian: return "closed_form_gaussian";
    case PosteriorKind::grid: return "grid";
    case PosteriorKind::weighted_samples: return "weighted_samples";
  }
  return "?";
}

/// Nodes (grid points or particles) with log-weights normalized to log-sum 0.
struct WeightedPoints {
  std::vector<Vector> nodes;
  Vector log_weights;
};

struct PosteriorRepresentation {
  PosteriorKind kind = PosteriorKind::closed_form_gaussian;
  std::variant<GaussianParams, WeightedPoints> payload;
  /// log of the normalizing constant: log p(data) where defined, else 0.
  double log_normalizer = 0.0;

  [[nodiscard]] const GaussianParams& gaussian() const { return std::get<GaussianParams>(payload); }
  [[nodiscard]] const WeightedPoints& points() const { return std::get<WeightedPoints>(payload); }
};

struct InferenceOptions {
  std::size_t grid_nodes = 201;  // per axis, at least 201
  std::size_t particles = 20000;
  double rel_tol = 0.01;         // relative SE above which MC estimates are flagged
  SeedSpec seed{};
  unsigned threads = 1;
};

namespace detail {

/// Normalizes raw log-weights in place; returns their log-sum.
inline double normalize_log_weights(Vector& lw) {
  const double z = log_sum_exp(std::span<const double>(lw.data(), static_cast<std::size_t>(lw.size())));
  if (!std::isfinite(z)) return z;
  lw.array() -= z;
  return z;
}

inline double log_prior_product(const HierarchicalModel& model, const Vector& pi, std::span<const Vector> thetas) {
  double acc = 0.0;
  for (const Vector& t : thetas) {
    acc += model.prior_log_density(pi, t);
    if (acc == -kInf) break;
  }
  return acc;
}

/// Composite Simpson nodes and log-weights on [lo, hi] with an odd node count.
inline void simpson_rule(double lo, double hi, std::size_t nodes, std::vector<double>& x, std::vector<double>& logw) {
  if (nodes % 2 == 0) ++nodes;
  const double h = (hi - lo) / static_cast<double>(nodes - 1);
  x.resize(nodes);
  logw.resize(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    x[k] = lo + h * static_cast<double>(k);
    const double c = (k == 0 || k + 1 == nodes) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    logw[k] = std::log(c * h / 3.0);
  }
}

/// Tensor-product Simpson grid over the hyper-prior integration box (dim <= 2):
/// nodes and log(quadrature weight * p(pi)).
inline WeightedPoints hyper_grid(const HierarchicalModel& model, std::size_t nodes_per_axis) {
  if (!model.hyper_grid_bounds) throw RejectedInput("grid integration: instance has no integration range over Pi");
  if (model.dims.pi > 2) throw RejectedInput("grid integration: only supported for dim(Pi) <= 2");
  if (nodes_per_axis < 201) throw RejectedInput("grid integration: at least 201 nodes per axis required");
  const Box& box = *model.hyper_grid_bounds;
  std::vector<std::vector<double>> xs(static_cast<std::size_t>(model.dims.pi)), ws(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k)
    simpson_rule(box.lower[static_cast<Eigen::Index>(k)], box.upper[static_cast<Eigen::Index>(k)], nodes_per_axis,
                 xs[k], ws[k]);
  WeightedPoints grid;
  std::vector<double> lw;
  const int base = static_cast<int>(xs.front().size());
  for_each_tuple(model.dims.pi, base, [&](const std::vector<int>& idx) {
    Vector pi(model.dims.pi);
    double w = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      pi[static_cast<Eigen::Index>(k)] = xs[k][static_cast<std::size_t>(idx[k])];
      w += ws[k][static_cast<std::size_t>(idx[k])];
    }
    const double lp = model.hyper_log_density(pi);
    if (lp == -kInf) return;
    grid.nodes.push_back(pi);
    lw.push_back(w + lp);
  });
  grid.log_weights = Eigen::Map<Vector>(lw.data(), static_cast<Eigen::Index>(lw.size()));
  return grid;
}

inline WeightedPoints finite_hyper_support(const HierarchicalModel& model) {
  WeightedPoints out;
  std::vector<double> lw;
  if (model.discrete) {
    for (int k = 0; k < model.discrete->hyper_size(); ++k) {
      const double p = model.discrete->hyper_probs[k];
      if (p <= 0.0) continue;
      out.nodes.push_back(Vector::Constant(1, k));
      lw.push_back(std::log(p));
    }
  } else if (model.hyper_point_mass) {
    out.nodes.push_back(*model.hyper_point_mass);
    lw.push_back(0.0);
  }
  out.log_weights = Eigen::Map<Vector>(lw.data(), static_cast<Eigen::Index>(lw.size()));
  return out;
}

inline bool hyper_is_finite(const HierarchicalModel& model) {
  return model.discrete.has_value() || model.hyper_point_mass.has_value();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mixture prior

enum class Integration { closed_form, grid, mc };

struct MixtureDensityEstimate {
  double value = 0.0;
  double std_error = 0.0;  // delta-method SE of the log for mc
  Integration method = Integration::closed_form;
  bool flagged = false;    // MC relative SE above InferenceOptions::rel_tol
};

/// log p(theta^n) = log E_pi prod_i p(theta_i | pi).
inline MixtureDensityEstimate mixture_prior_log_density(const HierarchicalModel& model, std::span<const Vector> thetas,
                                                        Integration method, const InferenceOptions& opts = {}) {
  MixtureDensityEstimate out;
  out.method = method;
  if (model.hyper_point_mass) {
    out.value = detail::log_prior_product(model, *model.hyper_point_mass, thetas);
    return out;
  }
  switch (method) {
    case Integration::closed_form:
      if (!model.mixture_log_density) throw RejectedInput("mixture_prior_log_density: no closed form for this instance");
      out.value = model.mixture_log_density(thetas);
      return out;
    case Integration::grid: {
      WeightedPoints grid =
          detail::hyper_is_finite(model) ? detail::finite_hyper_support(model) : detail::hyper_grid(model, opts.grid_nodes);
      for (std::size_t k = 0; k < grid.nodes.size(); ++k)
        grid.log_weights[static_cast<Eigen::Index>(k)] += detail::log_prior_product(model, grid.nodes[k], thetas);
      out.value = log_sum_exp(std::span<const double>(grid.log_weights.data(), grid.nodes.size()));
      return out;
    }
    case Integration::mc: {
      if (opts.particles == 0) throw RejectedInput("mixture_prior_log_density: MC budget must be positive");
      std::vector<double> terms(opts.particles);
      Rng rng = make_rng(opts.seed);
      for (double& t : terms) t = detail::log_prior_product(model, model.hyper_sample(rng), thetas);
      const double lse = log_sum_exp(terms);
      const double N = static_cast<double>(terms.size());
      out.value = lse - std::log(N);
      if (std::isfinite(out.value)) {
        MeanAccumulator acc;
        for (double t : terms) acc.add(std::exp(t - out.value));  // ratios with mean 1
        out.std_error = acc.std_error();
      }
      out.flagged = !std::isfinite(out.value) || out.std_error > opts.rel_tol;
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Posterior over priors

/// p(pi | theta^n). Closed form on the conjugate Gaussian instances, exact
/// enumeration on finite hyper-priors, a grid for dim(Pi) <= 2, otherwise
/// hyper-prior draws weighted by the task likelihood.
inline PosteriorRepresentation posterior_over_priors(const HierarchicalModel& model, std::span<const Vector> thetas,
                                                     const InferenceOptions& opts = {}) {
  PosteriorRepresentation out;
  const auto& lgs = model.linear_gaussian;
  if (lgs && lgs->tau > 0.0) {
    const double t2 = lgs->tau * lgs->tau, s2 = lgs->sigma_pi * lgs->sigma_pi;
    const double n = static_cast<double>(thetas.size());
    Vector sum = Vector::Zero(lgs->b);
    for (const Vector& t : thetas) sum += t.tail(lgs->b);
    const double prec = 1.0 / t2 + n / s2;
    out.kind = PosteriorKind::closed_form_gaussian;
    out.payload = GaussianParams{(lgs->hyper_mean / t2 + sum / s2) / prec, Matrix::Identity(lgs->b, lgs->b) / prec};
    if (!thetas.empty() && model.mixture_log_density) out.log_normalizer = model.mixture_log_density(thetas);
    return out;
  }

  WeightedPoints pts;
  if (detail::hyper_is_finite(model)) {
    out.kind = PosteriorKind::grid;
    pts = detail::finite_hyper_support(model);
  } else if (model.dims.pi <= 2 && model.hyper_grid_bounds) {
    out.kind = PosteriorKind::grid;
    pts = detail::hyper_grid(model, opts.grid_nodes);
  } else {
    out.kind = PosteriorKind::weighted_samples;
    Rng rng = make_rng(opts.seed);
    pts.log_weights = Vector::Zero(static_cast<Eigen::Index>(opts.particles));
    for (std::size_t k = 0; k < opts.particles; ++k) pts.nodes.push_back(model.hyper_sample(rng));
  }
  for (std::size_t k = 0; k < pts.nodes.size(); ++k)
    pts.log_weights[static_cast<Eigen::Index>(k)] += detail::log_prior_product(model, pts.nodes[k], thetas);
  const double z = detail::normalize_log_weights(pts.log_weights);
  if (!std::isfinite(z))
    throw DegeneratePosterior("posterior_over_priors: the tasks have zero likelihood under every hyper-parameter node");
  out.log_normalizer = out.kind == PosteriorKind::weighted_samples ? z - std::log(static_cast<double>(opts.particles)) : z;
  out.payload = std::move(pts);
  return out;
}

// ---------------------------------------------------------------------------
// Posterior over tasks given an (n, m)-sample

namespace detail {

inline void check_sample_shape(const HierarchicalModel& model, const SampleMatrix& z) {
  for (std::size_t i = 0; i < z.n(); ++i)
    for (std::size_t j = 0; j < z.m(); ++j)
      if (z(i, j).size() != model.dims.z)
        throw RejectedInput("entry (" + std::to_string(i) + ", " + std::to_string(j) + ") is not a point of Z");
}

inline double data_log_likelihood(const HierarchicalModel& model, std::span<const Vector> thetas,
                                  const SampleMatrix& z) {
  double acc = 0.0;
  for (std::size_t i = 0; i < z.n(); ++i)
    for (const Vector& e : z.row(i)) {
      acc += model.likelihood_log_density(thetas[i], e);
      if (acc == -kInf) return acc;
    }
  return acc;
}

/// Splits a stacked vector into per-task vectors of length `d`.
inline std::vector<Vector> unstack(const Vector& v, int d) {
  std::vector<Vector> out;
  for (Eigen::Index i = 0; i < v.size() / d; ++i) out.push_back(v.segment(i * d, d));
  return out;
}

inline Vector stack(std::span<const Vector> parts) {
  Eigen::Index size = 0;
  for (const Vector& p : parts) size += p.size();
  Vector out(size);
  Eigen::Index at = 0;
  for (const Vector& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

/// Names the first entry of z that has zero likelihood under every node.
[[noreturn]] inline void report_support_violation(const HierarchicalModel& model, const std::vector<Vector>& nodes,
                                                  const SampleMatrix& z) {
  const int d = model.dims.theta;
  for (std::size_t i = 0; i < z.n(); ++i)
    for (std::size_t j = 0; j < z.m(); ++j) {
      bool possible = false;
      for (const Vector& node : nodes) {
        if (model.likelihood_log_density(node.segment(static_cast<Eigen::Index>(i) * d, d), z(i, j)) > -kInf) {
          possible = true;
          break;
        }
      }
      if (!possible)
        throw DegeneratePosterior("support violation: entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") has zero likelihood under every task parameter");
    }
  throw DegeneratePosterior("support violation: the sample has zero probability under the mixture prior");
}

inline WeightedPoints discrete_task_nodes(const HierarchicalModel& model, std::size_t n) {
  const int L = model.discrete->theta_size();
  if (std::pow(static_cast<double>(L), static_cast<double>(n)) > 5e6)
    throw RejectedInput("posterior_over_tasks: theta^n enumeration too large");
  WeightedPoints out;
  std::vector<double> lw;
  for_each_tuple(static_cast<int>(n), L, [&](const std::vector<int>& idx) {
    std::vector<Vector> ts;
    for (int l : idx) ts.push_back(Vector::Constant(1, l));
    const double lp = model.mixture_log_density(ts);
    if (lp == -kInf) return;
    out.nodes.push_back(stack(ts));
    lw.push_back(lp);
  });
  out.log_weights = Eigen::Map<Vector>(lw.data(), static_cast<Eigen::Index>(lw.size()));
  return out;
}

}  // namespace detail

/// p(theta^n | z). Closed form for linear-Gaussian instances, exact enumeration
/// for finite ones, particles drawn from the mixture prior otherwise. Nodes and
/// Gaussian payloads use the stacked layout [theta_1; ...; theta_n].
inline PosteriorRepresentation posterior_over_tasks(const HierarchicalModel& model, const SampleMatrix& z,
                                                    const InferenceOptions& opts = {}) {
  detail::check_sample_shape(model, z);
  PosteriorRepresentation out;
  if (model.linear_gaussian) {
    const LinearGaussianStructure& s = *model.linear_gaussian;
    const LinearGaussianLearner learner(s, lg::mixture_tasks(s, z.n()), z.n());
    out.kind = PosteriorKind::closed_form_gaussian;
    out.payload = learner.posterior(static_cast<double>(z.m()), LinearGaussianLearner::observation_sums(z));
    out.log_normalizer = z.m() == 0 ? 0.0 : learner.log_evidence(z);
    return out;
  }

  WeightedPoints pts;
  if (model.discrete && model.mixture_log_density) {
    out.kind = PosteriorKind::grid;
    pts = detail::discrete_task_nodes(model, z.n());
  } else {
    out.kind = PosteriorKind::weighted_samples;
    Rng rng = make_rng(opts.seed);
    pts.log_weights = Vector::Zero(static_cast<Eigen::Index>(opts.particles));
    for (std::size_t k = 0; k < opts.particles; ++k) {
      const Vector pi = model.hyper_sample(rng);
      std::vector<Vector> ts;
      for (std::size_t i = 0; i < z.n(); ++i) ts.push_back(model.prior_sample(pi, rng));
      pts.nodes.push_back(detail::stack(ts));
    }
  }
  const int d = model.dims.theta;
  for (std::size_t k = 0; k < pts.nodes.size(); ++k)
    pts.log_weights[static_cast<Eigen::Index>(k)] += detail::data_log_likelihood(model, detail::unstack(pts.nodes[k], d), z);
  const double lz = detail::normalize_log_weights(pts.log_weights);
  if (!std::isfinite(lz)) detail::report_support_violation(model, pts.nodes, z);
  out.log_normalizer = out.kind == PosteriorKind::weighted_samples ? lz - std::log(static_cast<double>(opts.particles)) : lz;
  out.payload = std::move(pts);
  return out;
}

/// log p(z_next | posterior) for the next column, one entry per task.
inline double predictive_log_density(const HierarchicalModel& model, const PosteriorRepresentation& post,
                                     std::span<const Vector> z_next) {
  if (post.kind == PosteriorKind::closed_form_gaussian) {
    if (!model.linear_gaussian) throw RejectedInput("predictive_log_density: Gaussian posterior needs a linear instance");
    const LinearGaussianStructure& s = *model.linear_gaussian;
    const GaussianParams& g = post.gaussian();
    const Matrix H = lg::block_diag_repeat(s.design, z_next.size());
    Matrix cov = H * g.cov * H.transpose();
    cov.diagonal().array() += s.noise_std * s.noise_std;
    cov = 0.5 * (cov + cov.transpose());
    return GaussianDensity(H * g.mean, cov).log_pdf(detail::stack(z_next));
  }
  const WeightedPoints& pts = post.points();
  const int d = model.dims.theta;
  std::vector<double> terms(pts.nodes.size());
  for (std::size_t k = 0; k < pts.nodes.size(); ++k) {
    double acc = pts.log_weights[static_cast<Eigen::Index>(k)];
    for (std::size_t i = 0; i < z_next.size() && acc > -kInf; ++i)
      acc += model.likelihood_log_density(pts.nodes[k].segment(static_cast<Eigen::Index>(i) * d, d), z_next[i]);
    terms[k] = acc;
  }
  return log_sum_exp(terms);
}

/// log p(z_next | z): the learner's predictive density of the (m+1)-th column.
inline double predictive_log_density(const HierarchicalModel& model, const SampleMatrix& z,
                                     std::span<const Vector> z_next, const InferenceOptions& opts = {}) {
  if (z_next.size() != z.n()) throw RejectedInput("predictive_log_density: need one next observation per task");
  return predictive_log_density(model, posterior_over_tasks(model, z, opts), z_next);
}

/// log p(z) for the (n, m)-sample.
inline double log_evidence(const HierarchicalModel& model, const SampleMatrix& z, const InferenceOptions& opts = {}) {
  if (z.m() == 0) return 0.0;
  return posterior_over_tasks(model, z, opts).log_normalizer;
}

/// Posterior-averaged network output at x.
inline double mlp_predictive_class_probability(const MlpLayout& net, const PosteriorRepresentation& post,
                                               const Vector& x) {
  if (post.kind == PosteriorKind::closed_form_gaussian)
    throw RejectedInput("mlp_predictive_class_probability: posterior must be a grid or weighted samples");
  const WeightedPoints& pts = post.points();
  double acc = 0.0;
  for (std::size_t k = 0; k < pts.nodes.size(); ++k)
    acc += std::exp(pts.log_weights[static_cast<Eigen::Index>(k)]) * net.probability(pts.nodes[k], x);
  return acc;
}

/// A posterior given directly as weighted nodes; log-weights are normalized.
inline PosteriorRepresentation weighted_posterior(std::vector<Vector> nodes, Vector log_weights,
                                                  PosteriorKind kind = PosteriorKind::weighted_samples) {
  if (nodes.empty() || static_cast<Eigen::Index>(nodes.size()) != log_weights.size())
    throw RejectedInput("weighted_posterior: need one log-weight per node");
  PosteriorRepresentation out;
  out.kind = kind;
  detail::normalize_log_weights(log_weights);
  out.payload = WeightedPoints{std::move(nodes), std::move(log_weights)};
  return out;
}

}  // namespace hierbayes
