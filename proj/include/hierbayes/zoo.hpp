#pragma once

// Concrete hierarchical models: shared-mean Gaussian, linear-Gaussian a:b,
// quantized LDR, sigmoidal MLP-LDR and small finite hierarchies. Also the
// numerical Fisher matrix and the local-domination probe.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "divergence.hpp"
#include "enumerate.hpp"
#include "linear_gaussian.hpp"
#include "mlp.hpp"
#include "model.hpp"

namespace hierbayes {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hyper-priors

enum class HyperPriorKind { gaussian, uniform_box, point_mass, finite };

inline std::string to_string(HyperPriorKind k) {
  switch (k) {
    case HyperPriorKind::gaussian: return "gaussian";
    case HyperPriorKind::uniform_box: return "uniform_box";
    case HyperPriorKind::point_mass: return "point_mass";
    case HyperPriorKind::finite: return "finite";
  }
  return "?";
}

/// Hyper-prior over R^dim. A Gaussian with tau = 0 is treated as a point mass
/// at `mean`.
struct HyperPriorSpec {
  HyperPriorKind kind = HyperPriorKind::gaussian;
  Vector mean;   // gaussian centre / point-mass location; zero if empty
  double tau = 1.0;
  Vector lower;  // uniform_box
  Vector upper;
  std::vector<Vector> points;  // finite support
  Vector weights;

  [[nodiscard]] HyperPriorKind effective_kind() const {
    return kind == HyperPriorKind::gaussian && tau == 0.0 ? HyperPriorKind::point_mass : kind;
  }
};

namespace detail {

inline Vector or_zero(const Vector& v, int dim) { return v.size() == 0 ? Vector::Zero(dim) : v; }

inline void attach_hyper_prior(HierarchicalModel& model, const HyperPriorSpec& spec, int dim) {
  const Vector mean = or_zero(spec.mean, dim);
  if (mean.size() != dim) throw RejectedInput("hyper-prior: mean has wrong dimension");
  switch (spec.effective_kind()) {
    case HyperPriorKind::gaussian: {
      if (!(spec.tau > 0.0)) throw RejectedInput("hyper-prior: tau must be nonnegative");
      const double tau = spec.tau;
      model.pi_measure = ReferenceMeasure::lebesgue;
      model.hyper_log_density = [mean, tau](const Vector& p) { return iso_normal_log_pdf(p, mean, tau); };
      model.hyper_sample = [mean, tau](Rng& rng) { return iso_normal_sample(mean, tau, rng); };
      model.hyper_grid_bounds = Box{mean.array() - 10.0 * tau, mean.array() + 10.0 * tau};
      break;
    }
    case HyperPriorKind::point_mass: {
      model.pi_measure = ReferenceMeasure::counting;
      model.hyper_log_density = [mean](const Vector& p) { return p == mean ? 0.0 : -kInf; };
      model.hyper_sample = [mean](Rng&) { return mean; };
      model.hyper_point_mass = mean;
      break;
    }
    case HyperPriorKind::uniform_box: {
      if (spec.lower.size() != dim || spec.upper.size() != dim || !(spec.lower.array() < spec.upper.array()).all())
        throw RejectedInput("hyper-prior: box must be nonempty with matching dimension");
      const Box box{spec.lower, spec.upper};
      const double log_vol = box.log_volume();
      model.pi_measure = ReferenceMeasure::lebesgue;
      model.hyper_log_density = [box, log_vol](const Vector& p) { return box.contains(p) ? -log_vol : -kInf; };
      model.hyper_sample = [box](Rng& rng) {
        Vector p(box.lower.size());
        for (Eigen::Index k = 0; k < p.size(); ++k) p[k] = box.lower[k] + (box.upper[k] - box.lower[k]) * uniform01(rng);
        return p;
      };
      model.hyper_box = box;
      model.hyper_grid_bounds = box;
      break;
    }
    case HyperPriorKind::finite: {
      if (spec.points.empty() || static_cast<Eigen::Index>(spec.points.size()) != spec.weights.size())
        throw RejectedInput("hyper-prior: finite support needs one weight per point");
      if ((spec.weights.array() < 0.0).any() || std::abs(spec.weights.sum() - 1.0) > 1e-12)
        throw RejectedInput("hyper-prior: finite weights must be a probability vector");
      for (const Vector& p : spec.points)
        if (p.size() != dim) throw RejectedInput("hyper-prior: support point has wrong dimension");
      const std::vector<Vector> points = spec.points;
      const Vector weights = spec.weights;
      model.pi_measure = ReferenceMeasure::counting;
      model.hyper_log_density = [points, weights](const Vector& p) {
        for (std::size_t k = 0; k < points.size(); ++k)
          if (points[k] == p) return std::log(weights[static_cast<Eigen::Index>(k)]);
        return -kInf;
      };
      model.hyper_sample = [points, weights](Rng& rng) {
        double u = uniform01(rng);
        for (std::size_t k = 0; k + 1 < points.size(); ++k) {
          u -= weights[static_cast<Eigen::Index>(k)];
          if (u < 0.0) return points[k];
        }
        return points.back();
      };
      if (points.size() == 1) model.hyper_point_mass = points.front();
      break;
    }
  }
}

/// log(Phi(hi) - Phi(lo)) for lo < hi.
inline double log_normal_cdf_diff(double lo, double hi) {
  constexpr double r = 0.70710678118654752440;
  if (lo >= 0.0) return std::log(0.5 * (std::erfc(lo * r) - std::erfc(hi * r)));
  if (hi <= 0.0) return std::log(0.5 * (std::erfc(-hi * r) - std::erfc(-lo * r)));
  return std::log1p(-0.5 * (std::erfc(hi * r) + std::erfc(-lo * r)));
}

/// log E_pi prod_i N(theta_i; pi, sigma^2 I) for the hyper-prior `spec`. Points
/// may be longer than `dim`; only their leading `dim` coordinates are used.
inline double shared_mean_mixture_log_density(std::span<const Vector> thetas, const HyperPriorSpec& spec, int dim,
                                              double sigma) {
  const double n = static_cast<double>(thetas.size());
  const double s2 = sigma * sigma;
  const Vector mean = or_zero(spec.mean, dim);
  switch (spec.effective_kind()) {
    case HyperPriorKind::point_mass: {
      double acc = 0.0;
      for (const Vector& t : thetas) acc += iso_normal_log_pdf(t.head(dim), mean, sigma);
      return acc;
    }
    case HyperPriorKind::gaussian: {
      const double t2 = spec.tau * spec.tau;
      double acc = 0.0;
      for (int c = 0; c < dim; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (const Vector& t : thetas) {
          const double r = t[c] - mean[c];
          sum += r;
          sumsq += r * r;
        }
        const double quad = (sumsq - t2 * sum * sum / (s2 + n * t2)) / s2;
        acc += -0.5 * (n * kLog2Pi + n * std::log(s2) + std::log1p(n * t2 / s2) + quad);
      }
      return acc;
    }
    case HyperPriorKind::uniform_box: {
      double acc = 0.0;
      for (int c = 0; c < dim; ++c) {
        double sum = 0.0;
        for (const Vector& t : thetas) sum += t[c];
        const double bar = sum / n;
        double ss = 0.0;
        for (const Vector& t : thetas) ss += (t[c] - bar) * (t[c] - bar);
        const double scale = std::sqrt(n) / sigma;
        acc += -0.5 * n * (kLog2Pi + std::log(s2)) - ss / (2.0 * s2) + 0.5 * (kLog2Pi + std::log(s2 / n)) +
               log_normal_cdf_diff((spec.lower[c] - bar) * scale, (spec.upper[c] - bar) * scale) -
               std::log(spec.upper[c] - spec.lower[c]);
      }
      return acc;
    }
    case HyperPriorKind::finite: {
      std::vector<double> terms;
      for (std::size_t k = 0; k < spec.points.size(); ++k) {
        const double w = spec.weights[static_cast<Eigen::Index>(k)];
        if (w <= 0.0) continue;
        double acc = std::log(w);
        for (const Vector& t : thetas) acc += iso_normal_log_pdf(t.head(dim), spec.points[k], sigma);
        terms.push_back(acc);
      }
      return log_sum_exp(terms);
    }
  }
  return -kInf;
}

/// Closed-form D_K(N(pi* 1, s^2 I_n) || shared-mean mixture) summed over coordinates,
/// for Gaussian (or point-mass) hyper-priors.
inline double shared_mean_kl_closed_form(const Vector& pi_star, std::size_t n_tasks, const HyperPriorSpec& spec,
                                         double sigma) {
  const double n = static_cast<double>(n_tasks);
  const double s2 = sigma * sigma;
  const double t2 = spec.effective_kind() == HyperPriorKind::point_mass ? 0.0 : spec.tau * spec.tau;
  const Vector mean = or_zero(spec.mean, static_cast<int>(pi_star.size()));
  double acc = 0.0;
  for (Eigen::Index c = 0; c < pi_star.size(); ++c) {
    const double d = pi_star[c] - mean[c];
    acc += 0.5 * (-n * t2 / (s2 + n * t2) + n * d * d / (s2 + n * t2) + std::log1p(n * t2 / s2));
  }
  return acc;
}

inline Matrix random_orthonormal_columns(int rows, int cols, std::uint64_t seed) {
  Rng rng = make_rng({seed, 0});
  Matrix g(rows, cols);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = standard_normal(rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

inline double gaussian_hellinger_sq(const Vector& mu1, const Vector& mu2, double sd) {
  return -2.0 * std::expm1(-(mu1 - mu2).squaredNorm() / (8.0 * sd * sd));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared-mean Gaussian: theta ~ N(pi, sigma_pi^2 I_b), z ~ N(theta, noise_std^2 I_b).

struct SharedMeanGaussianSpec {
  int b = 1;
  HyperPriorSpec hyper;
  double sigma_pi = 1.0;
  double noise_std = 1.0;
  Vector pi_star;  // true hyper-parameter; hyper mean when empty
};

inline HierarchicalModel build_instance(const SharedMeanGaussianSpec& spec) {
  if (spec.b < 1) throw RejectedInput("shared-mean Gaussian: b must be at least 1");
  if (!(spec.sigma_pi > 0.0) || !(spec.noise_std > 0.0))
    throw RejectedInput("shared-mean Gaussian: sigma_pi and noise_std must be positive");
  if (spec.hyper.kind == HyperPriorKind::gaussian && spec.hyper.tau < 0.0)
    throw RejectedInput("shared-mean Gaussian: tau must be nonnegative");

  HierarchicalModel model;
  model.name = "shared_mean_gaussian";
  model.dims = {spec.b, spec.b, spec.b};
  detail::attach_hyper_prior(model, spec.hyper, spec.b);

  const double sp = spec.sigma_pi, sz = spec.noise_std;
  model.prior_log_density = [sp](const Vector& pi, const Vector& t) { return iso_normal_log_pdf(t, pi, sp); };
  model.prior_sample = [sp](const Vector& pi, Rng& rng) { return iso_normal_sample(pi, sp, rng); };
  model.likelihood_log_density = [sz](const Vector& t, const Vector& z) { return iso_normal_log_pdf(z, t, sz); };
  model.likelihood_sample = [sz](const Vector& t, Rng& rng) { return iso_normal_sample(t, sz, rng); };
  model.prior_hellinger_sq = [sp](const Vector& p, const Vector& q) { return detail::gaussian_hellinger_sq(p, q, sp); };
  model.prior_kl = [sp](const Vector& p, const Vector& q) { return (p - q).squaredNorm() / (2.0 * sp * sp); };
  model.likelihood_hellinger_sq = [sz](const Vector& t, const Vector& u) {
    return detail::gaussian_hellinger_sq(t, u, sz);
  };

  const HyperPriorSpec hyper = spec.hyper;
  const int b = spec.b;
  model.mixture_log_density = [hyper, b, sp](std::span<const Vector> ts) {
    return detail::shared_mean_mixture_log_density(ts, hyper, b, sp);
  };

  const HyperPriorKind kind = spec.hyper.effective_kind();
  if (kind == HyperPriorKind::gaussian || kind == HyperPriorKind::point_mass) {
    model.kl_true_vs_mixture = [hyper, sp](const Vector& pi_star, std::size_t n) {
      return detail::shared_mean_kl_closed_form(pi_star, n, hyper, sp);
    };
    LinearGaussianStructure lgs;
    lgs.a = 0;
    lgs.b = b;
    lgs.out_mean = Vector(0);
    lgs.sigma_pi = sp;
    lgs.hyper_mean = detail::or_zero(spec.hyper.mean, b);
    lgs.tau = kind == HyperPriorKind::point_mass ? 0.0 : spec.hyper.tau;
    lgs.design = Matrix::Identity(b, b);
    lgs.noise_std = sz;
    model.linear_gaussian = lgs;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Linear-Gaussian a:b model: z = A x_a + C x_b + noise, x_b ~ N(pi, sigma_pi^2 I).

struct ABModelSpec {
  int a = 1;
  int b = 1;
  double sigma_pi = 1e-3;
  double sigma_z = 1.0;
  int obs_dim = 0;               // a + b when zero
  Matrix A;                      // obs x a; random orthonormal [A|C] when both empty
  Matrix C;                      // obs x b
  std::uint64_t design_seed = 7;
  double out_std = 1.0;
  double tau = 1.0;              // 0: the prior is known
  Vector hyper_mean;
  Vector pi_star;
};

inline Matrix ab_design(const ABModelSpec& spec) {
  if (spec.A.size() == 0 && spec.C.size() == 0) {
    const int obs = spec.obs_dim == 0 ? spec.a + spec.b : spec.obs_dim;
    if (obs < spec.a + spec.b) throw RejectedInput("a:b model: obs_dim must be at least a + b");
    return detail::random_orthonormal_columns(obs, spec.a + spec.b, spec.design_seed);
  }
  if (spec.A.cols() != spec.a || spec.C.cols() != spec.b || spec.A.rows() != spec.C.rows())
    throw RejectedInput("a:b model: A must be obs x a and C obs x b");
  Matrix h(spec.A.rows(), spec.a + spec.b);
  h << spec.A, spec.C;
  return h;
}

/// J = H^T H / sigma_z^2 for a single observation.
inline Matrix ab_fisher_analytic(const ABModelSpec& spec) {
  const Matrix h = ab_design(spec);
  return h.transpose() * h / (spec.sigma_z * spec.sigma_z);
}

inline HierarchicalModel build_instance(const ABModelSpec& spec) {
  if (spec.a < 0 || spec.b < 0 || spec.a + spec.b < 1) throw RejectedInput("a:b model: need a, b >= 0 and a + b >= 1");
  if (!(spec.sigma_z > 0.0) || !(spec.sigma_pi > 0.0) || !(spec.out_std > 0.0))
    throw RejectedInput("a:b model: sigma_z, sigma_pi and out_std must be positive");
  if (spec.tau < 0.0) throw RejectedInput("a:b model: tau must be nonnegative");
  const Matrix h = ab_design(spec);
  const Eigen::ColPivHouseholderQR<Matrix> qr(h);
  if (qr.rank() < spec.a + spec.b)
    throw RejectedInput("a:b model: [A|C] is rank deficient, so the Fisher matrix is singular");

  LinearGaussianStructure s;
  s.a = spec.a;
  s.b = spec.b;
  s.out_mean = Vector::Zero(spec.a);
  s.out_std = spec.out_std;
  s.sigma_pi = spec.sigma_pi;
  s.hyper_mean = detail::or_zero(spec.hyper_mean, spec.b);
  s.tau = spec.tau;
  s.design = h;
  s.noise_std = spec.sigma_z;

  HierarchicalModel model;
  model.name = "ab_linear_gaussian";
  model.dims = {spec.b, spec.a + spec.b, static_cast<int>(h.rows())};
  HyperPriorSpec hyper;
  hyper.kind = HyperPriorKind::gaussian;
  hyper.mean = s.hyper_mean;
  hyper.tau = spec.tau;
  detail::attach_hyper_prior(model, hyper, spec.b);

  model.prior_log_density = [s](const Vector& pi, const Vector& t) {
    return iso_normal_log_pdf(t.head(s.a), s.out_mean, s.out_std) + iso_normal_log_pdf(t.tail(s.b), pi, s.sigma_pi);
  };
  model.prior_sample = [s](const Vector& pi, Rng& rng) {
    Vector t(s.task_dim());
    t << iso_normal_sample(s.out_mean, s.out_std, rng), iso_normal_sample(pi, s.sigma_pi, rng);
    return t;
  };
  model.likelihood_log_density = [s](const Vector& t, const Vector& z) {
    return iso_normal_log_pdf(z, s.design * t, s.noise_std);
  };
  model.likelihood_sample = [s](const Vector& t, Rng& rng) { return iso_normal_sample(s.design * t, s.noise_std, rng); };
  model.prior_hellinger_sq = [s](const Vector& p, const Vector& q) {
    return detail::gaussian_hellinger_sq(p, q, s.sigma_pi);
  };
  model.prior_kl = [s](const Vector& p, const Vector& q) {
    return (p - q).squaredNorm() / (2.0 * s.sigma_pi * s.sigma_pi);
  };
  model.likelihood_hellinger_sq = [s](const Vector& t, const Vector& u) {
    return detail::gaussian_hellinger_sq(s.design * t, s.design * u, s.noise_std);
  };
  model.mixture_log_density = [s](std::span<const Vector> ts) {
    const GaussianParams g = lg::mixture_tasks(s, ts.size());
    Vector stacked(g.mean.size());
    for (std::size_t i = 0; i < ts.size(); ++i) stacked.segment(s.task_dim() * i, s.task_dim()) = ts[i];
    return GaussianDensity(g.mean, g.cov).log_pdf(stacked);
  };
  model.kl_true_vs_mixture = [s](const Vector& pi_star, std::size_t n) {
    const GaussianParams truth = lg::true_tasks(s, pi_star, n);
    const GaussianParams mix = lg::mixture_tasks(s, n);
    return kl_gaussian_general(truth.mean, truth.cov, mix.mean, mix.cov).value;
  };
  model.linear_gaussian = s;
  return model;
}

// ---------------------------------------------------------------------------
// Quantized LDR: theta = (theta_LDR, theta_OUT); theta_LDR ~ N(pi, sigma_pi^2 I),
// theta_OUT uniform over a k-bit grid per weight centred on [-1, 1].

struct QuantizedLDRSpec {
  int w_ldr = 2;
  int w_out = 4;
  int k = 8;
  double sigma_pi = 1.0;
  HyperPriorSpec hyper;
  double noise_std = 1.0;
  Vector pi_star;
};

/// The 2^k cell midpoints of a uniform partition of [-1, 1].
inline std::vector<double> quantization_levels(int k) {
  const std::size_t count = std::size_t{1} << k;
  std::vector<double> levels(count);
  for (std::size_t j = 0; j < count; ++j)
    levels[j] = -1.0 + (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(count);
  return levels;
}

/// Index of `v` in the k-bit grid, or -1 when it is not a grid point.
inline long quantization_index(double v, int k) {
  const double count = std::ldexp(1.0, k);
  const double j = ((v + 1.0) * count - 1.0) / 2.0;
  const double r = std::round(j);
  if (std::abs(j - r) > 1e-9 || r < 0.0 || r >= count) return -1;
  return static_cast<long>(r);
}

inline HierarchicalModel build_instance(const QuantizedLDRSpec& spec) {
  if (spec.k < 1 || spec.k > 30) throw RejectedInput("quantized LDR: k must be in [1, 30]");
  if (spec.w_ldr < 1 || spec.w_out < 0) throw RejectedInput("quantized LDR: need w_ldr >= 1 and w_out >= 0");
  if (!(spec.sigma_pi > 0.0)) throw RejectedInput("quantized LDR: sigma_pi must be positive");

  HierarchicalModel model;
  model.name = "quantized_ldr";
  model.dims = {spec.w_ldr, spec.w_ldr + spec.w_out, spec.w_ldr + spec.w_out};
  model.theta_measure = ReferenceMeasure::lebesgue_x_counting;
  detail::attach_hyper_prior(model, spec.hyper, spec.w_ldr);

  const int wl = spec.w_ldr, wo = spec.w_out, k = spec.k;
  const double sp = spec.sigma_pi, sz = spec.noise_std;
  const double out_log_prob = -static_cast<double>(k * wo) * kLn2;
  auto out_log_density = [wl, wo, k, out_log_prob](const Vector& t) {
    for (int w = 0; w < wo; ++w)
      if (quantization_index(t[wl + w], k) < 0) return -kInf;
    return out_log_prob;
  };

  model.prior_log_density = [wl, sp, out_log_density](const Vector& pi, const Vector& t) {
    const double out = out_log_density(t);
    return out == -kInf ? -kInf : iso_normal_log_pdf(t.head(wl), pi, sp) + out;
  };
  model.prior_sample = [wl, wo, k, sp](const Vector& pi, Rng& rng) {
    Vector t(wl + wo);
    t.head(wl) = iso_normal_sample(pi, sp, rng);
    std::uniform_int_distribution<long> level(0, (1L << k) - 1);
    for (int w = 0; w < wo; ++w) t[wl + w] = -1.0 + (2.0 * static_cast<double>(level(rng)) + 1.0) / std::ldexp(1.0, k);
    return t;
  };
  model.likelihood_log_density = [sz](const Vector& t, const Vector& z) { return iso_normal_log_pdf(z, t, sz); };
  model.likelihood_sample = [sz](const Vector& t, Rng& rng) { return iso_normal_sample(t, sz, rng); };
  model.prior_hellinger_sq = [sp](const Vector& p, const Vector& q) { return detail::gaussian_hellinger_sq(p, q, sp); };
  model.prior_kl = [sp](const Vector& p, const Vector& q) { return (p - q).squaredNorm() / (2.0 * sp * sp); };
  model.likelihood_hellinger_sq = [sz](const Vector& t, const Vector& u) {
    return detail::gaussian_hellinger_sq(t, u, sz);
  };

  const HyperPriorSpec hyper = spec.hyper;
  model.mixture_log_density = [hyper, wl, sp, out_log_density](std::span<const Vector> ts) {
    double out = 0.0;
    for (const Vector& t : ts) out += out_log_density(t);
    if (out == -kInf) return -kInf;
    return out + detail::shared_mean_mixture_log_density(ts, hyper, wl, sp);
  };
  const HyperPriorKind kind = spec.hyper.effective_kind();
  if (kind == HyperPriorKind::gaussian || kind == HyperPriorKind::point_mass) {
    model.kl_true_vs_mixture = [hyper, sp](const Vector& pi_star, std::size_t n) {
      return detail::shared_mean_kl_closed_form(pi_star, n, hyper, sp);
    };
  }
  // The theta_OUT block is a product of independent uniform weights.
  model.prior_entropy_bits = [wo, k](const Vector&) {
    const std::size_t count = std::size_t{1} << k;
    const std::vector<double> per_weight(count, 1.0 / static_cast<double>(count));
    return static_cast<double>(wo) * entropy_bits(per_weight);
  };
  return model;
}

// ---------------------------------------------------------------------------
// MLP-LDR: classification likelihood from a one-hidden-layer tanh network.

struct MlpLdrSpec {
  int input_dim = 2;
  int hidden_dim = 2;
  bool canonicalize = true;
  int design_points = 256;        // p(x) is uniform over a fixed design
  std::uint64_t design_seed = 11;
  double sigma_pi = 0.1;
  double out_std = 1.0;
  HyperPriorSpec hyper;
};

inline MlpLayout mlp_layout(const MlpLdrSpec& spec) { return {spec.input_dim, spec.hidden_dim}; }

inline std::vector<Vector> mlp_design(const MlpLdrSpec& spec) {
  Rng rng = make_rng({spec.design_seed, 1});
  std::vector<Vector> xs;
  for (int i = 0; i < spec.design_points; ++i) xs.push_back(iso_normal_sample(Vector::Zero(spec.input_dim), 1.0, rng));
  return xs;
}

inline HierarchicalModel build_instance(const MlpLdrSpec& spec) {
  if (spec.design_points < 1) throw RejectedInput("MLP-LDR: design must contain at least one input");
  const MlpLayout net = mlp_layout(spec);
  const std::vector<Vector> xs = mlp_design(spec);

  HierarchicalModel model;
  model.name = spec.canonicalize ? "mlp_ldr_canonical" : "mlp_ldr";
  model.dims = {net.ldr_size(), net.size(), spec.input_dim + 1};
  model.z_measure = ReferenceMeasure::counting;
  detail::attach_hyper_prior(model, spec.hyper, net.ldr_size());

  const double sp = spec.sigma_pi, so = spec.out_std;
  const int ldr = net.ldr_size(), out = net.out_size();
  model.prior_log_density = [ldr, out, sp, so](const Vector& pi, const Vector& t) {
    return iso_normal_log_pdf(t.head(ldr), pi, sp) + iso_normal_log_pdf(t.tail(out), Vector::Zero(out), so);
  };
  model.prior_sample = [ldr, out, sp, so](const Vector& pi, Rng& rng) {
    Vector t(ldr + out);
    t << iso_normal_sample(pi, sp, rng), iso_normal_sample(Vector::Zero(out), so, rng);
    return t;
  };
  // z = (x, y); the input marginal p(x) is not modelled.
  const int d = spec.input_dim;
  model.likelihood_log_density = [net, d](const Vector& t, const Vector& z) {
    const double f = net.probability(t, z.head(d));
    const double y = z[d];
    if (y == 1.0) return f > 0.0 ? std::log(f) : -kInf;
    if (y == 0.0) return f < 1.0 ? std::log1p(-f) : -kInf;
    return -kInf;
  };
  model.likelihood_sample = [net, xs, d](const Vector& t, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
    const Vector& x = xs[pick(rng)];
    Vector z(d + 1);
    z << x, uniform01(rng) < net.probability(t, x) ? 1.0 : 0.0;
    return z;
  };
  model.likelihood_hellinger_sq = [net, xs](const Vector& t, const Vector& u) {
    double acc = 0.0;
    for (const Vector& x : xs) {
      const double f = net.probability(t, x), g = net.probability(u, x);
      const double a = std::sqrt(f) - std::sqrt(g);
      const double b = std::sqrt(1.0 - f) - std::sqrt(1.0 - g);
      acc += a * a + b * b;
    }
    return acc / static_cast<double>(xs.size());
  };
  model.prior_hellinger_sq = [sp](const Vector& p, const Vector& q) { return detail::gaussian_hellinger_sq(p, q, sp); };
  model.prior_kl = [sp](const Vector& p, const Vector& q) { return (p - q).squaredNorm() / (2.0 * sp * sp); };
  return model;
}

// ---------------------------------------------------------------------------
// Finite hierarchy given by probability tables.

struct DiscreteSpec {
  Vector hyper_probs;
  Matrix prior_table;
  Matrix likelihood_table;
};

namespace detail {

inline void require_stochastic_rows(const Matrix& t, const char* what) {
  if ((t.array() < 0.0).any()) throw RejectedInput(std::string(what) + ": negative probability");
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    if (std::abs(t.row(r).sum() - 1.0) > 1e-12) throw RejectedInput(std::string(what) + ": row does not sum to 1");
}

inline int as_index(const Vector& v, int size) {
  if (v.size() != 1) return -1;
  const double r = std::round(v[0]);
  if (r != v[0] || r < 0.0 || r >= size) return -1;
  return static_cast<int>(r);
}

inline Vector index_point(int i) { return Vector::Constant(1, static_cast<double>(i)); }

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : -kInf; }

}  // namespace detail

inline HierarchicalModel build_instance(const DiscreteSpec& spec) {
  const Eigen::Index K = spec.hyper_probs.size();
  if (K == 0 || spec.prior_table.rows() != K || spec.likelihood_table.rows() != spec.prior_table.cols())
    throw RejectedInput("discrete model: table shapes are inconsistent");
  detail::require_stochastic_rows(spec.hyper_probs.transpose(), "discrete model hyper-prior");
  detail::require_stochastic_rows(spec.prior_table, "discrete model prior table");
  detail::require_stochastic_rows(spec.likelihood_table, "discrete model likelihood table");

  const DiscreteStructure ds{spec.hyper_probs, spec.prior_table, spec.likelihood_table};
  HierarchicalModel model;
  model.name = "discrete";
  model.dims = {1, 1, 1};
  model.pi_measure = model.theta_measure = model.z_measure = ReferenceMeasure::counting;

  const int Kn = ds.hyper_size(), L = ds.theta_size(), V = ds.z_size();
  model.hyper_log_density = [ds, Kn](const Vector& p) {
    const int k = detail::as_index(p, Kn);
    return k < 0 ? -kInf : detail::safe_log(ds.hyper_probs[k]);
  };
  auto draw = [](const auto& row, Rng& rng) {
    double u = uniform01(rng);
    for (Eigen::Index j = 0; j + 1 < row.size(); ++j) {
      u -= row[j];
      if (u < 0.0) return static_cast<int>(j);
    }
    return static_cast<int>(row.size() - 1);
  };
  model.hyper_sample = [ds, draw](Rng& rng) { return detail::index_point(draw(ds.hyper_probs, rng)); };
  model.prior_log_density = [ds, Kn, L](const Vector& p, const Vector& t) {
    const int k = detail::as_index(p, Kn), l = detail::as_index(t, L);
    if (k < 0) throw RejectedInput("discrete model: pi out of range");
    return l < 0 ? -kInf : detail::safe_log(ds.prior_table(k, l));
  };
  model.prior_sample = [ds, Kn, draw](const Vector& p, Rng& rng) {
    const int k = detail::as_index(p, Kn);
    if (k < 0) throw RejectedInput("discrete model: pi out of range");
    return detail::index_point(draw(ds.prior_table.row(k), rng));
  };
  model.likelihood_log_density = [ds, L, V](const Vector& t, const Vector& z) {
    const int l = detail::as_index(t, L), v = detail::as_index(z, V);
    if (l < 0) throw RejectedInput("discrete model: theta out of range");
    return v < 0 ? -kInf : detail::safe_log(ds.likelihood_table(l, v));
  };
  model.likelihood_sample = [ds, L, draw](const Vector& t, Rng& rng) {
    const int l = detail::as_index(t, L);
    if (l < 0) throw RejectedInput("discrete model: theta out of range");
    return detail::index_point(draw(ds.likelihood_table.row(l), rng));
  };
  model.prior_hellinger_sq = [ds](const Vector& p, const Vector& q) {
    return hellinger_sq_discrete(ds.prior_table.row(static_cast<Eigen::Index>(p[0])).transpose(),
                                 ds.prior_table.row(static_cast<Eigen::Index>(q[0])).transpose())
        .value;
  };
  model.prior_kl = [ds](const Vector& p, const Vector& q) {
    return kl_discrete(ds.prior_table.row(static_cast<Eigen::Index>(p[0])).transpose(),
                       ds.prior_table.row(static_cast<Eigen::Index>(q[0])).transpose())
        .value;
  };
  model.likelihood_hellinger_sq = [ds](const Vector& t, const Vector& u) {
    return hellinger_sq_discrete(ds.likelihood_table.row(static_cast<Eigen::Index>(t[0])).transpose(),
                                 ds.likelihood_table.row(static_cast<Eigen::Index>(u[0])).transpose())
        .value;
  };
  model.mixture_log_density = [ds, Kn, L](std::span<const Vector> ts) {
    std::vector<double> terms;
    for (int k = 0; k < Kn; ++k) {
      if (ds.hyper_probs[k] <= 0.0) continue;
      double acc = std::log(ds.hyper_probs[k]);
      for (const Vector& t : ts) {
        const int l = detail::as_index(t, L);
        acc += l < 0 ? -kInf : detail::safe_log(ds.prior_table(k, l));
      }
      terms.push_back(acc);
    }
    return log_sum_exp(terms);
  };
  // Exact D_K by enumerating count vectors of theta^n (the density depends on
  // theta^n only through its counts).
  model.kl_true_vs_mixture = [ds, Kn, L](const Vector& pi_star, std::size_t n) {
    const int ks = detail::as_index(pi_star, Kn);
    if (ks < 0) throw RejectedInput("discrete model: pi* out of range");
    double acc = 0.0;
    for_each_composition(static_cast<int>(n), L, [&](const std::vector<int>& c) {
      double log_true = 0.0;
      for (int l = 0; l < L; ++l)
        if (c[l] > 0) log_true += c[l] * detail::safe_log(ds.prior_table(ks, l));
      if (log_true == -kInf) return;
      std::vector<double> terms;
      for (int k = 0; k < Kn; ++k) {
        double t = detail::safe_log(ds.hyper_probs[k]);
        for (int l = 0; l < L; ++l)
          if (c[l] > 0) t += c[l] * detail::safe_log(ds.prior_table(k, l));
        terms.push_back(t);
      }
      acc += std::exp(log_multinomial(c) + log_true) * (log_true - log_sum_exp(terms));
    });
    return std::max(acc, 0.0);
  };
  model.prior_entropy_bits = [ds, Kn](const Vector& p) {
    const int k = detail::as_index(p, Kn);
    if (k < 0) throw RejectedInput("discrete model: pi out of range");
    return entropy_bits(Vector(ds.prior_table.row(k).transpose()));
  };
  if (Kn == 1) model.hyper_point_mass = detail::index_point(0);
  model.discrete = ds;
  return model;
}

// ---------------------------------------------------------------------------
// Numerical Fisher information

struct FisherEstimate {
  Matrix matrix;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  bool near_singular = false;
  std::size_t samples = 0;
};

/// Monte Carlo mean over z ~ p(.|theta) of score outer products, the score taken
/// by central finite differences with step `fd_step`.
inline FisherEstimate fisher_matrix_numeric(const HierarchicalModel& model, const Vector& theta, std::size_t samples,
                                            double fd_step, const SeedSpec& seed, double singular_tol = 1e-8) {
  if (samples == 0 || !(fd_step > 0.0)) throw RejectedInput("fisher_matrix_numeric: need samples > 0 and fd_step > 0");
  const Eigen::Index d = theta.size();
  struct Acc {
    Matrix sum;
    std::size_t count = 0;
    bool nonfinite = false;
    void merge(const Acc& o) {
      if (o.count == 0 && !o.nonfinite) return;
      if (count == 0) sum = o.sum;
      else sum += o.sum;
      count += o.count;
      nonfinite = nonfinite || o.nonfinite;
    }
  };
  const Acc acc = chunked_reduce<Acc>(samples, 4096, seed, 1, [&](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
    a.sum = Matrix::Zero(d, d);
    Vector score(d);
    for (std::size_t s = b; s < e; ++s) {
      const Vector z = model.likelihood_sample(theta, rng);
      for (Eigen::Index k = 0; k < d; ++k) {
        Vector up = theta, down = theta;
        up[k] += fd_step;
        down[k] -= fd_step;
        score[k] = (model.likelihood_log_density(up, z) - model.likelihood_log_density(down, z)) / (2.0 * fd_step);
      }
      if (!score.allFinite()) {
        a.nonfinite = true;
        continue;
      }
      a.sum.noalias() += score * score.transpose();
      ++a.count;
    }
  });
  if (acc.nonfinite)
    throw NumericalError("fisher_matrix_numeric: non-finite finite difference at fd_step = " + std::to_string(fd_step) +
                         "; reduce the step or check that theta lies inside the support");
  FisherEstimate out;
  out.matrix = acc.sum / static_cast<double>(acc.count);
  out.samples = acc.count;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(out.matrix);
  out.min_eigenvalue = eig.eigenvalues().minCoeff();
  out.max_eigenvalue = eig.eigenvalues().maxCoeff();
  out.near_singular = out.min_eigenvalue <= singular_tol * std::max(1.0, out.max_eigenvalue);
  return out;
}

// ---------------------------------------------------------------------------
// Local domination probe: Delta_H^{1/2}(theta, theta') against ||theta - theta'||.

struct DominationProbeOptions {
  std::vector<double> radii{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  std::size_t pairs_per_radius = 64;
  /// Orbit representative map; distances use it when set.
  std::function<Vector(const Vector&)> canonicalize;
  /// Random symmetry transform; when set, probe points are mapped through it
  /// and exact symmetry images of theta are included.
  std::function<Vector(const Vector&, Rng&)> symmetry;
  double ratio_floor = 1e-3;
  double ratio_ceiling = 1e3;
};

struct DominationProbe {
  double c = kInf;        // min ratio
  double c_prime = 0.0;   // max ratio
  std::vector<double> min_per_radius;
  std::vector<double> max_per_radius;
  bool pass = false;
  std::optional<std::pair<Vector, Vector>> witness;  // pair attaining the min ratio on failure
};

inline DominationProbe local_domination_probe(const HierarchicalModel& model, const Vector& theta,
                                              const DominationProbeOptions& opts, const SeedSpec& seed) {
  if (!model.likelihood_hellinger_sq) throw RejectedInput("local_domination_probe: instance lacks Delta_H");
  Rng rng = make_rng(seed);
  DominationProbe out;
  Vector arg_other;
  auto distance = [&](const Vector& u, const Vector& v) {
    return opts.canonicalize ? (opts.canonicalize(u) - opts.canonicalize(v)).norm() : (u - v).norm();
  };
  auto consider = [&](const Vector& other, double& lo, double& hi) {
    const double dist = distance(theta, other);
    if (dist == 0.0) return;  // 0/0: identical points (or orbit) are excluded
    const double ratio = std::sqrt(model.likelihood_hellinger_sq(theta, other)) / dist;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    if (ratio < out.c) {
      out.c = ratio;
      arg_other = other;
    }
    out.c_prime = std::max(out.c_prime, ratio);
  };

  if (opts.symmetry) {
    double lo = kInf, hi = 0.0;
    for (std::size_t k = 0; k < opts.pairs_per_radius; ++k) consider(opts.symmetry(theta, rng), lo, hi);
  }
  for (double r : opts.radii) {
    double lo = kInf, hi = 0.0;
    for (std::size_t k = 0; k < opts.pairs_per_radius; ++k) {
      Vector u = iso_normal_sample(Vector::Zero(theta.size()), 1.0, rng);
      Vector other = theta + r * u / u.norm();
      if (opts.symmetry && uniform01(rng) < 0.5) other = opts.symmetry(other, rng);
      consider(other, lo, hi);
    }
    out.min_per_radius.push_back(lo);
    out.max_per_radius.push_back(hi);
  }
  out.pass = out.c >= opts.ratio_floor && out.c_prime <= opts.ratio_ceiling;
  if (!out.pass && arg_other.size() > 0) out.witness = std::make_pair(theta, arg_other);
  return out;
}

}  // namespace hierbayes
