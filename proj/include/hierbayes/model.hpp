#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "stats.hpp"

namespace hierbayes {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an argument lies outside the declared support or shape.
class RejectedInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ReferenceMeasure { lebesgue, counting, lebesgue_x_counting };
enum class Level { hyper, prior, likelihood };

inline std::string to_string(ReferenceMeasure m) {
  switch (m) {
    case ReferenceMeasure::lebesgue: return "lebesgue";
    case ReferenceMeasure::counting: return "counting";
    case ReferenceMeasure::lebesgue_x_counting: return "lebesgue_x_counting";
  }
  return "?";
}

struct SpaceDims {
  int pi = 0;
  int theta = 0;
  int z = 0;
};

struct Box {
  Vector lower;
  Vector upper;

  [[nodiscard]] bool contains(const Vector& x) const {
    if (x.size() != lower.size()) return false;
    return ((x.array() >= lower.array()) && (x.array() <= upper.array())).all();
  }
  [[nodiscard]] double log_volume() const { return (upper - lower).array().log().sum(); }
};

/// Conjugate structure shared by the shared-mean and a:b instances.
///
/// Task parameter theta = (x_a, x_b) with x_a ~ N(out_mean, out_std^2 I_a) and
/// x_b ~ N(pi, sigma_pi^2 I_b); pi ~ N(hyper_mean, tau^2 I_b), tau = 0 meaning a
/// point mass. Observations z = design * theta + N(0, noise_std^2 I).
struct LinearGaussianStructure {
  int a = 0;
  int b = 0;
  Vector out_mean;
  double out_std = 1.0;
  double sigma_pi = 1.0;
  Vector hyper_mean;
  double tau = 1.0;
  Matrix design;
  double noise_std = 1.0;

  [[nodiscard]] int task_dim() const { return a + b; }
  [[nodiscard]] int obs_dim() const { return static_cast<int>(design.rows()); }
};

/// Finite hierarchy: pi in {0..K-1}, theta in {0..L-1}, z in {0..V-1}.
struct DiscreteStructure {
  Vector hyper_probs;       // K
  Matrix prior_table;       // K x L, rows p(theta | pi)
  Matrix likelihood_table;  // L x V, rows p(z | theta)

  [[nodiscard]] int hyper_size() const { return static_cast<int>(hyper_probs.size()); }
  [[nodiscard]] int theta_size() const { return static_cast<int>(prior_table.cols()); }
  [[nodiscard]] int z_size() const { return static_cast<int>(likelihood_table.cols()); }
};

/// The three-tier model: hyper-prior p(pi), prior family p(theta|pi) and
/// likelihood family p(z|theta). Densities are natural-log and relative to the
/// declared reference measure of each space. Optional members carry closed
/// forms an instance can supply; algorithms fall back to generic routes when
/// they are empty.
struct HierarchicalModel {
  std::string name;
  SpaceDims dims;
  ReferenceMeasure pi_measure = ReferenceMeasure::lebesgue;
  ReferenceMeasure theta_measure = ReferenceMeasure::lebesgue;
  ReferenceMeasure z_measure = ReferenceMeasure::lebesgue;

  std::function<double(const Vector& pi)> hyper_log_density;
  std::function<Vector(Rng&)> hyper_sample;
  std::function<double(const Vector& pi, const Vector& theta)> prior_log_density;
  std::function<Vector(const Vector& pi, Rng&)> prior_sample;
  std::function<double(const Vector& theta, const Vector& z)> likelihood_log_density;
  std::function<Vector(const Vector& theta, Rng&)> likelihood_sample;

  /// Squared Hellinger distance / KL between priors p(.|pi) and p(.|pi').
  std::function<double(const Vector&, const Vector&)> prior_hellinger_sq;
  std::function<double(const Vector&, const Vector&)> prior_kl;
  /// Squared Hellinger distance between likelihoods p(.|theta) and p(.|theta').
  std::function<double(const Vector&, const Vector&)> likelihood_hellinger_sq;
  /// Closed-form log p(theta^n) = log E_pi prod_i p(theta_i | pi).
  std::function<double(std::span<const Vector>)> mixture_log_density;
  /// Closed-form D_K(P_{Theta^n | pi*} || P_{Theta^n}).
  std::function<double(const Vector& pi_star, std::size_t n)> kl_true_vs_mixture;
  /// Shannon entropy (bits) of the quantized part of p(theta | pi).
  std::function<double(const Vector& pi)> prior_entropy_bits;

  std::optional<LinearGaussianStructure> linear_gaussian;
  std::optional<DiscreteStructure> discrete;
  std::optional<Box> hyper_box;          // compact hyper-prior support
  std::optional<Box> hyper_grid_bounds;  // integration range for grids over Pi
  std::optional<Vector> hyper_point_mass;  // degenerate hyper-prior location

  [[nodiscard]] bool in_hyper_support(const Vector& pi) const {
    return pi.size() == dims.pi && hyper_log_density(pi) > -kInf;
  }
};

/// n x m observation matrix, row = task. Entries are points of Z.
class SampleMatrix {
 public:
  SampleMatrix() = default;
  SampleMatrix(std::size_t n, std::size_t m, int z_dim) : n_(n), m_(m), z_dim_(z_dim), entries_(n * m, Vector::Zero(z_dim)) {
    if (n == 0) throw RejectedInput("SampleMatrix: n must be at least 1");
  }

  [[nodiscard]] std::size_t n() const { return n_; }
  [[nodiscard]] std::size_t m() const { return m_; }
  [[nodiscard]] int z_dim() const { return z_dim_; }

  Vector& operator()(std::size_t i, std::size_t j) { return entries_[i * m_ + j]; }
  [[nodiscard]] const Vector& operator()(std::size_t i, std::size_t j) const { return entries_[i * m_ + j]; }

  [[nodiscard]] std::span<const Vector> row(std::size_t i) const { return {entries_.data() + i * m_, m_}; }

  /// The leading `k` columns as a new (n, k) matrix.
  [[nodiscard]] SampleMatrix leading_columns(std::size_t k) const {
    if (k > m_) throw RejectedInput("SampleMatrix: column count out of range");
    SampleMatrix out(n_, k, z_dim_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < k; ++j) out(i, j) = (*this)(i, j);
    return out;
  }

  /// Column `j` as n points.
  [[nodiscard]] std::vector<Vector> column(std::size_t j) const {
    std::vector<Vector> out;
    out.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) out.push_back((*this)(i, j));
    return out;
  }

  /// This matrix with one extra column appended.
  [[nodiscard]] SampleMatrix with_column(std::span<const Vector> next) const {
    if (next.size() != n_) throw RejectedInput("SampleMatrix: appended column must have n entries");
    SampleMatrix out(n_, m_ + 1, z_dim_);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < m_; ++j) out(i, j) = (*this)(i, j);
      out(i, m_) = next[i];
    }
    return out;
  }

  /// Rows permuted so that new row i is old row perm[i].
  [[nodiscard]] SampleMatrix permuted_rows(std::span<const std::size_t> perm) const {
    SampleMatrix out(n_, m_, z_dim_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < m_; ++j) out(i, j) = (*this)(perm[i], j);
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  int z_dim_ = 0;
  std::vector<Vector> entries_;
};

// ---------------------------------------------------------------------------
// Gaussian helpers

inline double normal_log_pdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * u * u;
}

/// Isotropic N(mean, sd^2 I) log density.
inline double iso_normal_log_pdf(const Vector& x, const Vector& mean, double sd) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * kLog2Pi - d * std::log(sd) - 0.5 * (x - mean).squaredNorm() / (sd * sd);
}

inline Vector iso_normal_sample(const Vector& mean, double sd, Rng& rng) {
  Vector out(mean.size());
  for (Eigen::Index k = 0; k < mean.size(); ++k) out[k] = mean[k] + sd * standard_normal(rng);
  return out;
}

/// Gaussian with a cached Cholesky factor.
class GaussianDensity {
 public:
  GaussianDensity() = default;
  GaussianDensity(Vector mean, const Matrix& cov) : mean_(std::move(mean)), llt_(cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean_.size())
      throw RejectedInput("GaussianDensity: covariance shape does not match mean");
    if (llt_.info() != Eigen::Success || !cov.isApprox(cov.transpose(), 1e-12))
      throw RejectedInput("GaussianDensity: covariance is not symmetric positive definite");
    const Matrix L = llt_.matrixL();
    log_det_ = 2.0 * L.diagonal().array().log().sum();
  }

  [[nodiscard]] double log_pdf(const Vector& x) const {
    const Vector r = x - mean_;
    const Vector s = llt_.matrixL().solve(r);
    return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + log_det_ + s.squaredNorm());
  }

  [[nodiscard]] Vector sample(Rng& rng) const {
    Vector e(mean_.size());
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = standard_normal(rng);
    return mean_ + llt_.matrixL() * e;
  }

  [[nodiscard]] const Vector& mean() const { return mean_; }
  [[nodiscard]] Matrix covariance() const { return llt_.reconstructedMatrix(); }
  [[nodiscard]] double log_det() const { return log_det_; }
  [[nodiscard]] const Eigen::LLT<Matrix>& llt() const { return llt_; }

 private:
  Vector mean_;
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

// ---------------------------------------------------------------------------
// Core operations

/// n independent draws from p(theta | pi).
inline std::vector<Vector> sample_tasks(const HierarchicalModel& model, const Vector& pi, std::size_t n,
                                        const SeedSpec& seed) {
  if (n == 0) throw RejectedInput("sample_tasks: n must be at least 1");
  if (!model.in_hyper_support(pi)) throw RejectedInput("sample_tasks: pi outside hyper-prior support");
  Rng rng = make_rng(seed);
  std::vector<Vector> tasks;
  tasks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) tasks.push_back(model.prior_sample(pi, rng));
  return tasks;
}

/// Row i holds m i.i.d. draws from p(z | theta_i); row i uses stream seed.child(i).
inline SampleMatrix sample_observations(const HierarchicalModel& model, std::span<const Vector> tasks, std::size_t m,
                                        const SeedSpec& seed) {
  SampleMatrix z(tasks.size(), m, model.dims.z);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].size() != model.dims.theta) throw RejectedInput("sample_observations: task has wrong dimension");
    Rng rng = make_rng(seed.child(i));
    for (std::size_t j = 0; j < m; ++j) z(i, j) = model.likelihood_sample(tasks[i], rng);
  }
  return z;
}

/// Natural-log density at `query` for the given tier, -inf where the density is zero.
inline double log_density(const HierarchicalModel& model, Level level, const Vector& condition, const Vector& query) {
  switch (level) {
    case Level::hyper:
      if (query.size() != model.dims.pi) throw RejectedInput("log_density: query is not a point of Pi");
      return model.hyper_log_density(query);
    case Level::prior:
      if (!model.in_hyper_support(condition)) throw RejectedInput("log_density: pi outside hyper-prior support");
      if (query.size() != model.dims.theta) throw RejectedInput("log_density: query is not a point of Theta");
      return model.prior_log_density(condition, query);
    case Level::likelihood:
      if (condition.size() != model.dims.theta) throw RejectedInput("log_density: theta has wrong dimension");
      if (query.size() != model.dims.z) throw RejectedInput("log_density: query is not a point of Z");
      return model.likelihood_log_density(condition, query);
  }
  return -kInf;
}

}  // namespace hierbayes
