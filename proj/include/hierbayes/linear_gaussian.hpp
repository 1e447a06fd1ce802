#pragma once

// Closed-form algebra for the conjugate linear-Gaussian hierarchy. Task
// parameter vectors for n tasks are stacked task-major: [theta_1; ...; theta_n].

#include <span>
#include <vector>

#include "model.hpp"

namespace hierbayes {

struct GaussianParams {
  Vector mean;
  Matrix cov;
};

namespace lg {

inline Matrix block_diag_repeat(const Matrix& block, std::size_t n) {
  const Eigen::Index d = block.rows();
  Matrix out = Matrix::Zero(d * static_cast<Eigen::Index>(n), block.cols() * static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.block(d * i, block.cols() * i, d, block.cols()) = block;
  return out;
}

inline Vector task_mean(const LinearGaussianStructure& s, const Vector& pi) {
  Vector mu(s.task_dim());
  mu << s.out_mean, pi;
  return mu;
}

/// Per-task prior covariance given pi: diag(out_std^2 I_a, sigma_pi^2 I_b).
inline Matrix task_cov(const LinearGaussianStructure& s) {
  Vector d(s.task_dim());
  d << Vector::Constant(s.a, s.out_std * s.out_std), Vector::Constant(s.b, s.sigma_pi * s.sigma_pi);
  return d.asDiagonal();
}

/// p(theta^n | pi): tasks independent given pi.
inline GaussianParams true_tasks(const LinearGaussianStructure& s, const Vector& pi, std::size_t n) {
  const Vector mu = task_mean(s, pi);
  return {mu.replicate(static_cast<Eigen::Index>(n), 1), block_diag_repeat(task_cov(s), n)};
}

/// Hierarchical mixture p(theta^n) = E_pi p(theta^n | pi): the shared block is
/// correlated across tasks through pi.
inline GaussianParams mixture_tasks(const LinearGaussianStructure& s, std::size_t n) {
  GaussianParams g = true_tasks(s, s.hyper_mean, n);
  const Eigen::Index d = s.task_dim();
  const double t2 = s.tau * s.tau;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (int k = 0; k < s.b; ++k) g.cov(d * i + s.a + k, d * j + s.a + k) += t2;
  return g;
}

/// Product of single-task mixtures: the learner that ignores task relatedness.
inline GaussianParams independent_tasks(const LinearGaussianStructure& s, std::size_t n) {
  Matrix c = task_cov(s);
  for (int k = 0; k < s.b; ++k) c(s.a + k, s.a + k) += s.tau * s.tau;
  return {task_mean(s, s.hyper_mean).replicate(static_cast<Eigen::Index>(n), 1), block_diag_repeat(c, n)};
}

}  // namespace lg

/// Bayesian learner for n linear-Gaussian tasks under a Gaussian prior on
/// theta^n, with every task observed the same number of times m.
class LinearGaussianLearner {
 public:
  LinearGaussianLearner(const LinearGaussianStructure& s, GaussianParams prior, std::size_t n)
      : s_(s), n_(n), prior_(std::move(prior)) {
    prior_llt_.compute(prior_.cov);
    if (prior_llt_.info() != Eigen::Success) throw RejectedInput("LinearGaussianLearner: prior covariance not SPD");
    prior_precision_ = prior_llt_.solve(Matrix::Identity(dim(), dim()));
    prior_precision_ = 0.5 * (prior_precision_ + prior_precision_.transpose());
    const Matrix L = prior_llt_.matrixL();
    prior_log_det_ = 2.0 * L.diagonal().array().log().sum();
    const double v = s.noise_std * s.noise_std;
    task_info_ = s.design.transpose() * s.design / v;
    stacked_design_ = lg::block_diag_repeat(s.design, n);
  }

  [[nodiscard]] Eigen::Index dim() const { return prior_.mean.size(); }
  [[nodiscard]] std::size_t n() const { return n_; }
  [[nodiscard]] const GaussianParams& prior() const { return prior_; }
  [[nodiscard]] const Matrix& stacked_design() const { return stacked_design_; }

  [[nodiscard]] Matrix posterior_precision(double m) const {
    return prior_precision_ + m * lg::block_diag_repeat(task_info_, n_);
  }

  /// Posterior over theta^n from per-task observation sums (n x obs_dim).
  [[nodiscard]] GaussianParams posterior(double m, const Matrix& sums) const {
    const Matrix prec = posterior_precision(m);
    const Eigen::LLT<Matrix> llt(prec);
    const Vector h = prior_precision_ * prior_.mean + stacked_design_.transpose() * flatten(sums) /
                                                          (s_.noise_std * s_.noise_std);
    Matrix cov = llt.solve(Matrix::Identity(dim(), dim()));
    cov = 0.5 * (cov + cov.transpose());
    return {llt.solve(h), cov};
  }

  /// Per-task observation sums of a sample matrix.
  [[nodiscard]] static Matrix observation_sums(const SampleMatrix& z) {
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(z.n()), z.z_dim());
    for (std::size_t i = 0; i < z.n(); ++i)
      for (const Vector& e : z.row(i)) sums.row(static_cast<Eigen::Index>(i)) += e.transpose();
    return sums;
  }

  /// Predictive distribution of the next column (stacked n * obs_dim).
  [[nodiscard]] GaussianParams predictive(const GaussianParams& post) const {
    Matrix cov = stacked_design_ * post.cov * stacked_design_.transpose();
    cov.diagonal().array() += s_.noise_std * s_.noise_std;
    return {stacked_design_ * post.mean, cov};
  }

  [[nodiscard]] double prior_log_pdf(const Vector& theta) const {
    const Vector r = theta - prior_.mean;
    return -0.5 * (static_cast<double>(dim()) * kLog2Pi + prior_log_det_ + r.dot(prior_precision_ * r));
  }

  /// log p(z | theta^n) summed over all entries.
  [[nodiscard]] double data_log_likelihood(const Vector& theta, const SampleMatrix& z) const {
    double acc = 0.0;
    const Eigen::Index d = s_.task_dim();
    for (std::size_t i = 0; i < z.n(); ++i) {
      const Vector mu = s_.design * theta.segment(d * static_cast<Eigen::Index>(i), d);
      for (const Vector& e : z.row(i)) acc += iso_normal_log_pdf(e, mu, s_.noise_std);
    }
    return acc;
  }

  /// log p(z) via the Bayes identity at the posterior mean.
  [[nodiscard]] double log_evidence(const SampleMatrix& z) const {
    const GaussianParams post = posterior(static_cast<double>(z.m()), observation_sums(z));
    const GaussianDensity post_density(post.mean, post.cov);
    return data_log_likelihood(post.mean, z) + prior_log_pdf(post.mean) - post_density.log_pdf(post.mean);
  }

  /// E_{z ~ p(.|theta), m obs per task} [log p(theta | z)] - log p(theta)
  /// = D_K(P_{Z^(n,m)|theta} || P_{Z^(n,m)}) for this learner.
  [[nodiscard]] double expected_log_ratio(const Vector& theta, double m) const {
    if (m == 0.0) return 0.0;
    const Matrix prec = posterior_precision(m);
    const Eigen::LLT<Matrix> llt(prec);
    const Matrix post_cov = llt.solve(Matrix::Identity(dim(), dim()));
    const Matrix L = llt.matrixL();
    const double log_det_prec = 2.0 * L.diagonal().array().log().sum();
    const Vector r = theta - prior_.mean;
    const Vector u = prior_precision_ * r;
    const double noise_term = m * (post_cov * lg::block_diag_repeat(task_info_, n_)).trace();
    return 0.5 * (log_det_prec + prior_log_det_) - 0.5 * u.dot(post_cov * u) - 0.5 * noise_term +
           0.5 * r.dot(prior_precision_ * r);
  }

  /// E_{theta ~ truth} expected_log_ratio(theta, m), in closed form.
  [[nodiscard]] double expected_log_ratio(const GaussianParams& truth, double m) const {
    if (m == 0.0) return 0.0;
    const Matrix prec = posterior_precision(m);
    const Eigen::LLT<Matrix> llt(prec);
    const Matrix post_cov = llt.solve(Matrix::Identity(dim(), dim()));
    const Matrix L = llt.matrixL();
    const double log_det_prec = 2.0 * L.diagonal().array().log().sum();
    const Vector delta = truth.mean - prior_.mean;
    const Matrix second = truth.cov + delta * delta.transpose();
    const double noise_term = m * (post_cov * lg::block_diag_repeat(task_info_, n_)).trace();
    return 0.5 * (log_det_prec + prior_log_det_) -
           0.5 * (prior_precision_ * post_cov * prior_precision_ * second).trace() - 0.5 * noise_term +
           0.5 * (prior_precision_ * second).trace();
  }

  [[nodiscard]] Vector flatten(const Matrix& sums) const {
    Vector out(sums.size());
    for (Eigen::Index i = 0; i < sums.rows(); ++i) out.segment(i * sums.cols(), sums.cols()) = sums.row(i).transpose();
    return out;
  }

 private:
  LinearGaussianStructure s_;
  std::size_t n_;
  GaussianParams prior_;
  Eigen::LLT<Matrix> prior_llt_;
  Matrix prior_precision_;
  double prior_log_det_ = 0.0;
  Matrix task_info_;
  Matrix stacked_design_;
};

}  // namespace hierbayes
