#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hierbayes/divergence.hpp"
#include "hierbayes/zoo.hpp"
#include "oracles.hpp"

using namespace hierbayes;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

}  // namespace

TEST(HellingerGaussian, IdenticalMeansGiveZero) {
  EXPECT_EQ(hellinger_sq_gaussian(v1(0.3), v1(0.3), 1.0).value, 0.0);
}

TEST(HellingerGaussian, UnitValueMatchesQuadrature) {
  const double d = std::sqrt(8.0 * std::log(2.0));
  EXPECT_NEAR(hellinger_sq_gaussian(v1(0.0), v1(d), 1.0).value, 1.0, 1e-14);
  EXPECT_NEAR(oracle::hellinger_sq_quadrature(0.0, 1.0, d, 1.0), 1.0, 1e-8);
}

TEST(HellingerGaussian, MatchesQuadratureAcrossScales) {
  for (double sigma : {0.3, 1.0, 2.5})
    for (double d : {0.1, 1.0, 4.0})
      EXPECT_NEAR(hellinger_sq_gaussian(v1(0.0), v1(d), sigma).value,
                  oracle::hellinger_sq_quadrature(0.0, sigma, d, sigma), 1e-8);
}

TEST(HellingerGaussian, FarMeansApproachTwo) {
  EXPECT_NEAR(hellinger_sq_gaussian(v1(0.0), v1(100.0), 1.0).value, 2.0, 1e-12);
  EXPECT_LE(hellinger_sq_gaussian(v1(0.0), v1(1e6), 1.0).value, 2.0);
}

TEST(KlEqualCov, Values) {
  EXPECT_EQ(kl_gaussian_equal_cov(v1(1.0), v1(1.0), 1.0).value, 0.0);
  EXPECT_NEAR(kl_gaussian_equal_cov(v1(0.0), v1(1.0), 1.0).value, 0.5, 1e-15);
  EXPECT_NEAR(oracle::kl_quadrature(0.0, 1.0, 1.0, 1.0), 0.5, 1e-8);
}

TEST(KlEqualCov, DoublingScaleQuarters) {
  const double a = kl_gaussian_equal_cov(v1(0.0), v1(1.3), 0.7).value;
  const double b = kl_gaussian_equal_cov(v1(0.0), v1(1.3), 1.4).value;
  EXPECT_NEAR(b, a / 4.0, 1e-15);
  EXPECT_NEAR(oracle::kl_quadrature(0.0, 1.4, 1.3, 1.4), b, 1e-8);
}

TEST(KlGaussianGeneral, OneDimensionalScaleChange) {
  const Matrix c1 = Matrix::Identity(1, 1), c2 = 4.0 * Matrix::Identity(1, 1);
  const double v = kl_gaussian_general(v1(0), c1, v1(0), c2).value;
  EXPECT_NEAR(v, 0.5 * (0.25 - 1.0 + std::log(4.0)), 1e-14);
  EXPECT_NEAR(v, oracle::kl_quadrature(0.0, 1.0, 0.0, 2.0), 1e-8);
  EXPECT_EQ(kl_gaussian_general(v1(2), c2, v1(2), c2).value, 0.0);
}

TEST(KlGaussianGeneral, SharedMeanAnchor) {
  const double v = kl_gaussian_general(v1(0), Matrix::Identity(1, 1), v1(0), 2.0 * Matrix::Identity(1, 1)).value;
  EXPECT_NEAR(v, 0.5 * (std::log(2.0) - 0.5), 1e-14);
  EXPECT_NEAR(v, oracle::kl_quadrature(0.0, 1.0, 0.0, std::sqrt(2.0)), 1e-8);
}

TEST(KlMonteCarlo, IdenticalDistributionsGiveExactZero) {
  auto lp = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  auto draw = [](Rng& rng) { return v1(standard_normal(rng)); };
  const auto r = kl_monte_carlo(lp, lp, draw, 1000, {1, 0});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
}

TEST(KlMonteCarlo, UnitShiftWithinThreeSe) {
  auto p = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  auto q = [](const Vector& x) { return -0.5 * (x[0] - 1.0) * (x[0] - 1.0); };
  auto draw = [](Rng& rng) { return v1(standard_normal(rng)); };
  const auto r = kl_monte_carlo(p, q, draw, 100000, {2, 0});
  EXPECT_NEAR(r.value, 0.5, 3.0 * r.std_error);
  EXPECT_GT(r.std_error, 0.0);
}

TEST(KlMonteCarlo, SharedMeanMixtureWithinThreeSe) {
  SharedMeanGaussianSpec spec;
  spec.b = 1;
  const HierarchicalModel model = build_instance(spec);
  auto p = [&](const Vector& t) { return model.prior_log_density(v1(0), t); };
  auto q = [&](const Vector& t) {
    const Vector ts[] = {t};
    return model.mixture_log_density(ts);
  };
  auto draw = [&](Rng& rng) { return model.prior_sample(v1(0), rng); };
  const auto r = kl_monte_carlo(p, q, draw, 100000, {3, 0});
  EXPECT_NEAR(r.value, 0.5 * (std::log(2.0) - 0.5), 3.0 * r.std_error);
}

TEST(KlMonteCarlo, SupportViolationIsFlagged) {
  auto p = [](const Vector&) { return 0.0; };
  auto q = [](const Vector& x) { return x[0] > 0.5 ? -kInf : 0.0; };
  auto draw = [](Rng& rng) { return v1(uniform01(rng)); };
  const auto r = kl_monte_carlo(p, q, draw, 1000, {4, 0});
  EXPECT_TRUE(r.support_violation);
  EXPECT_EQ(r.value, kInf);
}

TEST(Entropy, Values) {
  const Vector three = Vector::Constant(3, 1.0 / 3.0);
  double direct = 0.0;
  for (int k = 0; k < 3; ++k) direct -= (1.0 / 3.0) * std::log2(1.0 / 3.0);
  EXPECT_NEAR(entropy_bits(three), direct, 1e-15);
  EXPECT_NEAR(entropy_bits(three), 1.584962500721156, 1e-12);
  EXPECT_EQ(entropy_bits(v1(1.0)), 0.0);

  QuantizedLDRSpec q;
  q.k = 8;
  q.w_out = 4;
  EXPECT_NEAR(build_instance(q).prior_entropy_bits(Vector::Zero(q.w_ldr)), 32.0, 1e-12);
}

TEST(Feynman, ConstantTableGivesEquality) {
  const Vector pw = Vector::Constant(2, 0.5), pv = Vector::Constant(3, 1.0 / 3.0);
  const auto c = check_feynman_inequality(pw, pv, Matrix::Constant(2, 3, 0.7));
  EXPECT_NEAR(c.lhs, -0.7, 1e-14);
  EXPECT_NEAR(c.rhs, -0.7, 1e-14);
  EXPECT_TRUE(c.holds);
}

TEST(Feynman, ProductOfSigns) {
  const Vector p = Vector::Constant(2, 0.5);
  Matrix u(2, 2);
  u << 1, -1, -1, 1;  // u(w, v) = w v on {+1, -1}^2
  const auto c = check_feynman_inequality(p, p, u);
  EXPECT_NEAR(c.lhs, -std::log(std::cosh(1.0)), 1e-14);
  EXPECT_NEAR(c.rhs, 0.0, 1e-14);
  EXPECT_TRUE(c.holds);
}

TEST(Feynman, HoldsOnRandomFiniteInstances) {
  std::mt19937_64 gen(123);
  std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-5.0, 5.0);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int nw = size(gen), nv = size(gen);
    Vector pw(nw), pv(nv);
    for (int k = 0; k < nw; ++k) pw[k] = unit(gen);
    for (int k = 0; k < nv; ++k) pv[k] = unit(gen);
    pw /= pw.sum();
    pv /= pv.sum();
    Matrix u(nw, nv);
    for (int r = 0; r < nw; ++r)
      for (int c = 0; c < nv; ++c) u(r, c) = wide(gen);
    ASSERT_TRUE(check_feynman_inequality(pw, pv, u).holds) << "trial " << trial;
  }
}

TEST(Domination, KlDominatesHalfHellingerOnRandomPairs) {
  std::mt19937_64 gen(321);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_real_distribution<double> scale(0.05, 5.0);
  std::uniform_int_distribution<int> dim(1, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = dim(gen);
    Vector a(d), b(d);
    for (int k = 0; k < d; ++k) {
      a[k] = normal(gen);
      b[k] = normal(gen);
    }
    const double s = scale(gen);
    ASSERT_GE(kl_gaussian_equal_cov(a, b, s).value, 0.5 * hellinger_sq_gaussian(a, b, s).value) << "trial " << trial;
  }
}

TEST(Domination, CompactGaussianFamilyBound) {
  const double D = 2.0;
  SharedMeanGaussianSpec spec;
  spec.b = 1;
  spec.hyper.kind = HyperPriorKind::uniform_box;
  spec.hyper.lower = v1(0.0);
  spec.hyper.upper = v1(D);
  const HierarchicalModel model = build_instance(spec);
  const auto cert = fit_domination_constant(model, 2000, {5, 0});
  const double bound = (D * D / 2.0) / (2.0 * (1.0 - std::exp(-D * D / 8.0)));
  EXPECT_LE(cert.alpha, bound + 1e-12);
  EXPECT_GE(cert.alpha, 1.0);
  EXPECT_FALSE(cert.unbounded);
  EXPECT_EQ(cert.tested_pairs, 2000u);
}

TEST(Domination, PointMassUsesSinglePair) {
  SharedMeanGaussianSpec spec;
  spec.b = 2;
  spec.hyper.tau = 0.0;
  const auto cert = fit_domination_constant(build_instance(spec), 100, {6, 0});
  EXPECT_EQ(cert.tested_pairs, 1u);
  EXPECT_EQ(cert.alpha, 1.0);
}

TEST(Divergence, RejectsMismatchedInputs) {
  EXPECT_THROW(hellinger_sq_gaussian(Vector::Zero(1), Vector::Zero(2), 1.0), RejectedInput);
  EXPECT_THROW(kl_gaussian_equal_cov(v1(0), v1(0), 0.0), RejectedInput);
  EXPECT_THROW(check_feynman_inequality(Vector::Ones(2), Vector::Ones(2), Matrix::Zero(3, 2)), RejectedInput);
}
