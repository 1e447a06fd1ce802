// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failing criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "hierbayes/dimension.hpp"
#include "hierbayes/divergence.hpp"
#include "hierbayes/inference.hpp"
#include "hierbayes/risk.hpp"
#include "hierbayes/zoo.hpp"

using namespace hierbayes;

namespace {

constexpr double kSlopeRelTol = 0.15;
constexpr double kMcSe = 3.0;
constexpr std::size_t kMcSamples = 100000;
constexpr std::size_t kDimSamples = 1000000;
constexpr double kDimRelTol = 0.2;
constexpr double kProductAbsTol = 0.3;
constexpr std::size_t kRiskM = 200;
constexpr std::size_t kRiskReplicates = 10000;
constexpr double kRiskRelTol = 0.10;
constexpr double kRatioRelTol = 0.20;
constexpr double kCumulativeRelTol = 0.15;
constexpr std::size_t kRandomInstances = 1000;
constexpr double kExactTol = 1e-10;
constexpr double kFisherRelTol = 0.02;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

bool within_rel(double value, double target, double tol) { return std::abs(value - target) <= tol * std::abs(target); }

HierarchicalModel shared_mean(int b) {
  SharedMeanGaussianSpec spec;
  spec.b = b;
  spec.sigma_pi = 1.0;
  spec.noise_std = 1.0;
  spec.hyper.tau = 1.0;
  return build_instance(spec);
}

HierarchicalModel ab_instance(int a, int b, double tau) {
  ABModelSpec spec;
  spec.a = a;
  spec.b = b;
  spec.sigma_pi = 1e-3;
  spec.tau = tau;
  return build_instance(spec);
}

// ---------------------------------------------------------------------------

void kl_rate_law(Outcome& o) {
  for (int b : {1, 2}) {
    const HierarchicalModel m = shared_mean(b);
    Rng rng = make_rng({101, static_cast<std::uint64_t>(b)});
    const Vector pi_star = m.hyper_sample(rng);
    std::vector<double> x, y;
    for (std::size_t n = 64; n <= 1024; n *= 2) {
      x.push_back(std::log(static_cast<double>(n)));
      y.push_back(kl_true_vs_mixture(m, pi_star, n, EstimateMethod::closed_form).value);
    }
    const double slope = fit_line(x, y).slope;
    o.detail << " b=" << b << " slope " << fmt(slope) << " (target " << fmt(b / 2.0) << " +-15%)";
    o.require(within_rel(slope, b / 2.0, kSlopeRelTol), "slope b=" + std::to_string(b));
  }
}

void monte_carlo_agreement(Outcome& o) {
  double worst = 0.0;
  for (int b : {1, 2}) {
    const HierarchicalModel m = shared_mean(b);
    Rng rng = make_rng({201, static_cast<std::uint64_t>(b)});
    const Vector pi_star = m.hyper_sample(rng);
    for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
      const RiskRecord mc =
          kl_true_vs_mixture(m, pi_star, n, EstimateMethod::monte_carlo, kMcSamples, {202, n * 10 + b});
      const GaussianParams truth = lg::true_tasks(*m.linear_gaussian, pi_star, n);
      const GaussianParams mix = lg::mixture_tasks(*m.linear_gaussian, n);
      const double oracle = kl_gaussian_general(truth.mean, truth.cov, mix.mean, mix.cov).value;
      const double z = std::abs(mc.value - oracle) / mc.std_error;
      worst = std::max(worst, z);
      o.require(!mc.support_violation && z <= kMcSe, "b=" + std::to_string(b) + " n=" + std::to_string(n));
    }
  }
  o.detail << " 10 cases, worst |MC - exact| = " << fmt(worst) << " SE (limit 3)";
}

void dimension_estimator(Outcome& o) {
  DimensionOptions opts;
  opts.samples = kDimSamples;
  for (int b : {1, 2, 3}) {
    SharedMeanGaussianSpec spec;
    spec.b = b;
    spec.sigma_pi = 0.2;
    spec.hyper.kind = HyperPriorKind::uniform_box;
    spec.hyper.lower = Vector::Zero(b);
    spec.hyper.upper = Vector::Ones(b);
    const DimensionEstimate e =
        estimate_local_dimension(build_instance(spec), Vector::Constant(b, 0.5), opts, {301, static_cast<std::uint64_t>(b)});
    o.detail << " box b=" << b << ": " << fmt(e.dim);
    o.require(within_rel(e.dim, b, kDimRelTol), "box b=" + std::to_string(b));
  }
  struct Case {
    int a, b;
    std::size_t n;
  };
  for (const Case c : {Case{1, 1, 1}, Case{1, 2, 3}}) {
    ABModelSpec spec;
    spec.a = c.a;
    spec.b = c.b;
    spec.sigma_pi = 1e-4;
    spec.sigma_z = 0.1;
    const LinearGaussianStructure s = *build_instance(spec).linear_gaussian;
    const Vector center = Vector::Zero((c.a + c.b) * static_cast<Eigen::Index>(c.n));
    const DimensionEstimate e = dimension_product_law(s, center, c.n, TaskMeasure::mixture, opts, {302, c.n});
    const double target = static_cast<double>(c.n) * c.a + c.b;
    o.detail << " product (" << c.a << "," << c.b << "," << c.n << "): " << fmt(e.dim) << " vs " << fmt(target);
    o.require(std::abs(e.dim - target) <= kProductAbsTol, "product law");
  }
  o.detail << " (tol 0.2b / 0.3)";
}

void risk_rates(Outcome& o) {
  RiskOptions opts;
  opts.replicates = kRiskReplicates;
  const HierarchicalModel hier = ab_instance(1, 4, 1.0);
  const Vector pi_star = Vector::Zero(4);
  o.detail << " m*R:";
  for (std::size_t n : {1u, 2u, 5u, 10u}) {
    opts.seed = {401, n};
    const InstantaneousRisk r = instantaneous_risk(hier, pi_star, n, kRiskM, opts);
    const double target = (1.0 + 4.0 / static_cast<double>(n)) / 2.0;
    const double mc = kRiskM * r.direct.value, cf = kRiskM * r.stuffed.value;
    o.detail << " n=" << n << " " << fmt(mc) << "/" << fmt(cf) << " (" << fmt(target) << ")";
    o.require(within_rel(mc, target, kRiskRelTol) && within_rel(cf, target, kRiskRelTol), "rate n=" + std::to_string(n));
  }
  const HierarchicalModel known = ab_instance(1, 4, 0.0);
  for (std::size_t n : {1u, 10u}) {
    opts.seed = {402, n};
    const InstantaneousRisk r = instantaneous_risk(known, pi_star, n, kRiskM, opts);
    const double mc = kRiskM * r.direct.value;
    o.detail << " known n=" << n << " " << fmt(mc) << " (0.5)";
    o.require(within_rel(mc, 0.5, kRiskRelTol), "known prior n=" + std::to_string(n));
  }
  opts.seed = {403, 0};
  const double ratio = hierarchical_vs_independent(hier, pi_star, 10, kRiskM, opts).ratio;
  const double target = (1.0 + 0.4) / 5.0;
  o.detail << " ratio n=10 " << fmt(ratio) << " (" << fmt(target) << " +-20%)";
  o.require(within_rel(ratio, target, kRatioRelTol), "ratio");
}

void cumulative_slope(Outcome& o) {
  const HierarchicalModel m = ab_instance(1, 1, 1.0);
  std::vector<std::size_t> grid;
  for (std::size_t mm = 16; mm <= 2048; mm *= 2) grid.push_back(mm);
  RiskOptions opts;
  opts.replicates = 2000;
  for (std::size_t n : {1u, 4u}) {
    opts.seed = {501, n};
    const CumulativeRisk c = cumulative_risk(m, Vector::Zero(1), n, grid, opts);
    std::vector<double> x, y;
    bool agree = true;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      x.push_back(std::log(static_cast<double>(grid[k]) + 1.0));
      y.push_back(c.closed_form[k].value);
      agree = agree && std::abs(c.monte_carlo[k].value - c.closed_form[k].value) <= kMcSe * c.monte_carlo[k].std_error;
    }
    const double slope = fit_line(x, y).slope;
    const double target = (1.0 + 1.0 / static_cast<double>(n)) / 2.0;
    o.detail << " n=" << n << " slope " << fmt(slope) << " (" << fmt(target) << " +-15%)";
    o.require(within_rel(slope, target, kCumulativeRelTol), "slope n=" + std::to_string(n));
    o.require(agree, "Monte Carlo cross-check n=" + std::to_string(n));
  }
}

void bound_suite(Outcome& o) {
  std::size_t runs = 0, udk = 0;
  for (int b : {1, 2}) {
    const HierarchicalModel m = shared_mean(b);
    for (std::size_t n = 1; n <= 32; ++n) {
      BoundOptions opts;
      opts.seed = {601, n * 10 + b};
      const BoundTriple t = sandwich_bounds(m, n, opts);
      ++runs;
      udk += t.udk_checked;
      o.require(t.lower_holds && t.upper_holds, "sandwich b=" + std::to_string(b) + " n=" + std::to_string(n));
      o.require(t.udk_violations == 0, "udk b=" + std::to_string(b) + " n=" + std::to_string(n));
    }
  }
  o.detail << " sandwich+udk " << runs << " runs (" << udk << " pointwise checks)";

  std::mt19937_64 gen(602);
  std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-5.0, 5.0);
  std::uniform_int_distribution<int> size(1, 6);
  std::size_t feynman = 0;
  for (std::size_t t = 0; t < kRandomInstances; ++t) {
    const int nw = size(gen), nv = size(gen);
    Vector pw(nw), pv(nv);
    for (int k = 0; k < nw; ++k) pw[k] = unit(gen);
    for (int k = 0; k < nv; ++k) pv[k] = unit(gen);
    pw /= pw.sum();
    pv /= pv.sum();
    Matrix u(nw, nv);
    for (int r = 0; r < nw; ++r)
      for (int c = 0; c < nv; ++c) u(r, c) = wide(gen);
    if (check_feynman_inequality(pw, pv, u).holds) ++feynman;
  }
  o.detail << "; Feynman " << feynman << "/" << kRandomInstances;
  o.require(feynman == kRandomInstances, "Feynman");

  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_real_distribution<double> scale(0.05, 5.0);
  std::uniform_int_distribution<int> dim(1, 5);
  std::size_t dominated = 0;
  for (std::size_t t = 0; t < kRandomInstances; ++t) {
    const int d = dim(gen);
    Vector a(d), c(d);
    for (int k = 0; k < d; ++k) {
      a[k] = normal(gen);
      c[k] = normal(gen);
    }
    const double s = scale(gen);
    if (kl_gaussian_equal_cov(a, c, s).value >= 0.5 * hellinger_sq_gaussian(a, c, s).value) ++dominated;
  }
  o.detail << "; D_K >= D_H/2 " << dominated << "/" << kRandomInstances;
  o.require(dominated == kRandomInstances, "domination");
}

// ---------------------------------------------------------------------------

HierarchicalModel grid_instance() {
  // Priors over 2^2 levels, three candidate priors.
  DiscreteSpec spec;
  spec.hyper_probs = Vector(3);
  spec.hyper_probs << 0.2, 0.5, 0.3;
  spec.prior_table = Matrix(3, 4);
  spec.prior_table << 0.25, 0.25, 0.25, 0.25, 0.5, 0.0, 0.25, 0.25, 0.1, 0.2, 0.3, 0.4;
  spec.likelihood_table = Matrix(4, 2);
  spec.likelihood_table << 0.9, 0.1, 0.6, 0.4, 0.3, 0.7, 0.05, 0.95;
  return build_instance(spec);
}

SampleMatrix index_matrix(const std::vector<std::vector<int>>& rows) {
  SampleMatrix z(rows.size(), rows.front().size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) z(i, j) = Vector::Constant(1, rows[i][j]);
  return z;
}

void identities(Outcome& o) {
  const HierarchicalModel g = grid_instance();
  double rec = 0.0;
  for (int k = 0; k < 3; ++k)
    for (std::size_t n : {1u, 2u, 3u, 4u}) {
      const Vector pi = Vector::Constant(1, k);
      rec = std::max(rec, std::abs(per_task_information_direct(g, pi, n) - per_task_information(g, pi, n).value));
    }
  o.detail << " rec " << fmt(rec);
  o.require(rec <= kExactTol, "rec identity");

  QuantizedLDRSpec q;
  q.k = 8;
  q.w_out = 4;
  q.hyper.tau = 0.0;
  const HierarchicalModel known = build_instance(q);
  double flat = 0.0;
  for (std::size_t n : {1u, 10u, 100u, 1000u})
    flat = std::max(flat, std::abs(per_task_information(known, Vector::Zero(q.w_ldr), n).value - 32.0 * kLn2));
  for (int k = 0; k < 3; ++k)
    for (std::size_t n : {1u, 3u, 5u})
      flat = std::max(flat, std::abs(joint_entropy_bits_per_task(g, Vector::Constant(1, k), n) -
                                     g.prior_entropy_bits(Vector::Constant(1, k))));
  o.detail << "; flatness " << fmt(flat);
  o.require(flat <= kExactTol, "known-prior flatness");

  const SampleMatrix z = index_matrix({{0, 1, 1, 0}, {1, 1, 0, 1}});
  double sum = log_evidence(g, z.leading_columns(1));
  for (std::size_t j = 1; j < z.m(); ++j) sum += predictive_log_density(g, z.leading_columns(j), z.column(j));
  const double tele = std::abs(sum - log_evidence(g, z));
  double total = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      total += std::exp(predictive_log_density(g, z, std::vector<Vector>{Vector::Constant(1, a), Vector::Constant(1, b)}));
  o.detail << "; telescoping " << fmt(tele) << ", Bayes " << fmt(std::abs(total - 1.0));
  o.require(tele <= kExactTol && std::abs(total - 1.0) <= kExactTol, "telescoping / Bayes consistency");

  ABModelSpec ab;
  ab.a = 1;
  ab.b = 2;
  ab.A = Matrix(4, 1);
  ab.A << 1.0, 0.5, 0.0, -0.3;
  ab.C = Matrix(4, 2);
  ab.C << 0.2, 0.0, 1.0, 0.4, -0.5, 1.0, 0.1, 0.3;
  ab.sigma_z = 0.8;
  Vector theta(3);
  theta << 0.3, -1.0, 2.0;
  const Matrix analytic = ab_fisher_analytic(ab);
  const FisherEstimate f = fisher_matrix_numeric(build_instance(ab), theta, 400000, 1e-4, {701, 0});
  const double fisher = (f.matrix - analytic).cwiseAbs().maxCoeff() / analytic.cwiseAbs().maxCoeff();
  o.detail << "; Fisher " << fmt(100.0 * fisher) << "%";
  o.require(fisher <= kFisherRelTol, "Fisher");

  MlpLdrSpec ms;
  const HierarchicalModel mlp = build_instance(ms);
  const MlpLayout net = mlp_layout(ms);
  Rng rng = make_rng({702, 0});
  const Vector w = iso_normal_sample(Vector::Zero(net.size()), 1.0, rng);
  DominationProbeOptions raw;
  raw.symmetry = [net](const Vector& v, Rng& r) { return net.random_symmetry(v, r); };
  DominationProbeOptions canon = raw;
  canon.canonicalize = [net](const Vector& v) { return net.canonicalize(v); };
  const DominationProbe bad = local_domination_probe(mlp, w, raw, {703, 0});
  const DominationProbe good = local_domination_probe(mlp, w, canon, {703, 0});
  const bool witnessed = bad.witness.has_value() &&
                         mlp.likelihood_hellinger_sq(bad.witness->first, bad.witness->second) <= 1e-12 &&
                         (bad.witness->first - bad.witness->second).norm() > 0.0;
  o.detail << "; MLP probe raw " << (bad.pass ? "pass" : "fail") << (witnessed ? " (witness)" : "") << ", canonical "
           << (good.pass ? "pass" : "fail");
  o.require(!bad.pass && witnessed && good.pass, "MLP probe");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
  };
  const Criterion criteria[] = {
      {1, "KL-rate law", kl_rate_law},
      {2, "Monte Carlo vs closed-form KL", monte_carlo_agreement},
      {3, "dimension estimator", dimension_estimator},
      {4, "risk rates", risk_rates},
      {5, "cumulative-loss slope", cumulative_slope},
      {6, "bound suite", bound_suite},
      {7, "identities", identities},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s):%s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(),
                secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("%d of 7 criteria passed\n", 7 - failures);
  return failures;
}
