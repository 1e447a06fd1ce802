#pragma once

// Experiment configuration: a YAML document parsed strictly (unknown keys are
// errors). The schema is documented in docs/config.md.

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimension.hpp"
#include "zoo.hpp"

namespace hierbayes {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { kl_rate, dimension, risk_curve, bounds, compare };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kl_rate: return "kl_rate";
    case ExperimentKind::dimension: return "dimension";
    case ExperimentKind::risk_curve: return "risk_curve";
    case ExperimentKind::bounds: return "bounds";
    case ExperimentKind::compare: return "compare";
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::kl_rate, ExperimentKind::dimension, ExperimentKind::risk_curve,
                           ExperimentKind::bounds, ExperimentKind::compare})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct InstanceConfig {
  std::string type;  // shared_mean_gaussian | ab_linear_gaussian | quantized_ldr | mlp_ldr | discrete
  SharedMeanGaussianSpec shared;
  ABModelSpec ab;
  QuantizedLDRSpec quantized;
  MlpLdrSpec mlp;
  DiscreteSpec discrete;
  std::optional<Vector> pi_star;
};

struct SweepConfig {
  std::vector<std::size_t> n{1};
  std::vector<std::size_t> m{0};
  std::size_t replicates = 1;  // independent pi* draws per n (kl_rate)
};

struct BudgetConfig {
  std::size_t mc_samples = 100000;  // Monte Carlo draws for D_K when no closed form exists
  std::size_t replicates = 10000;   // Monte Carlo replicates for risk estimates; 0 = closed form only
  std::size_t outer = 200;          // pi* draws for bounds
  std::size_t inner = 4000;         // pi draws per pi* for bounds
};

struct DimensionConfig {
  DimensionOptions options;
  std::string measure = "hyper";  // hyper | mixture | fixed_pi
  std::optional<Vector> center;
  std::size_t n = 1;
};

struct CheckConfig {
  std::optional<double> target;
  double tolerance = 0.15;               // relative
  std::optional<double> tolerance_abs;   // absolute; overrides `tolerance` when set
  double slope_tolerance = 0.15;         // cumulative-risk slope (risk_curve)
  bool check_slope = true;
  std::size_t fit_n_min = 0;
};

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::optional<ExperimentKind> kind;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string output_dir = ".";
  InstanceConfig instance;
  SweepConfig sweep;
  BudgetConfig budget;
  DimensionConfig dimension;
  CheckConfig checks;
};

namespace config_detail {

inline std::string where(const YAML::Node& node, const std::string& path) {
  const YAML::Mark mark = node.Mark();
  return mark.line >= 0 ? "line " + std::to_string(mark.line + 1) + ", '" + path + "'" : "'" + path + "'";
}

inline void require_map(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError(where(node, path) + ": expected a table");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where(kv.first, path + "." + key) + ": unknown key");
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where(node, path) + ": invalid value");
  }
}

template <typename T>
void read(const YAML::Node& parent, const std::string& key, const std::string& path, T& out) {
  if (const YAML::Node n = parent[key]) out = scalar<T>(n, path + "." + key);
}

inline Vector vector_value(const YAML::Node& node, const std::string& path) {
  if (node.IsScalar()) return Vector::Constant(1, scalar<double>(node, path));
  if (!node.IsSequence()) throw ConfigError(where(node, path) + ": expected a list of numbers");
  Vector v(static_cast<Eigen::Index>(node.size()));
  for (std::size_t k = 0; k < node.size(); ++k) v[static_cast<Eigen::Index>(k)] = scalar<double>(node[k], path);
  return v;
}

inline Matrix matrix_value(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence() || node.size() == 0) throw ConfigError(where(node, path) + ": expected a list of rows");
  const Vector first = vector_value(node[0], path);
  Matrix out(static_cast<Eigen::Index>(node.size()), first.size());
  for (std::size_t r = 0; r < node.size(); ++r) {
    const Vector row = vector_value(node[r], path);
    if (row.size() != first.size()) throw ConfigError(where(node[r], path) + ": ragged matrix rows");
    out.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return out;
}

inline void read_vector(const YAML::Node& parent, const std::string& key, const std::string& path, Vector& out) {
  if (const YAML::Node n = parent[key]) out = vector_value(n, path + "." + key);
}

inline std::vector<std::size_t> grid_value(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence() || node.size() == 0) throw ConfigError(where(node, path) + ": expected a nonempty list");
  std::vector<std::size_t> out;
  for (const auto& e : node) {
    const long long v = scalar<long long>(e, path);
    if (v < 0) throw ConfigError(where(e, path) + ": grid values must be nonnegative");
    out.push_back(static_cast<std::size_t>(v));
  }
  for (std::size_t k = 1; k < out.size(); ++k)
    if (out[k] <= out[k - 1]) throw ConfigError(where(node, path) + ": grid must be sorted ascending without repeats");
  return out;
}

inline HyperPriorSpec hyper_value(const YAML::Node& node, const std::string& path) {
  require_map(node, path, {"kind", "mean", "tau", "lower", "upper", "points", "weights"});
  HyperPriorSpec h;
  if (const YAML::Node k = node["kind"]) {
    const std::string s = scalar<std::string>(k, path + ".kind");
    if (s == "gaussian") h.kind = HyperPriorKind::gaussian;
    else if (s == "uniform_box") h.kind = HyperPriorKind::uniform_box;
    else if (s == "point_mass") h.kind = HyperPriorKind::point_mass;
    else if (s == "finite") h.kind = HyperPriorKind::finite;
    else throw ConfigError(where(k, path + ".kind") + ": expected gaussian, uniform_box, point_mass or finite");
  }
  read_vector(node, "mean", path, h.mean);
  read(node, "tau", path, h.tau);
  read_vector(node, "lower", path, h.lower);
  read_vector(node, "upper", path, h.upper);
  if (const YAML::Node p = node["points"]) {
    if (!p.IsSequence()) throw ConfigError(where(p, path + ".points") + ": expected a list of points");
    for (const auto& e : p) h.points.push_back(vector_value(e, path + ".points"));
  }
  read_vector(node, "weights", path, h.weights);
  return h;
}

inline InstanceConfig instance_value(const YAML::Node& node, const std::string& path) {
  if (!node.IsMap() || !node["type"]) throw ConfigError(where(node, path) + ": instance needs a 'type'");
  InstanceConfig ic;
  ic.type = scalar<std::string>(node["type"], path + ".type");
  Vector pi_star;
  if (ic.type == "shared_mean_gaussian") {
    require_map(node, path, {"type", "b", "sigma_pi", "noise_std", "hyper", "pi_star"});
    auto& s = ic.shared;
    read(node, "b", path, s.b);
    read(node, "sigma_pi", path, s.sigma_pi);
    read(node, "noise_std", path, s.noise_std);
    if (node["hyper"]) s.hyper = hyper_value(node["hyper"], path + ".hyper");
  } else if (ic.type == "ab_linear_gaussian") {
    require_map(node, path, {"type", "a", "b", "sigma_pi", "sigma_z", "obs_dim", "A", "C", "design_seed", "out_std",
                             "tau", "hyper_mean", "pi_star"});
    auto& s = ic.ab;
    read(node, "a", path, s.a);
    read(node, "b", path, s.b);
    read(node, "sigma_pi", path, s.sigma_pi);
    read(node, "sigma_z", path, s.sigma_z);
    read(node, "obs_dim", path, s.obs_dim);
    if (node["A"]) s.A = matrix_value(node["A"], path + ".A");
    if (node["C"]) s.C = matrix_value(node["C"], path + ".C");
    read(node, "design_seed", path, s.design_seed);
    read(node, "out_std", path, s.out_std);
    read(node, "tau", path, s.tau);
    read_vector(node, "hyper_mean", path, s.hyper_mean);
  } else if (ic.type == "quantized_ldr") {
    require_map(node, path, {"type", "w_ldr", "w_out", "k", "sigma_pi", "noise_std", "hyper", "pi_star"});
    auto& s = ic.quantized;
    read(node, "w_ldr", path, s.w_ldr);
    read(node, "w_out", path, s.w_out);
    read(node, "k", path, s.k);
    read(node, "sigma_pi", path, s.sigma_pi);
    read(node, "noise_std", path, s.noise_std);
    if (node["hyper"]) s.hyper = hyper_value(node["hyper"], path + ".hyper");
  } else if (ic.type == "mlp_ldr") {
    require_map(node, path, {"type", "input_dim", "hidden_dim", "canonicalize", "design_points", "design_seed",
                             "sigma_pi", "out_std", "hyper", "pi_star"});
    auto& s = ic.mlp;
    read(node, "input_dim", path, s.input_dim);
    read(node, "hidden_dim", path, s.hidden_dim);
    read(node, "canonicalize", path, s.canonicalize);
    read(node, "design_points", path, s.design_points);
    read(node, "design_seed", path, s.design_seed);
    read(node, "sigma_pi", path, s.sigma_pi);
    read(node, "out_std", path, s.out_std);
    if (node["hyper"]) s.hyper = hyper_value(node["hyper"], path + ".hyper");
  } else if (ic.type == "discrete") {
    require_map(node, path, {"type", "hyper_probs", "prior_table", "likelihood_table", "pi_star"});
    auto& s = ic.discrete;
    read_vector(node, "hyper_probs", path, s.hyper_probs);
    if (node["prior_table"]) s.prior_table = matrix_value(node["prior_table"], path + ".prior_table");
    if (node["likelihood_table"]) s.likelihood_table = matrix_value(node["likelihood_table"], path + ".likelihood_table");
  } else {
    throw ConfigError(where(node["type"], path + ".type") + ": unknown instance type '" + ic.type + "'");
  }
  if (node["pi_star"]) ic.pi_star = vector_value(node["pi_star"], path + ".pi_star");
  return ic;
}

}  // namespace config_detail

/// Parses a configuration document; throws ConfigError with a line/field diagnostic.
inline ExperimentConfig parse_config(const YAML::Node& root) {
  using namespace config_detail;
  require_map(root, "", {"experiment_id", "kind", "seed", "threads", "output_dir", "instance", "sweep", "budget",
                         "dimension", "checks"});
  ExperimentConfig c;
  read(root, "experiment_id", "", c.experiment_id);
  if (const YAML::Node k = root["kind"]) {
    c.kind = parse_kind(scalar<std::string>(k, "kind"));
    if (!c.kind) throw ConfigError(where(k, "kind") + ": expected kl_rate, dimension, risk_curve, bounds or compare");
  }
  read(root, "seed", "", c.seed);
  read(root, "threads", "", c.threads);
  read(root, "output_dir", "", c.output_dir);
  if (!root["instance"]) throw ConfigError("missing required table 'instance'");
  c.instance = instance_value(root["instance"], "instance");

  if (const YAML::Node s = root["sweep"]) {
    require_map(s, "sweep", {"n", "m", "replicates"});
    if (s["n"]) c.sweep.n = grid_value(s["n"], "sweep.n");
    if (s["m"]) c.sweep.m = grid_value(s["m"], "sweep.m");
    read(s, "replicates", "sweep", c.sweep.replicates);
    if (c.sweep.n.front() == 0) throw ConfigError(where(s["n"], "sweep.n") + ": n must be at least 1");
    if (c.sweep.replicates == 0) throw ConfigError(where(s, "sweep.replicates") + ": must be positive");
  }
  if (const YAML::Node b = root["budget"]) {
    require_map(b, "budget", {"mc_samples", "replicates", "outer", "inner"});
    read(b, "mc_samples", "budget", c.budget.mc_samples);
    read(b, "replicates", "budget", c.budget.replicates);
    read(b, "outer", "budget", c.budget.outer);
    read(b, "inner", "budget", c.budget.inner);
    if (c.budget.mc_samples == 0 || c.budget.outer == 0 || c.budget.inner == 0)
      throw ConfigError(where(b, "budget") + ": budgets must be positive");
  }
  if (const YAML::Node d = root["dimension"]) {
    require_map(d, "dimension", {"eps_max", "ratio", "max_levels", "samples", "min_hits", "r2_threshold", "measure",
                                 "center", "n"});
    auto& o = c.dimension.options;
    read(d, "eps_max", "dimension", o.eps_max);
    read(d, "ratio", "dimension", o.ratio);
    read(d, "max_levels", "dimension", o.max_levels);
    read(d, "samples", "dimension", o.samples);
    read(d, "min_hits", "dimension", o.min_hits);
    read(d, "r2_threshold", "dimension", o.r2_threshold);
    read(d, "measure", "dimension", c.dimension.measure);
    if (d["center"]) c.dimension.center = vector_value(d["center"], "dimension.center");
    read(d, "n", "dimension", c.dimension.n);
    if (c.dimension.measure != "hyper" && c.dimension.measure != "mixture" && c.dimension.measure != "fixed_pi")
      throw ConfigError(where(d["measure"], "dimension.measure") + ": expected hyper, mixture or fixed_pi");
    if (o.min_hits < 30) throw ConfigError(where(d, "dimension.min_hits") + ": must be at least 30");
    if (!(o.ratio > 0.0 && o.ratio < 1.0)) throw ConfigError(where(d, "dimension.ratio") + ": must lie in (0, 1)");
    if (c.dimension.n == 0) throw ConfigError(where(d, "dimension.n") + ": must be at least 1");
  }
  if (const YAML::Node k = root["checks"]) {
    require_map(k, "checks", {"target", "tolerance", "tolerance_abs", "slope_tolerance", "check_slope", "fit_n_min"});
    if (k["target"]) c.checks.target = scalar<double>(k["target"], "checks.target");
    read(k, "tolerance", "checks", c.checks.tolerance);
    if (k["tolerance_abs"]) c.checks.tolerance_abs = scalar<double>(k["tolerance_abs"], "checks.tolerance_abs");
    read(k, "slope_tolerance", "checks", c.checks.slope_tolerance);
    read(k, "check_slope", "checks", c.checks.check_slope);
    read(k, "fit_n_min", "checks", c.checks.fit_n_min);
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  return parse_config(root);
}

}  // namespace hierbayes
