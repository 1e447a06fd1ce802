#pragma once

// Experiment harness: builds the configured instance, runs a sweep over the
// (n, m, replicate) grid on a worker pool, writes the raw CSV records and a JSON
// summary with fits and checks. Checks are computed from the records alone so
// that `recheck` can reproduce them from the CSV.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "dimension.hpp"
#include "risk.hpp"
#include "stats.hpp"
#include "zoo.hpp"

namespace hierbayes {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct CsvRow {
  std::string experiment_id;
  std::string kind;
  std::string instance;
  std::size_t n = 1;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double value = 0.0;
  double std_error = 0.0;
  std::string method;
  Json extra = Json::object();
};

// ---------------------------------------------------------------------------
// CSV

inline const std::vector<std::string>& csv_header() {
  static const std::vector<std::string> h{"experiment_id", "kind",      "instance", "n",     "m",
                                          "seed",          "value",     "std_error", "method", "extra"};
  return h;
}

/// Shortest text that round-trips the double exactly.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  // strtod rather than stod: stod rejects subnormals with out_of_range.
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_csv(std::ostream& os, const std::vector<CsvRow>& rows) {
  const auto& h = csv_header();
  for (std::size_t k = 0; k < h.size(); ++k) os << (k ? "," : "") << h[k];
  os << "\r\n";
  for (const CsvRow& r : rows) {
    os << csv_field(r.experiment_id) << ',' << csv_field(r.kind) << ',' << csv_field(r.instance) << ',' << r.n << ','
       << r.m << ',' << r.seed << ',' << format_number(r.value) << ',' << format_number(r.std_error) << ','
       << csv_field(r.method) << ',' << csv_field(r.extra.dump()) << "\r\n";
  }
}

namespace detail {

/// Splits RFC 4180 text into records of fields.
inline std::vector<std::vector<std::string>> parse_csv_records(std::istream& is) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, any = false;
  char c;
  auto end_record = [&] {
    fields.push_back(field);
    records.push_back(fields);
    fields.clear();
    field.clear();
    any = false;
  };
  while (is.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (is.peek() == '"') {
          is.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\r') {
      if (is.peek() == '\n') is.get(c);
      end_record();
    } else if (c == '\n') {
      end_record();
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw std::runtime_error("csv: unterminated quoted field");
  if (any || !field.empty() || !fields.empty()) end_record();
  return records;
}

}  // namespace detail

inline std::vector<CsvRow> read_csv(std::istream& is) {
  const auto records = detail::parse_csv_records(is);
  if (records.empty() || records.front() != csv_header()) throw std::runtime_error("csv: missing or unexpected header");
  std::vector<CsvRow> rows;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& f = records[k];
    if (f.size() != csv_header().size())
      throw std::runtime_error("csv: record " + std::to_string(k + 1) + " has " + std::to_string(f.size()) + " fields");
    CsvRow r;
    r.experiment_id = f[0];
    r.kind = f[1];
    r.instance = f[2];
    r.n = std::stoull(f[3]);
    r.m = std::stoull(f[4]);
    r.seed = std::stoull(f[5]);
    r.value = parse_number(f[6]);
    r.std_error = parse_number(f[7]);
    r.method = f[8];
    r.extra = Json::parse(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checks

/// Targets and tolerances the summary is judged against. Serialized into the
/// JSON summary so a rerun from the CSV uses exactly the same criteria.
struct CheckSpec {
  ExperimentKind kind = ExperimentKind::kl_rate;
  std::optional<double> target;  // overrides per-row reference values
  double tolerance = 0.15;
  std::optional<double> tolerance_abs;
  double slope_tolerance = 0.15;
  bool check_slope = true;
  std::size_t fit_n_min = 0;
  double r2_threshold = 0.95;
};

inline Json to_json(const CheckSpec& s) {
  Json j;
  j["kind"] = to_string(s.kind);
  j["target"] = s.target ? Json(*s.target) : Json(nullptr);
  j["tolerance"] = s.tolerance;
  j["tolerance_abs"] = s.tolerance_abs ? Json(*s.tolerance_abs) : Json(nullptr);
  j["slope_tolerance"] = s.slope_tolerance;
  j["check_slope"] = s.check_slope;
  j["fit_n_min"] = s.fit_n_min;
  j["r2_threshold"] = s.r2_threshold;
  return j;
}

inline CheckSpec check_spec_from_json(const Json& j) {
  CheckSpec s;
  const auto kind = parse_kind(j.at("kind").get<std::string>());
  if (!kind) throw std::runtime_error("summary: unknown kind");
  s.kind = *kind;
  if (!j.at("target").is_null()) s.target = j.at("target").get<double>();
  s.tolerance = j.at("tolerance").get<double>();
  if (!j.at("tolerance_abs").is_null()) s.tolerance_abs = j.at("tolerance_abs").get<double>();
  s.slope_tolerance = j.at("slope_tolerance").get<double>();
  s.check_slope = j.at("check_slope").get<bool>();
  s.fit_n_min = j.at("fit_n_min").get<std::size_t>();
  s.r2_threshold = j.at("r2_threshold").get<double>();
  return s;
}

inline CheckSpec check_spec_from_config(const ExperimentConfig& c, ExperimentKind kind) {
  CheckSpec s;
  s.kind = kind;
  s.target = c.checks.target;
  s.tolerance = c.checks.tolerance;
  s.tolerance_abs = c.checks.tolerance_abs;
  s.slope_tolerance = c.checks.slope_tolerance;
  s.check_slope = c.checks.check_slope;
  s.fit_n_min = c.checks.fit_n_min;
  s.r2_threshold = c.dimension.options.r2_threshold;
  return s;
}

struct CheckResult {
  std::string name;
  double value = 0.0;
  std::optional<double> target;
  std::optional<double> tolerance;  // absolute
  bool pass = false;
};

struct Summary {
  Json fits = Json::array();
  std::vector<CheckResult> checks;
  std::vector<std::string> flags;
  bool pass = false;
};

namespace detail {

inline Json fit_json(const std::string& name, const SlopeFit& f) {
  return {{"name", name},        {"x_variable", to_string(f.x_variable)}, {"slope", f.slope},
          {"intercept", f.intercept}, {"r2", f.r2},                          {"points_used", f.points_used}};
}

inline CheckResult within(const std::string& name, double value, double target, const CheckSpec& spec,
                          double rel_tol) {
  const double tol = spec.tolerance_abs ? *spec.tolerance_abs : rel_tol * std::abs(target);
  return {name, value, target, tol, std::isfinite(value) && std::abs(value - target) <= tol};
}

inline double extra_number(const CsvRow& r, const char* key, double fallback = std::nan("")) {
  const auto it = r.extra.find(key);
  return it != r.extra.end() && it->is_number() ? it->get<double>() : fallback;
}

inline std::map<std::size_t, std::vector<const CsvRow*>> group_by_n(const std::vector<CsvRow>& rows) {
  std::map<std::size_t, std::vector<const CsvRow*>> g;
  for (const CsvRow& r : rows) g[r.n].push_back(&r);
  return g;
}

inline std::string n_label(const char* what, std::size_t n) { return std::string(what) + "_n" + std::to_string(n); }

inline void summarize_kl_rate(const std::vector<CsvRow>& rows, const CheckSpec& spec, Summary& s) {
  std::vector<double> x, y, w;
  bool weighted = true;
  double reference = std::nan("");
  for (const auto& [n, group] : group_by_n(rows)) {
    if (n < spec.fit_n_min) continue;
    MeanAccumulator acc;
    double se2 = 0.0;
    for (const CsvRow* r : group) {
      acc.add(r->value);
      se2 += r->std_error * r->std_error;
      reference = extra_number(*r, "reference_slope", reference);
    }
    const double k = static_cast<double>(group.size());
    const double se = group.size() > 1 ? acc.std_error() : std::sqrt(se2) / k;
    if (!(se > 0.0)) weighted = false;
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(acc.mean);
    w.push_back(se > 0.0 ? 1.0 / (se * se) : 0.0);
  }
  const double target = spec.target.value_or(reference);
  if (x.size() < 3) {
    s.flags.push_back("kl_rate: fewer than 3 n values past the cutoff");
    s.checks.push_back({"kl_rate_slope", std::nan(""), target, std::nullopt, false});
    return;
  }
  const SlopeFit fit = fit_line(x, y, weighted ? std::span<const double>(w) : std::span<const double>{});
  s.fits.push_back(fit_json("kl_rate", fit));
  s.checks.push_back(within("kl_rate_slope", fit.slope, target, spec, spec.tolerance));
}

inline void summarize_dimension(const std::vector<CsvRow>& rows, const CheckSpec& spec, Summary& s) {
  std::vector<double> x, y, w;
  double reference = std::nan("");
  for (const CsvRow& r : rows) {
    x.push_back(std::log(1.0 / extra_number(r, "epsilon")));
    y.push_back(r.value);
    w.push_back(1.0 / (r.std_error * r.std_error));
    reference = extra_number(r, "reference_dim", reference);
  }
  const double target = spec.target.value_or(reference);
  if (x.size() < 3) {
    s.flags.push_back("dimension: fewer than 3 resolved eps levels");
    s.checks.push_back({"dimension", std::nan(""), target, std::nullopt, false});
    return;
  }
  const SlopeFit fit = fit_line(x, y, w, SlopeVariable::ln_inv_eps);
  s.fits.push_back(fit_json("dimension", fit));
  if (fit.r2 < spec.r2_threshold) s.flags.push_back("dimension: low_fit (r2 below threshold)");
  s.checks.push_back(within("dimension", std::max(fit.slope, 0.0), target, spec, spec.tolerance));
}

inline void summarize_risk_curve(const std::vector<CsvRow>& rows, const CheckSpec& spec, Summary& s) {
  for (const auto& [n, group] : group_by_n(rows)) {
    const CsvRow* last = group.back();
    for (const CsvRow* r : group)
      if (r->m > last->m) last = r;
    for (const CsvRow* r : group)
      if (r->extra.value("paths_agree", true) == false)
        s.flags.push_back("risk_curve: direct and stuffed paths differ by more than 3 SE at n=" + std::to_string(n) +
                          ", m=" + std::to_string(r->m));
    const double target = spec.target.value_or(extra_number(*last, "target_m_risk"));
    if (last->m == 0) {
      s.flags.push_back("risk_curve: no m > 0 at n=" + std::to_string(n));
    } else {
      s.checks.push_back(within(n_label("m_risk", n), static_cast<double>(last->m) * last->value, target, spec,
                                spec.tolerance));
    }
    if (!spec.check_slope) continue;
    std::vector<double> x, y;
    for (const CsvRow* r : group) {
      if (r->m == 0) continue;
      x.push_back(std::log(static_cast<double>(r->m) + 1.0));
      y.push_back(extra_number(*r, "cumulative"));
    }
    if (x.size() < 3) {
      s.flags.push_back("risk_curve: fewer than 3 m values for the cumulative slope at n=" + std::to_string(n));
      continue;
    }
    const SlopeFit fit = fit_line(x, y, {}, SlopeVariable::ln_m);
    Json j = fit_json(n_label("cumulative", n), fit);
    s.fits.push_back(j);
    CheckSpec rel = spec;
    rel.tolerance_abs.reset();
    s.checks.push_back(within(n_label("cumulative_slope", n), fit.slope, target, rel, spec.slope_tolerance));
  }
}

inline void summarize_compare(const std::vector<CsvRow>& rows, const CheckSpec& spec, Summary& s) {
  for (const auto& [n, group] : group_by_n(rows)) {
    const CsvRow* last = group.back();
    for (const CsvRow* r : group)
      if (r->m > last->m) last = r;
    const double target = spec.target.value_or(extra_number(*last, "target_ratio"));
    s.checks.push_back(within(n_label("ratio", n), last->value, target, spec, spec.tolerance));
  }
}

inline void summarize_bounds(const std::vector<CsvRow>& rows, Summary& s) {
  for (const CsvRow& r : rows) {
    const bool lower = r.extra.value("lower_holds", false);
    const bool upper = r.extra.value("upper_holds", false);
    const auto udk = r.extra.value("udk_violations", std::size_t{0});
    s.checks.push_back({n_label("sandwich", r.n), r.value, std::nullopt, std::nullopt, lower && upper});
    s.checks.push_back({n_label("udk", r.n), static_cast<double>(udk), 0.0, 0.0, udk == 0});
  }
}

}  // namespace detail

/// Fits and checks from raw records. Rows must be in CSV order.
inline Summary summarize(const std::vector<CsvRow>& rows, const CheckSpec& spec) {
  Summary s;
  if (rows.empty()) {
    s.flags.push_back("no records");
    return s;
  }
  switch (spec.kind) {
    case ExperimentKind::kl_rate: detail::summarize_kl_rate(rows, spec, s); break;
    case ExperimentKind::dimension: detail::summarize_dimension(rows, spec, s); break;
    case ExperimentKind::risk_curve: detail::summarize_risk_curve(rows, spec, s); break;
    case ExperimentKind::compare: detail::summarize_compare(rows, spec, s); break;
    case ExperimentKind::bounds: detail::summarize_bounds(rows, s); break;
  }
  std::size_t violations = 0;
  for (const CsvRow& r : rows)
    if (r.extra.value("support_violation", false)) ++violations;
  if (violations > 0) {
    s.flags.push_back("support violation in " + std::to_string(violations) + " record(s)");
    s.checks.push_back({"support", static_cast<double>(violations), 0.0, 0.0, false});
  }
  s.pass = !s.checks.empty() &&
           std::all_of(s.checks.begin(), s.checks.end(), [](const CheckResult& c) { return c.pass; });
  return s;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json number_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json summary_json(const Summary& s) {
  Json checks = Json::array();
  for (const CheckResult& c : s.checks)
    checks.push_back({{"name", c.name},
                      {"value", number_json(c.value)},
                      {"target", optional_json(c.target)},
                      {"tolerance", optional_json(c.tolerance)},
                      {"pass", c.pass}});
  return {{"fits", s.fits}, {"checks", checks}, {"flags", s.flags}, {"pass", s.pass}};
}

// ---------------------------------------------------------------------------
// Instances

struct BuiltInstance {
  HierarchicalModel model;
  Vector pi_star;
  int a = 0;
  int b = 0;
  bool known_prior = false;
};

inline BuiltInstance build_instance(const InstanceConfig& ic) {
  BuiltInstance out;
  auto with_pi = [&](auto spec) {
    if (ic.pi_star) spec.pi_star = *ic.pi_star;
    return spec;
  };
  if (ic.type == "shared_mean_gaussian") {
    out.model = build_instance(with_pi(ic.shared));
    out.b = ic.shared.b;
    out.known_prior = ic.shared.hyper.effective_kind() == HyperPriorKind::point_mass;
  } else if (ic.type == "ab_linear_gaussian") {
    out.model = build_instance(with_pi(ic.ab));
    out.a = ic.ab.a;
    out.b = ic.ab.b;
    out.known_prior = ic.ab.tau == 0.0;
  } else if (ic.type == "quantized_ldr") {
    out.model = build_instance(with_pi(ic.quantized));
    out.b = out.model.dims.pi;
  } else if (ic.type == "mlp_ldr") {
    out.model = build_instance(ic.mlp);
    out.b = out.model.dims.pi;
  } else if (ic.type == "discrete") {
    out.model = build_instance(ic.discrete);
  } else {
    throw ConfigError("unknown instance type '" + ic.type + "'");
  }

  if (ic.pi_star) {
    out.pi_star = *ic.pi_star;
  } else if (out.model.hyper_point_mass) {
    out.pi_star = *out.model.hyper_point_mass;
  } else if (out.model.linear_gaussian) {
    out.pi_star = out.model.linear_gaussian->hyper_mean;
  } else if (out.model.hyper_box) {
    out.pi_star = (out.model.hyper_box->lower + out.model.hyper_box->upper) / 2.0;
  } else if (out.model.discrete) {
    out.pi_star = Vector::Zero(1);
  } else if (ic.type == "shared_mean_gaussian" || ic.type == "quantized_ldr" || ic.type == "mlp_ldr") {
    const HyperPriorSpec& h = ic.type == "shared_mean_gaussian" ? ic.shared.hyper
                              : ic.type == "quantized_ldr"      ? ic.quantized.hyper
                                                                : ic.mlp.hyper;
    out.pi_star = h.kind == HyperPriorKind::finite && !h.points.empty() ? h.points.front()
                                                                        : detail::or_zero(h.mean, out.model.dims.pi);
  }
  if (out.pi_star.size() != out.model.dims.pi) throw ConfigError("instance.pi_star: wrong dimension");
  if (!out.model.in_hyper_support(out.pi_star)) throw ConfigError("instance.pi_star: outside the hyper-prior support");
  return out;
}

/// Leading coefficient of D_K / ln n: half the local dimension of the hyper-prior.
inline double hyper_dimension(const BuiltInstance& inst) {
  if (inst.model.hyper_point_mass || detail::hyper_is_finite(inst.model)) return 0.0;
  return static_cast<double>(inst.model.dims.pi);
}

// ---------------------------------------------------------------------------
// Sweep execution

/// Runs `work(i)` for i in [0, count) on `threads` workers and concatenates the
/// per-point outputs in index order.
template <typename Work>
std::vector<CsvRow> run_points(std::size_t count, unsigned threads, Work&& work) {
  std::vector<std::vector<CsvRow>> slots(count);
  std::exception_ptr error;
  std::mutex error_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next >= count) return;
        i = next++;
      }
      try {
        slots[i] = work(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  std::vector<CsvRow> rows;
  for (auto& s : slots)
    for (auto& r : s) rows.push_back(std::move(r));
  return rows;
}

struct RunOutput {
  std::vector<CsvRow> rows;
  CheckSpec spec;
  Summary summary;
  std::string instance;
};

namespace detail {

inline Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline CsvRow base_row(const ExperimentConfig& c, ExperimentKind kind, const BuiltInstance& inst, std::size_t n,
                       std::size_t m) {
  CsvRow r;
  r.experiment_id = c.experiment_id;
  r.kind = to_string(kind);
  r.instance = inst.model.name;
  r.n = n;
  r.m = m;
  r.seed = c.seed;
  return r;
}

inline std::vector<CsvRow> run_kl_rate(const ExperimentConfig& c, const BuiltInstance& inst) {
  const auto& ns = c.sweep.n;
  const std::size_t reps = c.sweep.replicates;
  std::vector<Vector> pis;
  if (reps == 1 && c.instance.pi_star) {
    pis.push_back(inst.pi_star);
  } else {
    const SeedSpec pi_seed{c.seed, 1};
    for (std::size_t r = 0; r < reps; ++r) {
      Rng rng = make_rng(pi_seed.child(r));
      pis.push_back(inst.model.hyper_sample(rng));
    }
  }
  const EstimateMethod method =
      inst.model.kl_true_vs_mixture ? EstimateMethod::closed_form : EstimateMethod::monte_carlo;
  const std::size_t count = ns.size() * reps;
  const unsigned inner = count > 1 ? 1u : c.threads;
  const double dim = hyper_dimension(inst);
  return run_points(count, c.threads, [&](std::size_t i) {
    const std::size_t r = i % reps, n = ns[i / reps];
    const RiskRecord rec =
        kl_true_vs_mixture(inst.model, pis[r], n, method, c.budget.mc_samples, SeedSpec{c.seed, 2}.child(i), inner);
    CsvRow row = base_row(c, ExperimentKind::kl_rate, inst, n, 0);
    row.value = rec.value;
    row.std_error = rec.std_error;
    row.method = to_string(rec.method);
    row.extra = {{"replicate", r},
                 {"pi_star", vector_json(pis[r])},
                 {"dim", dim},
                 {"reference_slope", dim / 2.0},
                 {"support_violation", rec.support_violation}};
    return std::vector<CsvRow>{row};
  });
}

inline std::vector<CsvRow> run_dimension(const ExperimentConfig& c, const BuiltInstance& inst) {
  DimensionOptions opts = c.dimension.options;
  opts.threads = c.threads;
  const SeedSpec seed{c.seed, 3};
  DimensionEstimate est;
  double reference = 0.0;
  std::size_t n = 1;
  const std::string& measure = c.dimension.measure;
  if (measure == "hyper") {
    const Vector center = c.dimension.center.value_or(inst.pi_star);
    if (center.size() != inst.model.dims.pi) throw ConfigError("dimension.center: wrong dimension");
    est = estimate_local_dimension(inst.model, center, opts, seed);
    reference = hyper_dimension(inst);
  } else {
    if (!inst.model.linear_gaussian) throw ConfigError("dimension.measure: '" + measure + "' needs a linear-Gaussian instance");
    const LinearGaussianStructure& s = *inst.model.linear_gaussian;
    n = c.dimension.n;
    const Vector center = c.dimension.center.value_or(Vector::Zero(s.task_dim() * static_cast<Eigen::Index>(n)));
    if (center.size() != s.task_dim() * static_cast<Eigen::Index>(n))
      throw ConfigError("dimension.center: must stack n task vectors");
    const TaskMeasure tm = measure == "mixture" ? TaskMeasure::mixture : TaskMeasure::fixed_pi;
    est = dimension_product_law(s, center, n, tm, opts, seed);
    const double na = static_cast<double>(n) * s.a;
    reference = tm == TaskMeasure::mixture && s.tau > 0.0 ? na + s.b : na;
  }
  std::vector<CsvRow> rows;
  for (std::size_t k = 0; k < est.epsilons.size(); ++k) {
    CsvRow row = base_row(c, ExperimentKind::dimension, inst, n, 0);
    row.value = est.log_ball_measures[k];
    row.std_error = est.std_errors[k];
    row.method = to_string(EstimateMethod::monte_carlo);
    row.extra = {{"epsilon", est.epsilons[k]},     {"probability", est.ball_measures[k]},
                 {"hits", est.hits_per_epsilon[k]}, {"measure", measure},
                 {"reference_dim", reference},      {"samples", opts.samples}};
    rows.push_back(std::move(row));
  }
  return rows;
}

inline const LinearGaussianStructure& require_linear_config(const BuiltInstance& inst, const char* kind) {
  if (!inst.model.linear_gaussian)
    throw ConfigError(std::string(kind) + ": needs a linear-Gaussian instance (shared_mean_gaussian with a Gaussian "
                                          "hyper-prior, or ab_linear_gaussian)");
  return *inst.model.linear_gaussian;
}

inline std::vector<CsvRow> run_risk_curve(const ExperimentConfig& c, const BuiltInstance& inst) {
  require_linear_config(inst, "risk_curve");
  const auto &ns = c.sweep.n, &ms = c.sweep.m;
  const std::size_t count = ns.size() * ms.size();
  const unsigned inner = count > 1 ? 1u : c.threads;
  return run_points(count, c.threads, [&](std::size_t i) {
    const std::size_t n = ns[i / ms.size()], m = ms[i % ms.size()];
    const LinearRiskEngine engine = make_risk_engine(inst.model, inst.pi_star, n, LearnerKind::hierarchical);
    const double stuffed = engine.instantaneous_closed_form(m);
    const double cumulative = engine.expected_log_ratio(static_cast<double>(m) + 1.0) / static_cast<double>(n);
    CsvRow row = base_row(c, ExperimentKind::risk_curve, inst, n, m);
    bool agree = true;
    if (c.budget.replicates > 0) {
      RiskOptions o;
      o.replicates = c.budget.replicates;
      o.seed = SeedSpec{c.seed, 4}.child(i);
      o.threads = inner;
      const RiskRecord direct = engine.instantaneous_monte_carlo(m, o);
      row.value = direct.value;
      row.std_error = direct.std_error;
      row.method = to_string(EstimateMethod::monte_carlo);
      agree = std::abs(direct.value - stuffed) <= 3.0 * direct.std_error + 1e-12;
    } else {
      row.value = stuffed;
      row.method = to_string(EstimateMethod::closed_form);
    }
    const double nd = static_cast<double>(n);
    row.extra = {{"stuffed", stuffed},
                 {"cumulative", cumulative},
                 {"paths_agree", agree},
                 {"a", inst.a},
                 {"b", inst.b},
                 {"known_prior", inst.known_prior},
                 {"target_m_risk", (inst.a + (inst.known_prior ? 0.0 : inst.b / nd)) / 2.0}};
    return std::vector<CsvRow>{row};
  });
}

inline std::vector<CsvRow> run_compare(const ExperimentConfig& c, const BuiltInstance& inst) {
  require_linear_config(inst, "compare");
  const auto &ns = c.sweep.n, &ms = c.sweep.m;
  const std::size_t count = ns.size() * ms.size();
  const unsigned inner = count > 1 ? 1u : c.threads;
  return run_points(count, c.threads, [&](std::size_t i) {
    const std::size_t n = ns[i / ms.size()], m = ms[i % ms.size()];
    RiskOptions o;
    o.replicates = c.budget.replicates;
    o.seed = SeedSpec{c.seed, 5}.child(i);
    o.threads = inner;
    const RiskComparison cmp = hierarchical_vs_independent(inst.model, inst.pi_star, n, m, o);
    CsvRow row = base_row(c, ExperimentKind::compare, inst, n, m);
    row.value = cmp.ratio;
    const double h = cmp.hierarchical.value, d = cmp.independent.value;
    row.std_error = (h != 0.0 && d != 0.0 && cmp.ratio != 1.0)
                        ? std::abs(cmp.ratio) * std::hypot(cmp.hierarchical.std_error / h, cmp.independent.std_error / d)
                        : 0.0;
    row.method = to_string(o.replicates > 0 ? EstimateMethod::monte_carlo : EstimateMethod::closed_form);
    const double ab = static_cast<double>(inst.a + inst.b);
    const double target = ab == 0.0 ? 1.0
                          : inst.known_prior ? inst.a / ab
                                             : (inst.a + inst.b / static_cast<double>(n)) / ab;
    row.extra = {{"hierarchical", h},
                 {"hierarchical_se", cmp.hierarchical.std_error},
                 {"independent", d},
                 {"independent_se", cmp.independent.std_error},
                 {"a", inst.a},
                 {"b", inst.b},
                 {"known_prior", inst.known_prior},
                 {"target_ratio", target}};
    return std::vector<CsvRow>{row};
  });
}

inline std::vector<CsvRow> run_bounds(const ExperimentConfig& c, const BuiltInstance& inst) {
  const auto& ns = c.sweep.n;
  const EstimateMethod middle =
      inst.model.kl_true_vs_mixture ? EstimateMethod::closed_form : EstimateMethod::monte_carlo;
  return run_points(ns.size(), c.threads, [&](std::size_t i) {
    BoundOptions o;
    o.outer = c.budget.outer;
    o.inner = c.budget.inner;
    o.seed = SeedSpec{c.seed, 6}.child(i);
    const BoundTriple t = sandwich_bounds(inst.model, ns[i], o, middle, c.budget.mc_samples);
    CsvRow row = base_row(c, ExperimentKind::bounds, inst, ns[i], 0);
    row.value = t.middle;
    row.std_error = t.middle_se;
    row.method = to_string(middle);
    row.extra = {{"lower", t.lower},
                 {"lower_se", t.lower_se},
                 {"upper", t.upper},
                 {"upper_se", t.upper_se},
                 {"gap_lower_se", t.gap_lower_se},
                 {"gap_upper_se", t.gap_upper_se},
                 {"lower_holds", t.lower_holds},
                 {"upper_holds", t.upper_holds},
                 {"udk_checked", t.udk_checked},
                 {"udk_violations", t.udk_violations},
                 {"support_violation", t.support_violation}};
    return std::vector<CsvRow>{row};
  });
}

}  // namespace detail

/// Runs the configured sweep. Throws ConfigError for inconsistent configs.
inline RunOutput run_experiment(const ExperimentConfig& c) {
  if (!c.kind) throw ConfigError("'kind' is not set");
  const BuiltInstance inst = build_instance(c.instance);
  RunOutput out;
  out.instance = inst.model.name;
  out.spec = check_spec_from_config(c, *c.kind);
  switch (*c.kind) {
    case ExperimentKind::kl_rate: out.rows = detail::run_kl_rate(c, inst); break;
    case ExperimentKind::dimension: out.rows = detail::run_dimension(c, inst); break;
    case ExperimentKind::risk_curve: out.rows = detail::run_risk_curve(c, inst); break;
    case ExperimentKind::compare: out.rows = detail::run_compare(c, inst); break;
    case ExperimentKind::bounds: out.rows = detail::run_bounds(c, inst); break;
  }
  out.summary = summarize(out.rows, out.spec);
  return out;
}

inline Json summary_document(const ExperimentConfig& c, const RunOutput& out) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment_id"] = c.experiment_id;
  j["kind"] = to_string(out.spec.kind);
  j["instance"] = out.instance;
  j["seed"] = c.seed;
  j["csv"] = c.experiment_id + ".csv";
  j["rows"] = out.rows.size();
  j["check_spec"] = to_json(out.spec);
  j.update(summary_json(out.summary));
  return j;
}

struct OutputPaths {
  std::filesystem::path csv;
  std::filesystem::path json;
};

inline OutputPaths output_paths(const std::string& dir, const std::string& id) {
  const std::filesystem::path d(dir);
  return {d / (id + ".csv"), d / (id + ".json")};
}

inline OutputPaths write_outputs(const ExperimentConfig& c, const RunOutput& out) {
  std::error_code ec;
  std::filesystem::create_directories(c.output_dir, ec);
  const OutputPaths p = output_paths(c.output_dir, c.experiment_id);
  std::ofstream csv(p.csv, std::ios::binary);
  if (!csv) throw ConfigError("output_dir '" + c.output_dir + "' is not writable");
  write_csv(csv, out.rows);
  std::ofstream js(p.json, std::ios::binary);
  if (!js) throw ConfigError("output_dir '" + c.output_dir + "' is not writable");
  js << summary_document(c, out).dump(2) << "\n";
  return p;
}

// ---------------------------------------------------------------------------
// Re-checking

struct RecheckResult {
  bool agree = true;
  bool pass = false;
  std::vector<std::string> mismatches;
  Summary recomputed;
};

namespace detail {

inline bool same_number(const Json& stored, double v) {
  if (stored.is_null()) return !std::isfinite(v);
  const double s = stored.get<double>();
  return s == v || std::abs(s - v) <= 1e-12 * std::max(1.0, std::abs(v));
}

}  // namespace detail

/// Recomputes the summary from CSV records and compares it with the stored one.
inline RecheckResult recheck(const std::vector<CsvRow>& rows, const Json& stored) {
  RecheckResult r;
  if (stored.value("schema_version", -1) != kSchemaVersion) {
    r.agree = false;
    r.mismatches.push_back("schema_version differs");
    return r;
  }
  if (stored.at("rows").get<std::size_t>() != rows.size()) {
    r.agree = false;
    r.mismatches.push_back("row count differs from the CSV");
  }
  r.recomputed = summarize(rows, check_spec_from_json(stored.at("check_spec")));
  const Json& checks = stored.at("checks");
  if (checks.size() != r.recomputed.checks.size()) {
    r.agree = false;
    r.mismatches.push_back("number of checks differs");
  } else {
    for (std::size_t k = 0; k < checks.size(); ++k) {
      const CheckResult& c = r.recomputed.checks[k];
      if (checks[k].at("name") != c.name || checks[k].at("pass").get<bool>() != c.pass ||
          !detail::same_number(checks[k].at("value"), c.value)) {
        r.agree = false;
        r.mismatches.push_back("check '" + c.name + "' differs");
      }
    }
  }
  const Json& fits = stored.at("fits");
  if (fits.size() != r.recomputed.fits.size()) {
    r.agree = false;
    r.mismatches.push_back("number of fits differs");
  } else {
    for (std::size_t k = 0; k < fits.size(); ++k)
      if (!detail::same_number(fits[k].at("slope"), r.recomputed.fits[k].at("slope").get<double>())) {
        r.agree = false;
        r.mismatches.push_back("fit '" + fits[k].at("name").get<std::string>() + "' differs");
      }
  }
  if (stored.at("pass").get<bool>() != r.recomputed.pass) {
    r.agree = false;
    r.mismatches.push_back("overall pass differs");
  }
  r.pass = r.agree && r.recomputed.pass;
  return r;
}

}  // namespace hierbayes
