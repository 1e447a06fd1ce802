// hierbayes: experiment runner.
//
//   hierbayes <kl-rate|dimension|risk-curve|bounds|compare> --config FILE [--seed S] [--out DIR] [--threads T]
//   hierbayes recheck --config FILE [--out DIR]     (or --csv FILE --summary FILE)
//
// Exit status: 0 all checks pass, 1 a check failed, 2 configuration error.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hierbayes/experiments.hpp"

namespace {

using namespace hierbayes;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "experiment config (YAML)");
  if (config_required) c->required();
  cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->add_option("--out", f.out, "override the output directory");
  cmd->add_option("--threads", f.threads, "worker threads (default: $HIERBAYES_THREADS, then the config)");
}

ExperimentConfig load_with_overrides(const CommonFlags& f) {
  ExperimentConfig c = load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.output_dir = *f.out;
  if (f.threads) {
    c.threads = *f.threads;
  } else if (const char* env = std::getenv("HIERBAYES_THREADS")) {
    try {
      c.threads = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigError("HIERBAYES_THREADS: expected a positive integer");
    }
  }
  if (c.threads == 0) throw ConfigError("threads must be at least 1");
  return c;
}

void print_summary(const Summary& s) {
  for (const Json& f : s.fits)
    std::cout << "fit " << f["name"].get<std::string>() << ": slope " << f["slope"].get<double>() << " r2 "
              << f["r2"].get<double>() << " (" << f["points_used"].get<std::size_t>() << " points)\n";
  for (const CheckResult& c : s.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.value;
    if (c.target) std::cout << " target " << *c.target;
    if (c.tolerance) std::cout << " +- " << *c.tolerance;
    std::cout << "\n";
  }
  for (const std::string& f : s.flags) std::cout << "flag: " << f << "\n";
}

int run(ExperimentKind kind, const CommonFlags& flags) {
  ExperimentConfig c = load_with_overrides(flags);
  if (c.kind && *c.kind != kind)
    throw ConfigError("'kind' is " + to_string(*c.kind) + " but the subcommand runs " + to_string(kind));
  c.kind = kind;
  RunOutput out;
  try {
    out = run_experiment(c);
  } catch (const RejectedInput& e) {
    throw ConfigError(e.what());
  } catch (const InsufficientResolution& e) {
    std::cerr << "estimator failed: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "estimator failed: " << e.what() << "\n";
    return 1;
  }
  const OutputPaths p = write_outputs(c, out);
  print_summary(out.summary);
  std::cout << "wrote " << p.csv.string() << " and " << p.json.string() << "\n";
  std::cout << (out.summary.pass ? "PASS" : "FAIL") << "\n";
  return out.summary.pass ? 0 : 1;
}

int run_recheck(const CommonFlags& flags, const std::string& csv_path, const std::string& summary_path) {
  std::string csv = csv_path, summary = summary_path;
  if (csv.empty() || summary.empty()) {
    if (flags.config.empty()) throw ConfigError("recheck: give --config, or both --csv and --summary");
    const ExperimentConfig c = load_with_overrides(flags);
    const OutputPaths p = output_paths(c.output_dir, c.experiment_id);
    if (csv.empty()) csv = p.csv.string();
    if (summary.empty()) summary = p.json.string();
  }
  std::ifstream cs(csv, std::ios::binary), js(summary);
  if (!cs) throw ConfigError("recheck: cannot read " + csv);
  if (!js) throw ConfigError("recheck: cannot read " + summary);
  std::vector<CsvRow> rows;
  Json stored;
  try {
    rows = read_csv(cs);
    stored = Json::parse(js);
  } catch (const std::exception& e) {
    std::cerr << "recheck: " << e.what() << "\n";
    return 1;
  }
  const RecheckResult r = recheck(rows, stored);
  print_summary(r.recomputed);
  for (const std::string& m : r.mismatches) std::cout << "mismatch: " << m << "\n";
  std::cout << (r.agree ? "summary reproduced from CSV" : "summary does NOT match CSV") << "\n";
  std::cout << (r.pass ? "PASS" : "FAIL") << "\n";
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical Bayesian bias-learning experiments"};
  app.require_subcommand(1);

  const std::pair<const char*, ExperimentKind> kinds[] = {{"kl-rate", ExperimentKind::kl_rate},
                                                           {"dimension", ExperimentKind::dimension},
                                                           {"risk-curve", ExperimentKind::risk_curve},
                                                           {"bounds", ExperimentKind::bounds},
                                                           {"compare", ExperimentKind::compare}};
  CommonFlags flags;
  std::vector<std::pair<CLI::App*, ExperimentKind>> commands;
  for (const auto& [name, kind] : kinds) {
    CLI::App* cmd = app.add_subcommand(name, "run a " + to_string(kind) + " experiment");
    add_common(cmd, flags, true);
    commands.emplace_back(cmd, kind);
  }
  CLI::App* rc = app.add_subcommand("recheck", "recompute fits and checks from a CSV and compare with its summary");
  add_common(rc, flags, false);
  std::string csv_path, summary_path;
  rc->add_option("--csv", csv_path, "records CSV");
  rc->add_option("--summary", summary_path, "summary JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rc->parsed()) return run_recheck(flags, csv_path, summary_path);
    for (const auto& [cmd, kind] : commands)
      if (cmd->parsed()) return run(kind, flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
