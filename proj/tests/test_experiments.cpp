#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "hierbayes/experiments.hpp"

using namespace hierbayes;
namespace fs = std::filesystem;

namespace {

ExperimentConfig config_from(const std::string& text) { return parse_config(YAML::Load(text)); }

std::string csv_text(const std::vector<CsvRow>& rows) {
  std::ostringstream os;
  write_csv(os, rows);
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("hierbayes_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HIERBAYES_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallKlRate = R"(
experiment_id: small_kl
kind: kl_rate
seed: 5
instance:
  type: shared_mean_gaussian
  b: 1
sweep:
  n: [64, 256, 1024]
  replicates: 3
)";

const char* kSmallCompareNoShared = R"(
experiment_id: compare_b0
kind: compare
seed: 9
instance:
  type: ab_linear_gaussian
  a: 2
  b: 0
sweep:
  n: [1, 4]
  m: [5, 20]
budget:
  replicates: 500
)";

const char* kSmallRisk = R"(
experiment_id: small_risk
kind: risk_curve
seed: 3
instance:
  type: ab_linear_gaussian
  a: 1
  b: 2
sweep:
  n: [1, 2]
  m: [10, 40, 160]
budget:
  replicates: 400
checks:
  tolerance: 0.5
  check_slope: false
)";

}  // namespace

TEST(Csv, RoundTripPreservesFieldsAndNumbers) {
  std::vector<CsvRow> rows(3);
  rows[0] = {"exp,1", "kl_rate", "inst \"quoted\"", 4, 0, 18446744073709551615ull, 0.1, 1e-300, "closed_form",
             Json{{"note", "line\nbreak"}, {"x", 1.5}}};
  rows[1] = {"exp", "dimension", "i", 1, 7, 2, std::numeric_limits<double>::quiet_NaN(), kInf, "monte_carlo",
             Json::object()};
  rows[2] = {"exp", "bounds", "i", 2, 3, 0, -kInf, 4.9e-324, "", Json{{"list", {1, 2, 3}}}};
  const std::string text = csv_text(rows);
  EXPECT_EQ(text.substr(0, text.find('\r')), "experiment_id,kind,instance,n,m,seed,value,std_error,method,extra");
  std::istringstream is(text);
  const std::vector<CsvRow> back = read_csv(is);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(back[k].experiment_id, rows[k].experiment_id);
    EXPECT_EQ(back[k].instance, rows[k].instance);
    EXPECT_EQ(back[k].n, rows[k].n);
    EXPECT_EQ(back[k].m, rows[k].m);
    EXPECT_EQ(back[k].seed, rows[k].seed);
    EXPECT_EQ(back[k].method, rows[k].method);
    EXPECT_EQ(back[k].extra, rows[k].extra);
    if (std::isnan(rows[k].value))
      EXPECT_TRUE(std::isnan(back[k].value));
    else
      EXPECT_EQ(back[k].value, rows[k].value);
    EXPECT_EQ(back[k].std_error, rows[k].std_error);
  }
  EXPECT_EQ(csv_text(back), text);
}

TEST(Csv, NumbersRoundTripExactly) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int k = 0; k < 10000; ++k) {
    const double v = std::exp(u(gen)) * (k % 2 ? -1.0 : 1.0);
    EXPECT_EQ(parse_number(format_number(v)), v);
  }
}

TEST(Csv, RejectsWrongHeader) {
  std::istringstream is("a,b,c\r\n1,2,3\r\n");
  EXPECT_THROW(read_csv(is), std::exception);
}

TEST(Config, UnknownKeyNamesLineAndPath) {
  try {
    config_from("experiment_id: x\nkind: kl_rate\ninstance:\n  type: shared_mean_gaussian\n  bogus: 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'instance.bogus'"), std::string::npos) << msg;
  }
}

TEST(Config, GridAndRangeValidation) {
  const std::string head = "experiment_id: x\ninstance: {type: shared_mean_gaussian}\n";
  EXPECT_THROW(config_from(head + "sweep: {n: [4, 2]}\n"), ConfigError);
  EXPECT_THROW(config_from(head + "sweep: {n: [2, 2]}\n"), ConfigError);
  EXPECT_THROW(config_from(head + "sweep: {n: [0, 2]}\n"), ConfigError);
  EXPECT_THROW(config_from(head + "dimension: {min_hits: 10}\n"), ConfigError);
  EXPECT_THROW(config_from(head + "dimension: {ratio: 1.5}\n"), ConfigError);
  EXPECT_THROW(config_from(head + "kind: nonsense\n"), ConfigError);
  EXPECT_THROW(config_from("experiment_id: x\ninstance: {type: nope}\n"), ConfigError);
  EXPECT_THROW(config_from("experiment_id: x\n"), ConfigError);
  EXPECT_NO_THROW(config_from(head + "sweep: {n: [1, 2, 8], m: [0, 3]}\n"));
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(HIERBAYES_CONFIG_DIR)) {
    if (entry.path().extension() != ".yaml") continue;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
  }
}

TEST(Summarize, KlRateExactHalfLogSlope) {
  std::vector<CsvRow> rows;
  for (std::size_t n : {8u, 16u, 32u, 64u}) {
    CsvRow r;
    r.kind = "kl_rate";
    r.n = n;
    r.value = 0.5 * std::log(static_cast<double>(n)) + 0.3;
    r.extra = {{"reference_slope", 0.5}};
    rows.push_back(r);
  }
  CheckSpec spec;
  const Summary s = summarize(rows, spec);
  ASSERT_EQ(s.checks.size(), 1u);
  EXPECT_NEAR(s.checks[0].value, 0.5, 1e-12);
  EXPECT_TRUE(s.pass);
  spec.target = 0.7;
  EXPECT_FALSE(summarize(rows, spec).pass);
  spec.target.reset();
  spec.fit_n_min = 32;
  EXPECT_FALSE(summarize(rows, spec).pass);
}

TEST(Summarize, DimensionSlope) {
  std::vector<CsvRow> rows;
  for (double eps = 0.5; eps > 0.01; eps /= 2.0) {
    CsvRow r;
    r.kind = "dimension";
    r.value = 2.0 * std::log(1.0 / eps) + 0.1;
    r.std_error = 0.01;
    r.extra = {{"epsilon", eps}, {"reference_dim", 2.0}};
    rows.push_back(r);
  }
  CheckSpec spec;
  spec.kind = ExperimentKind::dimension;
  const Summary s = summarize(rows, spec);
  EXPECT_NEAR(s.checks.at(0).value, 2.0, 1e-10);
  EXPECT_TRUE(s.pass);
}

TEST(Summarize, SupportViolationFails) {
  std::vector<CsvRow> rows;
  for (std::size_t n : {8u, 16u, 32u}) {
    CsvRow r;
    r.n = n;
    r.value = 0.5 * std::log(static_cast<double>(n));
    r.extra = {{"reference_slope", 0.5}, {"support_violation", n == 16}};
    rows.push_back(r);
  }
  EXPECT_FALSE(summarize(rows, CheckSpec{}).pass);
}

TEST(Summarize, NoChecksIsNotAPass) { EXPECT_FALSE(summarize({}, CheckSpec{}).pass); }

TEST(RunExperiment, CompareWithoutSharedParametersIsExactlyOne) {
  const RunOutput out = run_experiment(config_from(kSmallCompareNoShared));
  ASSERT_EQ(out.rows.size(), 4u);
  for (const CsvRow& r : out.rows) EXPECT_EQ(r.value, 1.0);
  EXPECT_TRUE(out.summary.pass);
}

TEST(RunExperiment, RowCountMatchesSweep) {
  EXPECT_EQ(run_experiment(config_from(kSmallKlRate)).rows.size(), 3u * 3u);
  EXPECT_EQ(run_experiment(config_from(kSmallRisk)).rows.size(), 2u * 3u);
}

TEST(RunExperiment, ByteIdenticalAcrossRunsAndThreads) {
  ExperimentConfig c = config_from(kSmallRisk);
  const std::string once = csv_text(run_experiment(c).rows);
  EXPECT_EQ(csv_text(run_experiment(c).rows), once);
  c.threads = 3;
  EXPECT_EQ(csv_text(run_experiment(c).rows), once);
  c.seed = 4;
  EXPECT_NE(csv_text(run_experiment(c).rows), once);
}

TEST(Recheck, AgreesWithStoredSummaryAndDetectsTampering) {
  ExperimentConfig c = config_from(kSmallKlRate);
  c.output_dir = scratch_dir("recheck").string();
  const RunOutput out = run_experiment(c);
  const OutputPaths p = write_outputs(c, out);
  std::ifstream csv(p.csv, std::ios::binary);
  const std::vector<CsvRow> rows = read_csv(csv);
  const Json stored = Json::parse(read_file(p.json));
  const RecheckResult ok = recheck(rows, stored);
  EXPECT_TRUE(ok.agree);
  EXPECT_EQ(ok.pass, out.summary.pass);

  std::vector<CsvRow> tampered = rows;
  tampered.back().value *= 3.0;
  EXPECT_FALSE(recheck(tampered, stored).agree);
  tampered.pop_back();
  EXPECT_FALSE(recheck(tampered, stored).agree);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  const std::string out = " --out " + dir.string();
  const auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  };
  const std::string good = write("good.yaml", kSmallCompareNoShared);
  EXPECT_EQ(run_cli("compare --config " + good + out), 0);
  EXPECT_TRUE(fs::exists(dir / "compare_b0.csv"));
  EXPECT_EQ(run_cli("recheck --csv " + (dir / "compare_b0.csv").string() + " --summary " +
                    (dir / "compare_b0.json").string()),
            0);
  EXPECT_EQ(run_cli("kl-rate --config " + good + out), 2);  // kind mismatch

  const std::string failing = write("fail.yaml", std::string(kSmallCompareNoShared) + "checks: {target: 5.0}\n");
  EXPECT_EQ(run_cli("compare --config " + failing + out), 1);

  const std::string unknown =
      write("unknown.yaml", "experiment_id: x\nkind: compare\ninstance: {type: ab_linear_gaussian, zz: 1}\n");
  EXPECT_EQ(run_cli("compare --config " + unknown + out), 2);
  EXPECT_EQ(run_cli("compare --config " + (dir / "missing.yaml").string() + out), 2);
  EXPECT_EQ(run_cli("compare --bogus-flag"), 2);
}

TEST(Cli, ThreadsFlagDoesNotChangeOutput) {
  const fs::path a = scratch_dir("threads_a"), b = scratch_dir("threads_b");
  const std::string cfg = (a / "risk.yaml").string();
  std::ofstream(cfg) << kSmallRisk;
  ASSERT_EQ(run_cli("risk-curve --config " + cfg + " --threads 1 --out " + a.string()), 0);
  ASSERT_EQ(run_cli("risk-curve --config " + cfg + " --threads 4 --out " + b.string()), 0);
  EXPECT_EQ(read_file(a / "small_risk.csv"), read_file(b / "small_risk.csv"));
}
