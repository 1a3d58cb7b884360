#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nuzz/error.hpp"
#include "nuzz/harness.hpp"
#include "nuzz/rng.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

using namespace nuzz;
using namespace nuzz::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nuzz_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// Expects a ConfigError whose message names `field`.
void expect_config_error(const std::string& text, const std::string& field) {
  CAPTURE(field);
  try {
    parse(text);
    FAIL("expected ConfigError for " << field);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find(field) != std::string::npos);
  }
}

const char* kSmallRun = R"([experiment]
samplers = nuzz, rwm
epoch_budget = 10000
n_repeats = 2
n_subsamples = 2000
n_batches = 10
seed = 7
[target]
family = std_normal
dim = 10
)";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NUZZ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  expect_config_error("[experiment]\nsamplers =\n", "experiment.samplers");
  expect_config_error("[experiment]\nbogus = 1\n[sampler.nuzz]\n", "experiment.bogus");
  expect_config_error("[experiment]\nepoch_budget = 0.5\n[sampler.nuzz]\n", "experiment.epoch_budget");
  expect_config_error("[experiment]\nn_repeats = 0\n[sampler.nuzz]\n", "experiment.n_repeats");
  expect_config_error("[experiment]\ntolerance_sweep = 1e-3, 0\n[sampler.nuzz]\n", "experiment.tolerance_sweep");
  expect_config_error("[sampler.nuzz]\neps_bre = -1\n", "sampler.nuzz.eps_bre");
  expect_config_error("[sampler.nuzz]\neps_int = 0\n", "sampler.nuzz.eps_int");
  expect_config_error("[sampler.x]\nkind = metropolis\n", "sampler.x.kind");
  expect_config_error("[target]\nfamily = banana\n[sampler.nuzz]\n", "target.family");
  expect_config_error("[target]\ndim = 0\n[sampler.nuzz]\n", "target.dim");
  expect_config_error("[target]\nfamily = corr_normal\nalpha = 1.5\n[sampler.nuzz]\n", "target.alpha");
  expect_config_error("[sampler.zzcv]\n", "sampler.zzcv.kind");
  expect_config_error("[target]\nfamily = student_t1\n[sampler.icdf]\n", "sampler.icdf.kind");
  expect_config_error("[weird]\nx = 1\n[sampler.nuzz]\n", "weird");
}

TEST_CASE("parse_config reads samplers and defaults") {
  const ExperimentConfig cfg = parse(kSmallRun);
  REQUIRE(cfg.samplers.size() == 2);
  CHECK(cfg.samplers[0].kind == SamplerKind::Nuzz);
  CHECK(cfg.samplers[0].gamma_total == 0.001);
  CHECK(cfg.samplers[0].eps_int == 1e-10);
  CHECK(cfg.samplers[0].eps_bre == 1e-10);
  CHECK(cfg.samplers[1].kind == SamplerKind::Rwm);
  CHECK(cfg.epoch_budget == 1e4);
  CHECK(cfg.n_repeats == 2);
  CHECK(cfg.seed == 7);
  CHECK(cfg.target.dim == 10);
  CHECK(parse("[sampler.nuzz]\n").n_repeats == 8);
}

TEST_CASE("describe_targets lists the defaults") {
  const std::string s = describe_targets();
  CHECK(s.find("hybrid_rosenbrock a=2.5 b=50") != std::string::npos);
  CHECK(s.find("gamma_total=0.001") != std::string::npos);
  CHECK(s.find("eps_int=1e-10 eps_bre=1e-10") != std::string::npos);
}

TEST_CASE("run_experiment writes one CSV per cell plus a summary, byte-identically") {
  ExperimentConfig cfg = parse(kSmallRun);
  cfg.output_dir = fresh_dir("grid_a");
  const GridResult a = run_experiment(cfg);
  CHECK(a.exit_code == 0);
  const auto files_a = dir_contents(cfg.output_dir);
  CHECK(files_a.size() == 5);
  for (const char* name : {"nuzz_r0.csv", "nuzz_r1.csv", "rwm_r0.csv", "rwm_r1.csv", "summary.json"})
    CHECK(files_a.count(name) == 1);
  CHECK(files_a.at("nuzz_r0.csv").rfind("algo,seed,prefix_batches,epochs,D\n", 0) == 0);

  cfg.output_dir = fresh_dir("grid_b");
  run_experiment(cfg, RunOptions{2, nullptr});
  const auto files_b = dir_contents(cfg.output_dir);
  CHECK(files_a == files_b);

  // Cells carry the derived seeds, also recorded in the summary.
  const auto summary = nlohmann::json::parse(files_a.at("summary.json"));
  for (const CellOutcome& c : a.cells) {
    CHECK(c.ok);
    CHECK(c.seed == derive_seed(7, c.algo, c.repeat));
    CHECK(summary["samplers"][c.algo]["seeds"][c.repeat].get<std::uint64_t>() == c.seed);
  }
  CHECK(a.cells[0].seed != a.cells[1].seed);
}

TEST_CASE("a different base seed changes the output") {
  ExperimentConfig cfg = parse(kSmallRun);
  cfg.samplers.resize(1);
  cfg.n_repeats = 1;
  cfg.output_dir = fresh_dir("seed_a");
  run_experiment(cfg);
  const std::string a = slurp(cfg.output_dir / "nuzz_r0.csv");
  cfg.seed = 8;
  cfg.output_dir = fresh_dir("seed_b");
  run_experiment(cfg);
  CHECK(a != slurp(cfg.output_dir / "nuzz_r0.csv"));
}

TEST_CASE("reported epochs never exceed the budget and stop within one iteration") {
  ExperimentConfig cfg = parse(R"([sampler.nuzz]
[sampler.nuzz_epoch]
kind = nuzz
accounting = epoch
[sampler.icdf]
[sampler.rwm]
[sampler.mala]
[sampler.hmc]
[sampler.direct]
[target]
dim = 3
)");
  const BuiltTarget built = build_target(cfg.target, 1);
  for (double budget : {1.0, 57.5, 1001.0, 3000.0}) {
    for (const SamplerSpec& spec : cfg.samplers) {
      CAPTURE(spec.name);
      CAPTURE(budget);
      // One NuZZ event costs dozens of node evaluations under epoch accounting.
      if (spec.accounting == Accounting::Epoch && budget < 1000.0) continue;
      const SamplerOutput out = run_sampler(built, spec, budget, 100, 3);
      CHECK(out.epochs <= budget);
      double step_cost = 1.0;
      if (spec.kind == SamplerKind::Hmc) step_cost = spec.mcmc.leapfrog_steps + 1.0;
      if (spec.accounting == Accounting::Epoch) {
        // An event costs its quadrature nodes plus the index draw.
        if (out.trajectory && out.trajectory->counters.switches > 0)
          step_cost = 1.0 + 60.0 * out.epochs / static_cast<double>(out.trajectory->counters.switches);
        else
          step_cost = budget + 1.0;
      }
      CHECK(budget - out.epochs < step_cost);
    }
  }
}

TEST_CASE("zzcv epochs count proposals over n") {
  ExperimentConfig cfg = parse("[target]\nfamily = logistic\ndim = 2\nsynthetic_obs = 100\n[sampler.zzcv]\n");
  const BuiltTarget built = build_target(cfg.target, 5);
  const SamplerOutput out = run_sampler(built, cfg.samplers[0], 20.0, 100, 9);
  CHECK(out.epochs <= 20.0);
  CHECK(20.0 - out.epochs < 0.01 + 1e-9);
  REQUIRE(out.accept_rate);
  CHECK(*out.accept_rate > 0.0);
  CHECK(*out.accept_rate <= 1.0);
}

TEST_CASE("a failing cell is recorded without aborting the grid") {
  const fs::path dir = fresh_dir("fail");
  std::ofstream(dir / "ref.csv") << "a,b\n0.1,0.2\n-0.3,0.4\n0.5,-0.6\n";
  ExperimentConfig cfg = parse("[experiment]\nsamplers = direct, nuzz\nepoch_budget = 200\nn_repeats = 1\n"
                               "n_subsamples = 50\nn_batches = 5\n[target]\nfamily = logistic\ndim = 2\n"
                               "synthetic_obs = 30\nreference_csv = " +
                               (dir / "ref.csv").string() + "\n");
  cfg.output_dir = dir / "out";
  const GridResult r = run_experiment(cfg);
  CHECK(r.exit_code == 2);
  REQUIRE(r.cells.size() == 2);
  CHECK_FALSE(r.cells[0].ok);
  CHECK(r.cells[0].error.find("no direct sampler") != std::string::npos);
  CHECK(r.cells[1].ok);
  CHECK(fs::exists(cfg.output_dir / "nuzz_r0.csv"));
  const auto summary = nlohmann::json::parse(slurp(cfg.output_dir / "summary.json"));
  REQUIRE(summary["failures"].size() == 1);
  CHECK(summary["failures"][0]["algo"] == "direct");
}

TEST_CASE("sweep reuses each repeat's seed across tolerances") {
  ExperimentConfig cfg = parse(R"([experiment]
samplers = nuzz
epoch_budget = 2000
n_repeats = 2
n_subsamples = 500
n_batches = 5
tolerance_sweep = 1e-10, 1e-2
[target]
dim = 2
)");
  cfg.output_dir = fresh_dir("sweep");
  const GridResult r = run_sweep(cfg);
  CHECK(r.exit_code == 0);
  std::ifstream f(cfg.output_dir / "sweep.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "eps_bre,seed,D");
  std::vector<std::string> seeds;
  int rows = 0;
  while (std::getline(f, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string eps, seed, d;
    std::getline(ls, eps, ',');
    std::getline(ls, seed, ',');
    std::getline(ls, d, ',');
    seeds.push_back(seed);
    CHECK(std::stod(d) > 0.0);
    CHECK(std::stod(d) <= 1.0);
  }
  REQUIRE(rows == 4);
  CHECK(seeds[0] == seeds[2]);
  CHECK(seeds[1] == seeds[3]);
  CHECK(seeds[0] != seeds[1]);
  CHECK(seeds[0] == std::to_string(derive_seed(1, "nuzz", 0)));
  CHECK(fs::exists(cfg.output_dir / "sweep_summary.json"));
}

TEST_CASE("sweep needs tolerances and a nuzz sampler") {
  ExperimentConfig cfg = parse("[sampler.nuzz]\n");
  cfg.output_dir = fresh_dir("sweep_bad");
  CHECK_THROWS_AS(run_sweep(cfg), Error);
  cfg = parse("[experiment]\ntolerance_sweep = 1e-3\n[sampler.rwm]\n");
  cfg.output_dir = fresh_dir("sweep_bad");
  CHECK_THROWS_AS(run_sweep(cfg), Error);
}

TEST_CASE("cli exit codes and overrides") {
  const fs::path dir = fresh_dir("cli");
  const fs::path good = write_config(dir, "good.ini",
                                     "[experiment]\nsamplers = rwm\nepoch_budget = 500\nn_repeats = 1\n"
                                     "n_subsamples = 100\nn_batches = 5\noutput_dir = " +
                                         (dir / "default_out").string() + "\n[target]\ndim = 2\n");
  CHECK(run_cli("targets") == 0);
  CHECK(run_cli("run " + good.string()) == 0);
  CHECK(fs::exists(dir / "default_out" / "rwm_r0.csv"));

  CHECK(run_cli("run " + good.string() + " --out " + (dir / "o1").string() + " --seed 3 --jobs 2") == 0);
  const std::string csv = slurp(dir / "o1" / "rwm_r0.csv");
  CHECK(csv.find("," + std::to_string(derive_seed(3, "rwm", 0)) + ",") != std::string::npos);

  const fs::path empty = write_config(dir, "empty.ini", "[experiment]\nsamplers =\n");
  CHECK(run_cli("run " + empty.string()) == 1);
  CHECK(run_cli("run " + (dir / "missing.ini").string()) == 1);
  CHECK(run_cli("run") == 1);
  CHECK(run_cli("frobnicate") == 1);

  std::ofstream(dir / "ref.csv") << "a,b\n0.1,0.2\n-0.3,0.4\n";
  const fs::path failing =
      write_config(dir, "fail.ini",
                   "[experiment]\nsamplers = direct\nepoch_budget = 100\nn_repeats = 1\nn_subsamples = 20\n"
                   "n_batches = 2\noutput_dir = " +
                       (dir / "fail_out").string() +
                       "\n[target]\nfamily = logistic\ndim = 2\nsynthetic_obs = 20\nreference_csv = " +
                       (dir / "ref.csv").string() + "\n");
  CHECK(run_cli("run " + failing.string()) == 2);
  CHECK(fs::exists(dir / "fail_out" / "summary.json"));
}
