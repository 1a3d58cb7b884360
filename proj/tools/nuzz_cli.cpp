#include "nuzz/error.hpp"
#include "nuzz/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <thread>

namespace {

using namespace nuzz;

struct Overrides {
  std::string config;
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

int run_grid(const Overrides& o, bool sweep) {
  harness::ExperimentConfig cfg;
  try {
    cfg = harness::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
  } catch (const Error& e) {
    std::cerr << "nuzz: " << e.what() << "\n";
    return 1;
  }
  harness::RunOptions opts;
  opts.jobs = o.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : o.jobs;
  opts.log = &std::cerr;
  try {
    const harness::GridResult r = sweep ? harness::run_sweep(cfg, opts) : harness::run_experiment(cfg, opts);
    return r.exit_code;
  } catch (const Error& e) {
    std::cerr << "nuzz: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError ? 1 : 2;
  }
}

void add_grid_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("config", o.config, "experiment config file")->required();
  cmd->add_option("--jobs,-j", o.jobs, "concurrent grid cells (0 = all cores)");
  cmd->add_option("--seed", o.seed, "override the base seed");
  cmd->add_option("--out", o.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical Zig-Zag sampler and benchmark harness"};
  app.footer("Exit codes: 0 success, 1 config error, 2 failure in at least one grid cell.\n\nConfig keys:\n" +
             harness::config_reference());
  app.require_subcommand(1);

  Overrides run_opts, sweep_opts;
  CLI::App* run = app.add_subcommand("run", "run every sampler x repeat and write convergence curves");
  add_grid_options(run, run_opts);
  CLI::App* sweep = app.add_subcommand("sweep", "D-statistic against the root-finding tolerance");
  add_grid_options(sweep, sweep_opts);
  app.add_subcommand("targets", "list target families and defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (run->parsed()) return run_grid(run_opts, false);
  if (sweep->parsed()) return run_grid(sweep_opts, true);
  std::cout << harness::describe_targets();
  return 0;
}
