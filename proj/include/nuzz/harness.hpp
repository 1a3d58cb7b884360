#pragma once

#include "nuzz/baselines.hpp"
#include "nuzz/diagnostics.hpp"
#include "nuzz/pdmp.hpp"
#include "nuzz/targets.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nuzz::harness {

enum class SamplerKind { Nuzz, Icdf, Zzcv, Rwm, Mala, Hmc, Direct };

std::string_view kind_name(SamplerKind kind) noexcept;

/// How a NuZZ run is charged: one epoch per switch ("root") or one per
/// gradient evaluation at a quadrature node ("epoch").
enum class Accounting { Root, Epoch };

struct TargetSpec {
  std::string family = "std_normal";
  int dim = 10;
  double alpha = 0.9;
  std::vector<double> sigmas;  // diag_normal; default 1..d
  double a = 2.5;
  double b = 50.0;
  std::filesystem::path csv;   // gauss_lin_reg, logistic
  double noise_sigma = 1.0;    // gauss_lin_reg
  double prior_precision = 0.0;
  std::size_t synthetic_obs = 0;  // logistic without csv
  std::size_t reference_samples = 10000000;
  /// Reference draws (one column per coordinate) registered as ecdfs.
  std::filesystem::path reference_csv;
  std::vector<double> init;  // empty: family default
};

struct SamplerSpec {
  std::string name;
  SamplerKind kind = SamplerKind::Nuzz;
  double gamma_total = pdmp::kDefaultGammaTotal;
  double eps_int = pdmp::kDefaultTolerance;
  double eps_bre = pdmp::kDefaultTolerance;
  bool tuned_velocity = true;
  Accounting accounting = Accounting::Root;
  baselines::MetropolisConfig mcmc;
  /// Use the target covariance as proposal covariance / inverse mass.
  bool use_covariance = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TargetSpec target;
  std::vector<SamplerSpec> samplers;
  double epoch_budget = 1e5;
  std::size_t n_repeats = 8;
  std::size_t n_subsamples = 100000;
  std::size_t n_batches = 40;
  std::uint64_t seed = 1;
  std::vector<double> tolerance_sweep;
  /// Sampler used by `sweep`; empty picks the first NuZZ sampler.
  std::string sweep_sampler;
  std::filesystem::path output_dir = "out";
  bool write_traces = false;
};

/// Parses the key = value config. Throws ConfigError naming the field path.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate_config(const ExperimentConfig& cfg);

/// Every key accepted by parse_config, for --help.
std::string config_reference();

/// Default step sizes for the baselines on each family.
baselines::MetropolisConfig default_tuning(const std::string& family, SamplerKind kind, int dim);

struct BuiltTarget {
  Target target;
  VectorXd init;
  std::optional<LogisticAux> aux;
};

BuiltTarget build_target(const TargetSpec& spec, std::uint64_t seed);

/// Synthetic logistic data: intercept column plus standard normal
/// covariates, labels drawn from the model with coefficients (1, -1, 1, ...)/2.
std::pair<MatrixXd, VectorXd> synthetic_logistic(std::size_t n_obs, int dim, std::uint64_t seed);

struct SamplerOutput {
  /// Samples used for the KS protocol (at most n_subsamples rows).
  MatrixXd samples;
  double epochs = 0.0;
  std::optional<double> accept_rate;
  pdmp::Counters counters;
  std::optional<pdmp::Trajectory> trajectory;
  std::optional<MatrixXd> chain;
};

/// Runs one sampler until the next iteration would exceed `epoch_budget`.
SamplerOutput run_sampler(const BuiltTarget& built, const SamplerSpec& spec, double epoch_budget,
                          std::size_t n_subsamples, std::uint64_t seed);

struct CellOutcome {
  std::string algo;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double eps_bre = 0.0;  // sweep cells only
  bool ok = false;
  std::string error;
  diag::KSReport report;
  double epochs = 0.0;
  std::optional<double> accept_rate;
};

struct RunOptions {
  unsigned jobs = 1;
  std::ostream* log = nullptr;
};

struct GridResult {
  std::vector<CellOutcome> cells;
  int exit_code = 0;
};

/// Sampler x repeat grid. Writes <out>/<algo>_r<k>.csv per cell and
/// <out>/summary.json. Exit code 2 if any cell failed.
GridResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// eps_bre x repeat grid for one NuZZ sampler. Writes <out>/sweep.csv and
/// <out>/sweep_summary.json. Repeats reuse their seed across tolerances.
GridResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Supported families with their defaults.
std::string describe_targets();

}  // namespace nuzz::harness
