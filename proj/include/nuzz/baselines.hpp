#pragma once

#include "nuzz/targets.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>

namespace nuzz::baselines {

struct MetropolisConfig {
  double step_size = 0.1;
  /// Proposal covariance P (RWM, MALA) or inverse mass matrix (HMC, M = P^-1).
  /// Identity when empty.
  std::optional<MatrixXd> precond;
  int leapfrog_steps = 1;
};

struct ChainResult {
  /// n_iters x d; row k is the state after iteration k + 1.
  MatrixXd samples;
  double accept_rate = 0.0;
  double epochs = 0.0;
  std::size_t divergences = 0;
};

ChainResult rwm_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                    std::size_t n_iters, std::uint64_t seed);

/// x' = x + (h^2/2) P grad + h L xi with P = L L^T, Metropolis-Hastings
/// corrected. The gradient at an accepted proposal is reused.
ChainResult mala_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                     std::size_t n_iters, std::uint64_t seed);

/// Leapfrog HMC with mass matrix P^-1. A proposal with a non-finite
/// Hamiltonian or gradient is rejected and counted as a divergence. With one
/// leapfrog step the proposal and acceptance coincide with mala_run for the
/// same seed.
ChainResult hmc_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                    std::size_t n_iters, std::uint64_t seed);

enum class Algorithm { Rwm, Mala, Hmc };

/// Epochs charged per iteration: 1 for RWM and MALA, L + 1 for HMC.
double epochs_per_iteration(Algorithm algo, const MetropolisConfig& cfg);

/// Largest iteration count whose cost fits within `epoch_budget`.
std::size_t iterations_for_budget(Algorithm algo, const MetropolisConfig& cfg, double epoch_budget);

ChainResult run(Algorithm algo, const Target& target, const MetropolisConfig& cfg,
                const VectorXd& init, std::size_t n_iters, std::uint64_t seed);

/// Header `iter,x_1..x_d`, 17 significant digits.
void write_samples_csv(const MatrixXd& samples, std::ostream& out);

}  // namespace nuzz::baselines
