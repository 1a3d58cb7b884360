#pragma once

#include "nuzz/pdmp.hpp"
#include "nuzz/targets.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace nuzz::diag {

using pdmp::Trajectory;

/// Positions at the half-step grid t_j = T_0 + (j + 1/2) T / n_out on the
/// piecewise-linear path. Returns n_out x d.
MatrixXd subsample_trajectory(const Trajectory& traj, std::size_t n_out);

/// Time average (1/T) int f(x(t)) dt with GK15 on every segment.
double path_integral(const Trajectory& traj, const std::function<double(const VectorXd&)>& f);

struct BatchPoint {
  std::size_t prefix_batches = 0;
  double epochs = 0.0;
  double D = 0.0;
};

struct KSReport {
  VectorXd per_coord;
  double D = 0.0;
  std::size_t n_samples = 0;
  std::vector<BatchPoint> batches;
  /// DKW half-width of the coarsest empirical reference marginal, if any
  /// coordinate is compared against an ecdf.
  std::optional<double> reference_floor;
};

/// sup_x |F_n(x) - F(x)| from values already mapped through F and sorted.
double ks_from_sorted_cdf(const std::vector<double>& sorted_cdf);

/// One-sample KS distance of `values` against `cdf`.
double ks_one_sample(std::vector<double> values, const std::function<double(double)>& cdf);

/// Two-sample KS distance sup_x |F_a(x) - F_b(x)|.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Per-coordinate D_i against the target marginals and D = max_i D_i.
KSReport ks_statistic(const MatrixXd& samples, const Target& target);

/// D on prefixes of 1..n_batches equal batches (the trailing remainder of
/// fewer than n_batches rows is dropped). Prefix k is charged
/// total_epochs * k / n_batches.
KSReport batched_convergence(const MatrixXd& samples, const Target& target,
                             std::size_t n_batches = 40, double total_epochs = -1.0);

/// DKW bound: P(sup |F_n - F| > eps) <= alpha for eps = sqrt(ln(2/alpha) / (2n)).
double dkw_bound(std::size_t n, double alpha = 1e-3);

struct BatchMeans {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and batch-means standard error of a correlated series.
BatchMeans batch_means(const std::vector<double>& series, std::size_t n_batches = 50);

struct RepeatSummary {
  std::vector<double> mean;
  std::vector<double> lower;  // 2.5th percentile
  std::vector<double> upper;  // 97.5th percentile
  std::vector<double> median;
};

/// Column-wise summary of equally long curves, one per repeat.
RepeatSummary aggregate_repeats(const std::vector<std::vector<double>>& curves);

/// Linear-interpolation percentile (q in [0, 1]).
double percentile(std::vector<double> values, double q);

struct EffortLedger {
  std::size_t grad_evals = 0;
  std::size_t density_evals = 0;
  std::size_t switches = 0;
  /// Evaluations making up one pass over the data (1 for analytic targets).
  double evals_per_epoch = 1.0;

  double epochs() const noexcept { return (grad_evals + density_evals) / evals_per_epoch; }
};

}  // namespace nuzz::diag
