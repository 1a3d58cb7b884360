#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nuzz {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Family {
  StdNormal,
  DiagNormal,
  CorrNormal,
  StudentT1,
  HybridRosenbrock,
  Logistic,
  GaussLinReg,
  Custom,
};

std::string_view family_name(Family family) noexcept;

/// Standard normal cdf through std::erfc (correctly rounded to within a few
/// ulp, so absolute error stays far below 1e-12 everywhere).
double normal_cdf(double z) noexcept;

/// Empirical cdf built from a reference sample.
class Ecdf {
 public:
  explicit Ecdf(std::vector<double> values);

  /// Fraction of reference values <= q.
  double operator()(double q) const noexcept;
  std::size_t size() const noexcept { return sorted_.size(); }
  /// DKW half-width of the reference itself at level `alpha`.
  double dkw_floor(double alpha = 1e-3) const noexcept;

 private:
  std::vector<double> sorted_;
};

/// One float per line, any order. Blank lines are skipped.
std::vector<double> read_ecdf_file(const std::filesystem::path& path);

struct LogGrad {
  double log_density;
  VectorXd grad;
};

/// A target density pi on R^d. Immutable once built; copies share state.
///
/// `gradient` and `log_density` are the unchecked hot paths used by the
/// samplers; `eval_log_grad` validates its input.
class Target {
 public:
  using LogDensityFn = std::function<double(const VectorXd&)>;
  using GradientFn = std::function<void(const VectorXd&, VectorXd&)>;

  static Target std_normal(int dim);
  static Target diag_normal(VectorXd sigmas);
  static Target corr_normal(VectorXd mean, MatrixXd cov);
  /// Unit-variance normal with Sigma_{1j} = -alpha and Sigma_{ij} = alpha for
  /// i, j >= 2, i != j.
  static Target linear_correlation_normal(int dim, double alpha);
  /// Multivariate Student-t with one degree of freedom and identity scale;
  /// every marginal is standard Cauchy.
  static Target student_t1(int dim);
  static Target hybrid_rosenbrock(int dim, double a, double b);
  /// Logistic-regression posterior; the prior is N(0, 1/prior_precision I)
  /// (prior_precision = 0 gives the flat-prior likelihood).
  static Target logistic(MatrixXd design, VectorXd labels, double prior_precision = 0.0);
  /// Gaussian posterior N(beta_hat, cov) of a linear regression.
  static Target gauss_lin_reg(VectorXd beta_hat, MatrixXd cov);
  static Target custom(int dim, LogDensityFn log_density, GradientFn gradient);

  int dim() const noexcept;
  Family family() const noexcept;

  double log_density(const VectorXd& x) const;
  /// out <- grad log pi(x). `out` must already have size dim().
  void gradient(const VectorXd& x, VectorXd& out) const;

  LogGrad eval_log_grad(const VectorXd& x) const;

  bool has_marginal(int i) const noexcept;
  double marginal_cdf(int i, double q) const;
  /// Returns a copy of this target with an empirical reference cdf for
  /// coordinate i. Registered ecdfs take precedence over analytic marginals.
  Target with_marginal_ecdf(int i, std::shared_ptr<const Ecdf> ecdf) const;
  /// Non-null when coordinate i uses a registered ecdf.
  const Ecdf* marginal_ecdf(int i) const noexcept;

  bool has_direct_sampler() const noexcept;
  /// n x d matrix of i.i.d. draws.
  MatrixXd direct_sample(std::uint64_t seed, std::size_t n) const;

  /// Known covariance for Gaussian families, used for preconditioning.
  std::optional<MatrixXd> covariance() const;
  std::optional<VectorXd> mean() const;
  /// Known marginal standard deviations (Gaussian families only).
  std::optional<VectorXd> marginal_sds() const;
  /// Present for isotropic zero-mean Gaussians: the common scale sigma.
  std::optional<double> isotropic_scale() const;

  /// Hybrid Rosenbrock parameters (a, b); empty for other families.
  std::optional<std::pair<double, double>> rosenbrock_params() const;
  const MatrixXd* logistic_design() const noexcept;
  const VectorXd* logistic_labels() const noexcept;
  double logistic_prior_precision() const noexcept;

  struct Impl;

 private:
  explicit Target(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

/// Registers ecdfs for every Hybrid Rosenbrock marginal from `n` direct
/// draws. Coordinates 2..d are exchangeable, so they share one reference
/// built from the second coordinate of each draw.
Target with_rosenbrock_reference(const Target& target, std::size_t n, std::uint64_t seed);

/// Loads a regression CSV (header row; last column is the response) and
/// returns the Gaussian posterior N(beta_hat, sigma^2 (X^T X)^{-1}).
Target load_regression_target(const std::filesystem::path& csv_path, double sigma);

/// Parses a numeric CSV with a header row; returns the data rows.
MatrixXd read_numeric_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

struct LogisticFitOptions {
  /// Gaussian prior precision used from the start (0 = pure likelihood).
  double prior_precision = 0.0;
  /// On separation, refit with `fallback_precision` instead of failing.
  bool regularize_on_separation = false;
  double fallback_precision = 1e-6;
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
};

/// MLE (or MAP) and componentwise Lipschitz constants for the logistic
/// potential U(x) = sum_j [log(1 + e^{X_j x}) - y_j X_j x] + p/2 |x|^2.
///
/// The constants are C_i = (n/4) max_j |X_ji| |X_j|_2 + p. They bound the
/// Lipschitz constant of dU/dx_i and of every single-observation control
/// variate estimator n (dl_j/dx_i(x) - dl_j/dx_i(x*)) + p (x_i - x*_i),
/// since the logistic sigmoid is 1/4-Lipschitz.
struct LogisticAux {
  MatrixXd design;
  VectorXd labels;
  VectorXd mle;
  VectorXd lipschitz;
  double prior_precision = 0.0;
  /// grad U at the mle (zero up to the Newton tolerance).
  VectorXd grad_at_mle;

  int dim() const noexcept { return static_cast<int>(design.cols()); }
  int n_obs() const noexcept { return static_cast<int>(design.rows()); }
  /// Full potential gradient grad U(x) (note: U = -log pi).
  VectorXd potential_gradient(const VectorXd& x) const;
  Target target() const;
};

LogisticAux fit_logistic_aux(const MatrixXd& design, const VectorXd& labels,
                             const LogisticFitOptions& options = {});

}  // namespace nuzz
