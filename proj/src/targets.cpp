#include "nuzz/targets.hpp"

#include "nuzz/error.hpp"
#include "nuzz/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <variant>

namespace nuzz {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

struct StdNormalParams {};

struct DiagNormalParams {
  VectorXd sigmas;
  double log_norm = 0.0;
};

struct GaussianParams {
  VectorXd mean;
  MatrixXd cov;
  MatrixXd precision;
  double log_norm = 0.0;
  Eigen::LLT<MatrixXd> chol;
};

struct StudentT1Params {
  double log_norm = 0.0;
};

struct RosenbrockParams {
  double a = 2.5;
  double b = 50.0;
  double log_norm = 0.0;
};

struct LogisticParams {
  MatrixXd design;
  VectorXd labels;
  double prior_precision = 0.0;
};

struct CustomParams {
  Target::LogDensityFn log_density;
  Target::GradientFn gradient;
};

using Params = std::variant<StdNormalParams, DiagNormalParams, GaussianParams, StudentT1Params,
                            RosenbrockParams, LogisticParams, CustomParams>;

// log(1 + e^z) without overflow.
double softplus(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

GaussianParams make_gaussian(VectorXd mean, MatrixXd cov) {
  require(cov.rows() == cov.cols() && cov.rows() == mean.size(), ErrorCode::DimensionMismatch,
          "covariance must be d x d with d = len(mean)");
  GaussianParams p;
  p.chol.compute(cov);
  require(p.chol.info() == Eigen::Success, ErrorCode::CholeskyFailure,
          "covariance is not positive definite");
  const MatrixXd L = p.chol.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) log_det += 2.0 * std::log(L(i, i));
  p.precision = p.chol.solve(MatrixXd::Identity(cov.rows(), cov.cols()));
  p.log_norm = -0.5 * (static_cast<double>(mean.size()) * kLogTwoPi + log_det);
  p.mean = std::move(mean);
  p.cov = std::move(cov);
  return p;
}

}  // namespace

struct Target::Impl {
  Family family;
  int dim;
  Params params;
  std::vector<std::shared_ptr<const Ecdf>> ecdfs;
};

std::string_view family_name(Family family) noexcept {
  switch (family) {
    case Family::StdNormal: return "std_normal";
    case Family::DiagNormal: return "diag_normal";
    case Family::CorrNormal: return "corr_normal";
    case Family::StudentT1: return "student_t1";
    case Family::HybridRosenbrock: return "hybrid_rosenbrock";
    case Family::Logistic: return "logistic";
    case Family::GaussLinReg: return "gauss_lin_reg";
    case Family::Custom: return "custom";
  }
  return "unknown";
}

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

// ---------------------------------------------------------------------------
// Ecdf

Ecdf::Ecdf(std::vector<double> values) : sorted_(std::move(values)) {
  require(!sorted_.empty(), ErrorCode::InvalidArgument, "empty ecdf reference");
  for (double v : sorted_)
    require(std::isfinite(v), ErrorCode::NonFiniteInput, "non-finite ecdf reference value");
  std::sort(sorted_.begin(), sorted_.end());
}

double Ecdf::operator()(double q) const noexcept {
  const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), q);
  return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double Ecdf::dkw_floor(double alpha) const noexcept {
  return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(sorted_.size())));
}

std::vector<double> read_ecdf_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::ParseError, "cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    double v = 0.0;
    const char* b = line.data() + first;
    const char* e = line.data() + last + 1;
    auto [ptr, ec] = std::from_chars(b, e, v);
    require(ec == std::errc() && ptr == e, ErrorCode::ParseError,
            path.string() + ":" + std::to_string(lineno) + ": not a number");
    values.push_back(v);
  }
  return values;
}

// ---------------------------------------------------------------------------
// Factories

Target Target::std_normal(int dim) {
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  return Target(std::make_shared<Impl>(Impl{Family::StdNormal, dim, StdNormalParams{}, {}}));
}

Target Target::diag_normal(VectorXd sigmas) {
  require(sigmas.size() > 0, ErrorCode::InvalidArgument, "empty sigma vector");
  double log_norm = -0.5 * static_cast<double>(sigmas.size()) * kLogTwoPi;
  for (double s : sigmas) {
    require(s > 0.0 && std::isfinite(s), ErrorCode::NonPositiveSigma, "sigmas must be positive");
    log_norm -= std::log(s);
  }
  const int d = static_cast<int>(sigmas.size());
  return Target(std::make_shared<Impl>(
      Impl{Family::DiagNormal, d, DiagNormalParams{std::move(sigmas), log_norm}, {}}));
}

Target Target::corr_normal(VectorXd mean, MatrixXd cov) {
  const int d = static_cast<int>(mean.size());
  require(d > 0, ErrorCode::InvalidArgument, "empty mean vector");
  return Target(std::make_shared<Impl>(
      Impl{Family::CorrNormal, d, make_gaussian(std::move(mean), std::move(cov)), {}}));
}

Target Target::linear_correlation_normal(int dim, double alpha) {
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  MatrixXd cov = MatrixXd::Constant(dim, dim, alpha);
  cov.diagonal().setOnes();
  for (int j = 1; j < dim; ++j) {
    cov(0, j) = -alpha;
    cov(j, 0) = -alpha;
  }
  return corr_normal(VectorXd::Zero(dim), std::move(cov));
}

Target Target::student_t1(int dim) {
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  const double d = dim;
  const double log_norm = std::lgamma(0.5 * (d + 1.0)) - std::lgamma(0.5) -
                          0.5 * d * std::log(std::numbers::pi);
  return Target(std::make_shared<Impl>(Impl{Family::StudentT1, dim, StudentT1Params{log_norm}, {}}));
}

Target Target::hybrid_rosenbrock(int dim, double a, double b) {
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  require(a > 0.0 && b > 0.0, ErrorCode::InvalidArgument, "a and b must be positive");
  const double log_norm =
      0.5 * (std::log(a) + (dim - 1) * std::log(b) - dim * std::log(std::numbers::pi));
  return Target(std::make_shared<Impl>(
      Impl{Family::HybridRosenbrock, dim, RosenbrockParams{a, b, log_norm}, {}}));
}

Target Target::logistic(MatrixXd design, VectorXd labels, double prior_precision) {
  require(design.rows() == labels.size(), ErrorCode::DimensionMismatch,
          "design rows must match label count");
  require(design.cols() > 0 && design.rows() > 0, ErrorCode::InvalidArgument, "empty design");
  require(prior_precision >= 0.0, ErrorCode::InvalidArgument, "prior precision must be >= 0");
  const int d = static_cast<int>(design.cols());
  return Target(std::make_shared<Impl>(Impl{
      Family::Logistic, d, LogisticParams{std::move(design), std::move(labels), prior_precision}, {}}));
}

Target Target::gauss_lin_reg(VectorXd beta_hat, MatrixXd cov) {
  const int d = static_cast<int>(beta_hat.size());
  require(d > 0, ErrorCode::InvalidArgument, "empty coefficient vector");
  return Target(std::make_shared<Impl>(
      Impl{Family::GaussLinReg, d, make_gaussian(std::move(beta_hat), std::move(cov)), {}}));
}

Target Target::custom(int dim, LogDensityFn log_density, GradientFn gradient) {
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  require(static_cast<bool>(log_density) && static_cast<bool>(gradient),
          ErrorCode::InvalidArgument, "custom target needs both callbacks");
  return Target(std::make_shared<Impl>(
      Impl{Family::Custom, dim, CustomParams{std::move(log_density), std::move(gradient)}, {}}));
}

// ---------------------------------------------------------------------------
// Evaluation

int Target::dim() const noexcept { return impl_->dim; }
Family Target::family() const noexcept { return impl_->family; }

double Target::log_density(const VectorXd& x) const {
  return std::visit(
      [&x](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, StdNormalParams>) {
          return -0.5 * (static_cast<double>(x.size()) * kLogTwoPi + x.squaredNorm());
        } else if constexpr (std::is_same_v<P, DiagNormalParams>) {
          return p.log_norm - 0.5 * x.cwiseQuotient(p.sigmas).squaredNorm();
        } else if constexpr (std::is_same_v<P, GaussianParams>) {
          const VectorXd r = x - p.mean;
          return p.log_norm - 0.5 * r.dot(p.precision * r);
        } else if constexpr (std::is_same_v<P, StudentT1Params>) {
          const double d = static_cast<double>(x.size());
          return p.log_norm - 0.5 * (d + 1.0) * std::log1p(x.squaredNorm());
        } else if constexpr (std::is_same_v<P, RosenbrockParams>) {
          const double x1 = x[0];
          double s = 0.0;
          for (Eigen::Index i = 1; i < x.size(); ++i) {
            const double r = x[i] - x1 * x1;
            s += r * r;
          }
          return p.log_norm - p.a * x1 * x1 - p.b * s;
        } else if constexpr (std::is_same_v<P, LogisticParams>) {
          const VectorXd eta = p.design * x;
          double u = 0.5 * p.prior_precision * x.squaredNorm();
          for (Eigen::Index j = 0; j < eta.size(); ++j) u += softplus(eta[j]) - p.labels[j] * eta[j];
          return -u;
        } else {
          return p.log_density(x);
        }
      },
      impl_->params);
}

void Target::gradient(const VectorXd& x, VectorXd& out) const {
  std::visit(
      [&x, &out](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, StdNormalParams>) {
          out = -x;
        } else if constexpr (std::is_same_v<P, DiagNormalParams>) {
          out = -x.cwiseQuotient(p.sigmas.cwiseAbs2());
        } else if constexpr (std::is_same_v<P, GaussianParams>) {
          out.noalias() = -(p.precision * (x - p.mean));
        } else if constexpr (std::is_same_v<P, StudentT1Params>) {
          const double d = static_cast<double>(x.size());
          out = (-(d + 1.0) / (1.0 + x.squaredNorm())) * x;
        } else if constexpr (std::is_same_v<P, RosenbrockParams>) {
          const double x1 = x[0];
          double s = 0.0;
          for (Eigen::Index i = 1; i < x.size(); ++i) {
            const double r = x[i] - x1 * x1;
            s += r;
            out[i] = -2.0 * p.b * r;
          }
          out[0] = -2.0 * p.a * x1 + 4.0 * p.b * x1 * s;
        } else if constexpr (std::is_same_v<P, LogisticParams>) {
          VectorXd resid = p.design * x;
          for (Eigen::Index j = 0; j < resid.size(); ++j) resid[j] = sigmoid(resid[j]) - p.labels[j];
          out.noalias() = -(p.design.transpose() * resid);
          out -= p.prior_precision * x;
        } else {
          p.gradient(x, out);
        }
      },
      impl_->params);
}

LogGrad Target::eval_log_grad(const VectorXd& x) const {
  require(x.size() == impl_->dim, ErrorCode::DimensionMismatch,
          "expected " + std::to_string(impl_->dim) + " coordinates, got " + std::to_string(x.size()));
  require(x.allFinite(), ErrorCode::NonFiniteInput, "input contains NaN or Inf");
  LogGrad out{log_density(x), VectorXd(impl_->dim)};
  gradient(x, out.grad);
  require(std::isfinite(out.log_density) && out.grad.allFinite(), ErrorCode::NonFiniteGradient,
          "target returned a non-finite value");
  return out;
}

// ---------------------------------------------------------------------------
// Marginals

bool Target::has_marginal(int i) const noexcept {
  if (i < 0 || i >= impl_->dim) return false;
  if (!impl_->ecdfs.empty() && impl_->ecdfs[static_cast<std::size_t>(i)]) return true;
  switch (impl_->family) {
    case Family::StdNormal:
    case Family::DiagNormal:
    case Family::CorrNormal:
    case Family::GaussLinReg:
    case Family::StudentT1:
      return true;
    default:
      return false;
  }
}

const Ecdf* Target::marginal_ecdf(int i) const noexcept {
  if (i < 0 || i >= impl_->dim || impl_->ecdfs.empty()) return nullptr;
  return impl_->ecdfs[static_cast<std::size_t>(i)].get();
}

double Target::marginal_cdf(int i, double q) const {
  require(i >= 0 && i < impl_->dim, ErrorCode::DimensionMismatch, "coordinate out of range");
  if (const Ecdf* e = marginal_ecdf(i)) return (*e)(q);
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, StdNormalParams>) {
          return normal_cdf(q);
        } else if constexpr (std::is_same_v<P, DiagNormalParams>) {
          return normal_cdf(q / p.sigmas[i]);
        } else if constexpr (std::is_same_v<P, GaussianParams>) {
          return normal_cdf((q - p.mean[i]) / std::sqrt(p.cov(i, i)));
        } else if constexpr (std::is_same_v<P, StudentT1Params>) {
          return 0.5 + std::atan(q) / std::numbers::pi;
        } else {
          throw Error(ErrorCode::NoMarginalAvailable,
                      std::string(family_name(impl_->family)) +
                          " has no analytic marginal; register an ecdf for coordinate " +
                          std::to_string(i));
        }
      },
      impl_->params);
}

Target Target::with_marginal_ecdf(int i, std::shared_ptr<const Ecdf> ecdf) const {
  require(i >= 0 && i < impl_->dim, ErrorCode::DimensionMismatch, "coordinate out of range");
  auto copy = std::make_shared<Impl>(*impl_);
  copy->ecdfs.resize(static_cast<std::size_t>(impl_->dim));
  copy->ecdfs[static_cast<std::size_t>(i)] = std::move(ecdf);
  return Target(std::move(copy));
}

// ---------------------------------------------------------------------------
// Direct sampling and known moments

bool Target::has_direct_sampler() const noexcept {
  switch (impl_->family) {
    case Family::StdNormal:
    case Family::DiagNormal:
    case Family::CorrNormal:
    case Family::StudentT1:
    case Family::HybridRosenbrock:
      return true;
    default:
      return false;
  }
}

MatrixXd Target::direct_sample(std::uint64_t seed, std::size_t n) const {
  if (!has_direct_sampler())
    throw Error(ErrorCode::UnsupportedFamily,
                "no direct sampler for " + std::string(family_name(impl_->family)));
  const int d = impl_->dim;
  MatrixXd out(static_cast<Eigen::Index>(n), d);
  Rng rng(seed);
  VectorXd z(d);
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        for (std::size_t r = 0; r < n; ++r) {
          const auto row = static_cast<Eigen::Index>(r);
          if constexpr (std::is_same_v<P, RosenbrockParams>) {
            const double x1 = rng.normal() / std::sqrt(2.0 * p.a);
            out(row, 0) = x1;
            const double sd = 1.0 / std::sqrt(2.0 * p.b);
            for (int i = 1; i < d; ++i) out(row, i) = x1 * x1 + sd * rng.normal();
          } else {
            for (int i = 0; i < d; ++i) z[i] = rng.normal();
            if constexpr (std::is_same_v<P, DiagNormalParams>) {
              out.row(row) = z.cwiseProduct(p.sigmas).transpose();
            } else if constexpr (std::is_same_v<P, GaussianParams>) {
              out.row(row) = (p.mean + p.chol.matrixL() * z).transpose();
            } else if constexpr (std::is_same_v<P, StudentT1Params>) {
              out.row(row) = (z / std::abs(rng.normal())).transpose();
            } else {
              out.row(row) = z.transpose();
            }
          }
        }
      },
      impl_->params);
  return out;
}

std::optional<MatrixXd> Target::covariance() const {
  switch (impl_->family) {
    case Family::StdNormal:
      return MatrixXd::Identity(impl_->dim, impl_->dim);
    case Family::DiagNormal:
      return MatrixXd(std::get<DiagNormalParams>(impl_->params).sigmas.cwiseAbs2().asDiagonal());
    case Family::CorrNormal:
    case Family::GaussLinReg:
      return std::get<GaussianParams>(impl_->params).cov;
    default:
      return std::nullopt;
  }
}

std::optional<VectorXd> Target::mean() const {
  switch (impl_->family) {
    case Family::StdNormal:
    case Family::DiagNormal:
      return VectorXd::Zero(impl_->dim);
    case Family::CorrNormal:
    case Family::GaussLinReg:
      return std::get<GaussianParams>(impl_->params).mean;
    default:
      return std::nullopt;
  }
}

std::optional<VectorXd> Target::marginal_sds() const {
  auto cov = covariance();
  if (!cov) return std::nullopt;
  return VectorXd(cov->diagonal().cwiseSqrt());
}

std::optional<double> Target::isotropic_scale() const {
  if (impl_->family == Family::StdNormal) return 1.0;
  if (impl_->family == Family::DiagNormal) {
    const auto& s = std::get<DiagNormalParams>(impl_->params).sigmas;
    if ((s.array() == s[0]).all()) return s[0];
  }
  return std::nullopt;
}

std::optional<std::pair<double, double>> Target::rosenbrock_params() const {
  if (const auto* p = std::get_if<RosenbrockParams>(&impl_->params)) return std::pair{p->a, p->b};
  return std::nullopt;
}

const MatrixXd* Target::logistic_design() const noexcept {
  const auto* p = std::get_if<LogisticParams>(&impl_->params);
  return p ? &p->design : nullptr;
}

const VectorXd* Target::logistic_labels() const noexcept {
  const auto* p = std::get_if<LogisticParams>(&impl_->params);
  return p ? &p->labels : nullptr;
}

double Target::logistic_prior_precision() const noexcept {
  const auto* p = std::get_if<LogisticParams>(&impl_->params);
  return p ? p->prior_precision : 0.0;
}

Target with_rosenbrock_reference(const Target& target, std::size_t n, std::uint64_t seed) {
  const auto params = target.rosenbrock_params();
  require(params.has_value(), ErrorCode::UnsupportedFamily, "not a Hybrid Rosenbrock target");
  require(n > 0, ErrorCode::InvalidArgument, "reference size must be positive");
  const auto [a, b] = *params;
  Rng rng(seed);
  std::vector<double> first(n), rest(n);
  const double sd1 = 1.0 / std::sqrt(2.0 * a);
  const double sd2 = 1.0 / std::sqrt(2.0 * b);
  for (std::size_t k = 0; k < n; ++k) {
    const double x1 = sd1 * rng.normal();
    first[k] = x1;
    rest[k] = x1 * x1 + sd2 * rng.normal();
  }
  auto e1 = std::make_shared<const Ecdf>(std::move(first));
  auto e2 = std::make_shared<const Ecdf>(std::move(rest));
  Target out = target.with_marginal_ecdf(0, e1);
  for (int i = 1; i < target.dim(); ++i) out = out.with_marginal_ecdf(i, e2);
  return out;
}

// ---------------------------------------------------------------------------
// Regression CSV

MatrixXd read_numeric_csv(const std::filesystem::path& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::ParseError, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::ParseError,
          path.string() + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // UTF-8 byte order mark
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  const std::size_t cols = names.size();
  require(cols > 0, ErrorCode::ParseError, path.string() + ": empty header");

  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t ncell = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string::npos ? line.size() : comma;
      std::size_t b = start, e = end;
      while (b < e && (line[b] == ' ' || line[b] == '\t')) ++b;
      while (e > b && (line[e - 1] == ' ' || line[e - 1] == '\t')) --e;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, v);
      require(b < e && ec == std::errc() && ptr == line.data() + e, ErrorCode::ParseError,
              path.string() + ":" + std::to_string(lineno) + ": non-numeric cell");
      data.push_back(v);
      ++ncell;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(ncell == cols, ErrorCode::ParseError,
            path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                " cells, got " + std::to_string(ncell));
    ++rows;
  }
  if (header) *header = std::move(names);
  MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data[r * cols + c];
  return out;
}

Target load_regression_target(const std::filesystem::path& csv_path, double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::NonPositiveSigma, "sigma must be positive");
  const MatrixXd data = read_numeric_csv(csv_path);
  require(data.cols() >= 2, ErrorCode::ParseError, "need at least one regressor and a response");
  require(data.rows() >= 1, ErrorCode::ParseError, "no data rows");
  const Eigen::Index d = data.cols() - 1;
  const MatrixXd X = data.leftCols(d);
  const VectorXd y = data.col(d);
  const MatrixXd xtx = X.transpose() * X;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(xtx);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  require(hi > 0.0 && lo > 0.0 && hi / lo <= 1e12, ErrorCode::RankDeficient,
          "X^T X is singular or has condition number above 1e12");
  Eigen::LLT<MatrixXd> llt(xtx);
  require(llt.info() == Eigen::Success, ErrorCode::RankDeficient, "X^T X is not positive definite");
  VectorXd beta = llt.solve(X.transpose() * y);
  MatrixXd cov = sigma * sigma * llt.solve(MatrixXd::Identity(d, d));
  cov = 0.5 * (cov + cov.transpose());
  return Target::gauss_lin_reg(std::move(beta), std::move(cov));
}

// ---------------------------------------------------------------------------
// Logistic auxiliary quantities

namespace {

struct LogisticEval {
  double potential;
  VectorXd grad;
  MatrixXd hess;
};

LogisticEval logistic_eval(const MatrixXd& X, const VectorXd& y, double prec, const VectorXd& x,
                           bool with_hessian) {
  const VectorXd eta = X * x;
  LogisticEval out{0.5 * prec * x.squaredNorm(), VectorXd(prec * x), MatrixXd()};
  VectorXd resid(eta.size()), w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    out.potential += softplus(eta[j]) - y[j] * eta[j];
    const double s = sigmoid(eta[j]);
    resid[j] = s - y[j];
    w[j] = s * (1.0 - s);
  }
  out.grad.noalias() += X.transpose() * resid;
  if (with_hessian) {
    out.hess = X.transpose() * w.asDiagonal() * X;
    out.hess.diagonal().array() += prec;
  }
  return out;
}

VectorXd logistic_lipschitz(const MatrixXd& X, double prec) {
  const double n = static_cast<double>(X.rows());
  const VectorXd row_norms = X.rowwise().norm();
  VectorXd c(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i)
    c[i] = 0.25 * n * (X.col(i).cwiseAbs().cwiseProduct(row_norms)).maxCoeff() + prec;
  return c;
}

// Damped Newton. Throws NonConvergence when fitted probabilities saturate
// without a prior, which happens exactly when the data are (quasi)separable.
VectorXd newton_mle(const MatrixXd& X, const VectorXd& y, double prec, const LogisticFitOptions& opt) {
  const Eigen::Index d = X.cols();
  VectorXd x = VectorXd::Zero(d);
  LogisticEval cur = logistic_eval(X, y, prec, x, true);
  const double gtol = opt.gradient_tolerance;
  int polish = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (!cur.grad.allFinite())
      throw Error(ErrorCode::NonConvergence, "non-finite gradient during Newton iterations");
    // Two extra Newton steps past the stopping rule are essentially free and
    // leave the gradient at round-off level.
    if (cur.grad.norm() <= gtol && ++polish > 2) break;
    Eigen::LDLT<MatrixXd> ldlt(cur.hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff()))
      throw Error(ErrorCode::SingularHessian, "Hessian is singular at Newton iterate");
    const VectorXd step = ldlt.solve(cur.grad);
    double alpha = 1.0;
    LogisticEval next;
    for (int ls = 0;; ++ls) {
      const VectorXd trial = x - alpha * step;
      next = logistic_eval(X, y, prec, trial, true);
      if (next.potential <= cur.potential + 1e-4 * alpha * -cur.grad.dot(step) + 1e-12 * std::abs(cur.potential) ||
          ls >= 50) {
        x = trial;
        break;
      }
      alpha *= 0.5;
    }
    cur = std::move(next);
    if (prec == 0.0 && (X * x).cwiseAbs().maxCoeff() > 35.0)
      throw Error(ErrorCode::NonConvergence,
                  "fitted probabilities saturate: the data are separable and the MLE diverges");
  }
  if (!(cur.grad.norm() <= gtol))
    throw Error(ErrorCode::NonConvergence,
                "Newton did not reach gradient norm " + std::to_string(gtol) + " in " +
                    std::to_string(opt.max_iterations) + " iterations");
  return x;
}

}  // namespace

VectorXd LogisticAux::potential_gradient(const VectorXd& x) const {
  return logistic_eval(design, labels, prior_precision, x, false).grad;
}

Target LogisticAux::target() const { return Target::logistic(design, labels, prior_precision); }

LogisticAux fit_logistic_aux(const MatrixXd& design, const VectorXd& labels,
                             const LogisticFitOptions& options) {
  require(design.rows() == labels.size(), ErrorCode::DimensionMismatch,
          "design rows must match label count");
  require(design.rows() > 0 && design.cols() > 0, ErrorCode::InvalidArgument, "empty design");
  for (double v : labels)
    require(v == 0.0 || v == 1.0, ErrorCode::InvalidArgument, "labels must be 0 or 1");
  require(design.allFinite(), ErrorCode::NonFiniteInput, "design contains NaN or Inf");

  double prec = options.prior_precision;
  if (prec == 0.0) {
    for (Eigen::Index i = 0; i < design.cols(); ++i)
      if (design.col(i).cwiseAbs().maxCoeff() == 0.0)
        throw Error(ErrorCode::DegenerateDesign,
                    "column " + std::to_string(i) + " is identically zero; likelihood is flat");
  }

  VectorXd mle;
  try {
    mle = newton_mle(design, labels, prec, options);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonConvergence || !options.regularize_on_separation || prec > 0.0)
      throw;
    prec = options.fallback_precision;
    mle = newton_mle(design, labels, prec, options);
  }

  LogisticAux aux;
  aux.design = design;
  aux.labels = labels;
  aux.prior_precision = prec;
  aux.mle = std::move(mle);
  aux.lipschitz = logistic_lipschitz(design, prec);
  aux.grad_at_mle = aux.potential_gradient(aux.mle);
  return aux;
}

}  // namespace nuzz
