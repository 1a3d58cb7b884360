#include "nuzz/baselines.hpp"

#include "nuzz/error.hpp"
#include "nuzz/rng.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <string>

namespace nuzz::baselines {

namespace {

// Proposal geometry P = L L^T. Identity is kept implicit.
class Geometry {
 public:
  Geometry(const std::optional<MatrixXd>& precond, int dim) : dim_(dim) {
    if (!precond) return;
    if (precond->rows() != dim || precond->cols() != dim)
      throw Error(ErrorCode::DimensionMismatch, "preconditioner must be d x d");
    if (!precond->allFinite() || !precond->isApprox(precond->transpose(), 1e-12))
      throw Error(ErrorCode::CholeskyFailure, "preconditioner is not symmetric");
    Eigen::LLT<MatrixXd> llt(*precond);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::CholeskyFailure, "preconditioner is not positive definite");
    chol_ = llt.matrixL();
    full_ = *precond;
  }

  VectorXd mul_l(const VectorXd& z) const { return chol_ ? VectorXd(*chol_ * z) : z; }
  VectorXd mul_lt(const VectorXd& z) const {
    return chol_ ? VectorXd(chol_->transpose() * z) : z;
  }
  VectorXd mul_p(const VectorXd& z) const { return full_ ? VectorXd(*full_ * z) : z; }
  VectorXd solve_l(const VectorXd& z) const {
    return chol_ ? VectorXd(chol_->triangularView<Eigen::Lower>().solve(z)) : z;
  }
  int dim() const noexcept { return dim_; }

 private:
  int dim_;
  std::optional<MatrixXd> chol_;
  std::optional<MatrixXd> full_;
};

void check_inputs(const Target& target, const MetropolisConfig& cfg, const VectorXd& init) {
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size))
    throw Error(ErrorCode::InvalidArgument, "step_size must be positive");
  if (init.size() != target.dim())
    throw Error(ErrorCode::DimensionMismatch, "initial point does not match target dimension");
  if (!init.allFinite()) throw Error(ErrorCode::NonFiniteInput, "initial point is not finite");
}

VectorXd normals(Rng& rng, int d) {
  VectorXd xi(d);
  for (int i = 0; i < d; ++i) xi[i] = rng.normal();
  return xi;
}

VectorXd gradient_at(const Target& target, const VectorXd& x) {
  VectorXd g(target.dim());
  target.gradient(x, g);
  return g;
}

}  // namespace

ChainResult rwm_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                    std::size_t n_iters, std::uint64_t seed) {
  check_inputs(target, cfg, init);
  const int d = target.dim();
  const Geometry geo(cfg.precond, d);
  Rng rng(seed);
  const double h = cfg.step_size;

  ChainResult out;
  out.samples.resize(static_cast<Eigen::Index>(n_iters), d);
  VectorXd x = init;
  double lp = target.log_density(x);
  std::size_t accepted = 0;
  for (std::size_t k = 0; k < n_iters; ++k) {
    const VectorXd y = x + h * geo.mul_l(normals(rng, d));
    const double ly = target.log_density(y);
    const double log_u = std::log(rng.uniform());
    if (std::isfinite(ly) && log_u < ly - lp) {
      x = y;
      lp = ly;
      ++accepted;
    }
    out.samples.row(static_cast<Eigen::Index>(k)) = x.transpose();
  }
  out.accept_rate = n_iters ? static_cast<double>(accepted) / n_iters : 0.0;
  out.epochs = static_cast<double>(n_iters);
  return out;
}

ChainResult mala_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                     std::size_t n_iters, std::uint64_t seed) {
  check_inputs(target, cfg, init);
  const int d = target.dim();
  const Geometry geo(cfg.precond, d);
  Rng rng(seed);
  const double h = cfg.step_size;
  const double h2 = 0.5 * h * h;

  ChainResult out;
  out.samples.resize(static_cast<Eigen::Index>(n_iters), d);
  VectorXd x = init;
  double lp = target.log_density(x);
  VectorXd g = gradient_at(target, x);
  if (!g.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient at the initial point");
  VectorXd pg = geo.mul_p(g);
  std::size_t accepted = 0;
  for (std::size_t k = 0; k < n_iters; ++k) {
    const VectorXd xi = normals(rng, d);
    const VectorXd y = x + h2 * pg + h * geo.mul_l(xi);
    const double ly = target.log_density(y);
    const double log_u = std::log(rng.uniform());
    if (std::isfinite(ly)) {
      const VectorXd gy = gradient_at(target, y);
      if (!gy.allFinite())
        throw Error(ErrorCode::NonFiniteGradient, "gradient at proposal " + std::to_string(k));
      const VectorXd pgy = geo.mul_p(gy);
      const VectorXd back = geo.solve_l(x - y - h2 * pgy) / h;
      const double log_ratio = ly - lp - 0.5 * back.squaredNorm() + 0.5 * xi.squaredNorm();
      if (log_u < log_ratio) {
        x = y;
        lp = ly;
        g = gy;
        pg = pgy;
        ++accepted;
      }
    }
    out.samples.row(static_cast<Eigen::Index>(k)) = x.transpose();
  }
  out.accept_rate = n_iters ? static_cast<double>(accepted) / n_iters : 0.0;
  out.epochs = static_cast<double>(n_iters);
  return out;
}

ChainResult hmc_run(const Target& target, const MetropolisConfig& cfg, const VectorXd& init,
                    std::size_t n_iters, std::uint64_t seed) {
  check_inputs(target, cfg, init);
  if (cfg.leapfrog_steps < 1) throw Error(ErrorCode::InvalidArgument, "leapfrog_steps must be >= 1");
  const int d = target.dim();
  const Geometry geo(cfg.precond, d);
  Rng rng(seed);
  const double eps = cfg.step_size;

  ChainResult out;
  out.samples.resize(static_cast<Eigen::Index>(n_iters), d);
  VectorXd x = init;
  double lp = target.log_density(x);
  VectorXd g = gradient_at(target, x);
  if (!g.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient at the initial point");
  std::size_t accepted = 0;
  for (std::size_t k = 0; k < n_iters; ++k) {
    // Whitened momentum w = L^T p, so p ~ N(0, P^-1) becomes w ~ N(0, I)
    // and the kinetic energy p^T P p / 2 is |w|^2 / 2.
    const VectorXd xi = normals(rng, d);
    const double log_u = std::log(rng.uniform());
    VectorXd w = xi + 0.5 * eps * geo.mul_lt(g);
    VectorXd y = x;
    VectorXd gy = g;
    bool finite = true;
    for (int l = 0; l < cfg.leapfrog_steps; ++l) {
      y += eps * geo.mul_l(w);
      gy = gradient_at(target, y);
      if (!gy.allFinite()) {
        finite = false;
        break;
      }
      w += (l + 1 < cfg.leapfrog_steps ? eps : 0.5 * eps) * geo.mul_lt(gy);
    }
    const double ly = finite ? target.log_density(y) : 0.0;
    const double log_ratio = ly - lp - 0.5 * w.squaredNorm() + 0.5 * xi.squaredNorm();
    if (!finite || !std::isfinite(log_ratio)) {
      ++out.divergences;
    } else if (log_u < log_ratio) {
      x = y;
      lp = ly;
      g = gy;
      ++accepted;
    }
    out.samples.row(static_cast<Eigen::Index>(k)) = x.transpose();
  }
  out.accept_rate = n_iters ? static_cast<double>(accepted) / n_iters : 0.0;
  out.epochs = static_cast<double>(n_iters) * (cfg.leapfrog_steps + 1);
  return out;
}

double epochs_per_iteration(Algorithm algo, const MetropolisConfig& cfg) {
  return algo == Algorithm::Hmc ? cfg.leapfrog_steps + 1.0 : 1.0;
}

std::size_t iterations_for_budget(Algorithm algo, const MetropolisConfig& cfg, double epoch_budget) {
  if (!(epoch_budget >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative epoch budget");
  return static_cast<std::size_t>(std::floor(epoch_budget / epochs_per_iteration(algo, cfg)));
}

ChainResult run(Algorithm algo, const Target& target, const MetropolisConfig& cfg,
                const VectorXd& init, std::size_t n_iters, std::uint64_t seed) {
  switch (algo) {
    case Algorithm::Rwm:
      return rwm_run(target, cfg, init, n_iters, seed);
    case Algorithm::Mala:
      return mala_run(target, cfg, init, n_iters, seed);
    case Algorithm::Hmc:
      return hmc_run(target, cfg, init, n_iters, seed);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown algorithm");
}

void write_samples_csv(const MatrixXd& samples, std::ostream& out) {
  std::string line = "iter";
  for (Eigen::Index i = 1; i <= samples.cols(); ++i) line += ",x_" + std::to_string(i);
  out << line << '\n';
  char buf[32];
  for (Eigen::Index k = 0; k < samples.rows(); ++k) {
    line = std::to_string(k + 1);
    for (Eigen::Index i = 0; i < samples.cols(); ++i) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, samples(k, i), std::chars_format::general, 17);
      line += ',';
      line.append(buf, ptr);
    }
    out << line << '\n';
  }
}

}  // namespace nuzz::baselines
