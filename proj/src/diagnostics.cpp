#include "nuzz/diagnostics.hpp"

#include "nuzz/error.hpp"
#include "nuzz/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nuzz::diag {

namespace {

void require_path(const Trajectory& traj) {
  if (traj.skeleton.size() < 2 || !(traj.total_time() > 0.0))
    throw Error(ErrorCode::EmptyTrajectory, "trajectory needs at least one segment of positive length");
}

}  // namespace

MatrixXd subsample_trajectory(const Trajectory& traj, std::size_t n_out) {
  require_path(traj);
  if (n_out == 0) throw Error(ErrorCode::InvalidArgument, "n_out must be >= 1");
  const auto& sk = traj.skeleton;
  const double t0 = traj.start_time();
  const double span = traj.total_time();
  MatrixXd out(static_cast<Eigen::Index>(n_out), traj.dim());
  std::size_t k = 0;
  for (std::size_t j = 0; j < n_out; ++j) {
    const double t = t0 + (static_cast<double>(j) + 0.5) * span / static_cast<double>(n_out);
    while (k + 2 < sk.size() && sk[k + 1].t <= t) ++k;
    out.row(static_cast<Eigen::Index>(j)) = (sk[k].x + (t - sk[k].t) * sk[k].v).transpose();
  }
  return out;
}

double path_integral(const Trajectory& traj, const std::function<double(const VectorXd&)>& f) {
  require_path(traj);
  double total = 0.0;
  VectorXd x(traj.dim());
  for (std::size_t k = 0; k + 1 < traj.skeleton.size(); ++k) {
    const auto& p = traj.skeleton[k];
    const double len = traj.skeleton[k + 1].t - p.t;
    if (len <= 0.0) continue;
    total += quad::gk_7_15(
                 [&](double s) {
                   x = p.x + s * p.v;
                   return f(x);
                 },
                 0.0, len)
                 .value;
  }
  return total / traj.total_time();
}

double ks_from_sorted_cdf(const std::vector<double>& sorted_cdf) {
  const double n = static_cast<double>(sorted_cdf.size());
  double d = 0.0;
  for (std::size_t j = 0; j < sorted_cdf.size(); ++j) {
    const double f = sorted_cdf[j];
    d = std::max({d, f - static_cast<double>(j) / n, static_cast<double>(j + 1) / n - f});
  }
  return d;
}

double ks_one_sample(std::vector<double> values, const std::function<double(double)>& cdf) {
  if (values.empty()) throw Error(ErrorCode::TooFewSamples, "no samples");
  for (double& v : values) v = cdf(v);
  std::sort(values.begin(), values.end());
  return ks_from_sorted_cdf(values);
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::TooFewSamples, "empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

namespace {

void check_marginals(const Target& target, Eigen::Index cols) {
  if (cols != target.dim())
    throw Error(ErrorCode::DimensionMismatch, "sample columns do not match target dimension");
  for (int i = 0; i < target.dim(); ++i)
    if (!target.has_marginal(i))
      throw Error(ErrorCode::NoMarginalAvailable,
                  "no marginal cdf for coordinate " + std::to_string(i + 1));
}

std::optional<double> reference_floor(const Target& target) {
  std::optional<double> floor;
  for (int i = 0; i < target.dim(); ++i)
    if (const Ecdf* e = target.marginal_ecdf(i)) floor = std::max(floor.value_or(0.0), e->dkw_floor());
  return floor;
}

}  // namespace

KSReport ks_statistic(const MatrixXd& samples, const Target& target) {
  check_marginals(target, samples.cols());
  if (samples.rows() == 0) throw Error(ErrorCode::TooFewSamples, "no samples");
  KSReport rep;
  rep.n_samples = static_cast<std::size_t>(samples.rows());
  rep.per_coord.resize(target.dim());
  std::vector<double> col(rep.n_samples);
  for (int i = 0; i < target.dim(); ++i) {
    for (std::size_t k = 0; k < rep.n_samples; ++k)
      col[k] = target.marginal_cdf(i, samples(static_cast<Eigen::Index>(k), i));
    std::sort(col.begin(), col.end());
    rep.per_coord[i] = ks_from_sorted_cdf(col);
  }
  rep.D = rep.per_coord.maxCoeff();
  rep.reference_floor = reference_floor(target);
  return rep;
}

KSReport batched_convergence(const MatrixXd& samples, const Target& target, std::size_t n_batches,
                             double total_epochs) {
  check_marginals(target, samples.cols());
  if (n_batches == 0) throw Error(ErrorCode::InvalidArgument, "n_batches must be >= 1");
  const auto rows = static_cast<std::size_t>(samples.rows());
  if (rows < n_batches)
    throw Error(ErrorCode::TooFewSamples, "need at least one sample per batch");
  if (total_epochs < 0.0) total_epochs = static_cast<double>(rows);
  const std::size_t per_batch = rows / n_batches;
  const std::size_t used = per_batch * n_batches;
  const int d = target.dim();

  // Prefix k's sorted cdf values come from merging batch k into prefix k-1.
  std::vector<std::vector<double>> sorted(static_cast<std::size_t>(d));
  std::vector<std::vector<double>> curves(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    auto& s = sorted[static_cast<std::size_t>(i)];
    s.resize(used);
    for (std::size_t k = 0; k < used; ++k) s[k] = target.marginal_cdf(i, samples(static_cast<Eigen::Index>(k), i));
    std::vector<double> prefix;
    prefix.reserve(used);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const auto first = s.begin() + static_cast<std::ptrdiff_t>(b * per_batch);
      const auto last = first + static_cast<std::ptrdiff_t>(per_batch);
      std::sort(first, last);
      const auto mid = static_cast<std::ptrdiff_t>(prefix.size());
      prefix.insert(prefix.end(), first, last);
      std::inplace_merge(prefix.begin(), prefix.begin() + mid, prefix.end());
      curves[static_cast<std::size_t>(i)].push_back(ks_from_sorted_cdf(prefix));
    }
  }

  KSReport rep;
  rep.n_samples = used;
  rep.per_coord.resize(d);
  for (int i = 0; i < d; ++i) rep.per_coord[i] = curves[static_cast<std::size_t>(i)].back();
  rep.D = rep.per_coord.maxCoeff();
  for (std::size_t b = 0; b < n_batches; ++b) {
    double worst = 0.0;
    for (const auto& c : curves) worst = std::max(worst, c[b]);
    rep.batches.push_back({b + 1, total_epochs * static_cast<double>(b + 1) / static_cast<double>(n_batches), worst});
  }
  rep.reference_floor = reference_floor(target);
  return rep;
}

double dkw_bound(std::size_t n, double alpha) {
  if (n == 0 || !(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorCode::InvalidArgument, "dkw_bound needs n >= 1 and alpha in (0, 1)");
  return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(n)));
}

BatchMeans batch_means(const std::vector<double>& series, std::size_t n_batches) {
  if (n_batches < 2 || series.size() < n_batches)
    throw Error(ErrorCode::TooFewSamples, "batch means needs at least two non-empty batches");
  const std::size_t len = series.size() / n_batches;
  std::vector<double> means(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    const auto first = series.begin() + static_cast<std::ptrdiff_t>(b * len);
    means[b] = std::accumulate(first, first + static_cast<std::ptrdiff_t>(len), 0.0) / static_cast<double>(len);
  }
  BatchMeans out;
  out.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(n_batches);
  double ss = 0.0;
  for (double m : means) ss += (m - out.mean) * (m - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(n_batches - 1) / static_cast<double>(n_batches));
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::TooFewSamples, "percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

RepeatSummary aggregate_repeats(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw Error(ErrorCode::TooFewSamples, "no repeats to aggregate");
  const std::size_t len = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != len) throw Error(ErrorCode::DimensionMismatch, "repeat curves differ in length");
  RepeatSummary out;
  std::vector<double> column(curves.size());
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t r = 0; r < curves.size(); ++r) column[r] = curves[r][j];
    out.mean.push_back(std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size()));
    out.lower.push_back(percentile(column, 0.025));
    out.upper.push_back(percentile(column, 0.975));
    out.median.push_back(percentile(column, 0.5));
  }
  return out;
}

}  // namespace nuzz::diag
