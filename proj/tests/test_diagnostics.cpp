#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nuzz/diagnostics.hpp"
#include "nuzz/error.hpp"
#include "nuzz/pdmp.hpp"

#include <algorithm>
#include <cmath>

using namespace nuzz;
using namespace nuzz::diag;
using pdmp::SkeletonPoint;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Trajectory path(std::vector<SkeletonPoint> pts) {
  Trajectory t;
  t.skeleton = std::move(pts);
  return t;
}

// sup over all x of |F_n(x) - F(x)|, checking both sides of every jump.
double brute_force_ks(const std::vector<double>& xs, const std::function<double(double)>& cdf) {
  const double n = static_cast<double>(xs.size());
  double sup = 0.0;
  for (double x : xs) {
    double below = 0.0, at_or_below = 0.0;
    for (double y : xs) {
      if (y < x) below += 1.0;
      if (y <= x) at_or_below += 1.0;
    }
    sup = std::max(sup, std::abs(at_or_below / n - cdf(x)));
    sup = std::max(sup, std::abs(below / n - cdf(x)));
  }
  return sup;
}

double brute_force_two_sample(const std::vector<double>& a, const std::vector<double>& b) {
  auto ecdf = [](const std::vector<double>& s, double x) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [x](double y) { return y <= x; })) / s.size();
  };
  double sup = 0.0;
  for (const auto* s : {&a, &b})
    for (double x : *s) sup = std::max(sup, std::abs(ecdf(a, x) - ecdf(b, x)));
  return sup;
}

// Distance from p to the segment [a, b].
double segment_distance(const VectorXd& p, const VectorXd& a, const VectorXd& b) {
  const VectorXd ab = b - a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + s * ab - p).norm();
}

}  // namespace

TEST_CASE("subsampling a single segment at its midpoint") {
  const Trajectory t = path({{0.0, vec({0.0}), vec({1.0})}, {1.0, vec({1.0}), vec({-1.0})}});
  const MatrixXd s = subsample_trajectory(t, 1);
  REQUIRE(s.rows() == 1);
  CHECK(s(0, 0) == 0.5);
}

TEST_CASE("subsampled points lie on the piecewise-linear path") {
  const Trajectory t = path({{0.0, vec({0.0, 0.0}), vec({1.0, 1.0})},
                             {1.0, vec({1.0, 1.0}), vec({1.0, -1.0})},
                             {3.0, vec({3.0, -1.0}), vec({-1.0, -1.0})}});
  const MatrixXd s = subsample_trajectory(t, 4);
  REQUIRE(s.rows() == 4);
  // Grid times 0.375, 1.125, 1.875, 2.625.
  CHECK(s(0, 0) == doctest::Approx(0.375));
  CHECK(s(0, 1) == doctest::Approx(0.375));
  CHECK(s(1, 0) == doctest::Approx(1.125));
  CHECK(s(1, 1) == doctest::Approx(0.875));
  CHECK(s(3, 0) == doctest::Approx(2.625));
  CHECK(s(3, 1) == doctest::Approx(-0.625));
}

TEST_CASE("subsampled points always lie on a skeleton segment") {
  const Trajectory tr = pdmp::nuzz_run(Target::std_normal(3), pdmp::RateConfig::from_total(0.001, 3),
                                       pdmp::initial_state(VectorXd::Zero(3), VectorXd::Ones(3)), 500, 1e-10,
                                       1e-10, 2);
  const std::size_t n = 3000;
  const MatrixXd s = subsample_trajectory(tr, n);
  const double T0 = tr.start_time(), T = tr.total_time();
  std::size_t k = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = T0 + (j + 0.5) * T / n;
    while (k + 2 < tr.skeleton.size() && tr.skeleton[k + 1].t <= t) ++k;
    const VectorXd p = s.row(static_cast<Eigen::Index>(j)).transpose();
    const double dist = segment_distance(p, tr.skeleton[k].x, tr.skeleton[k + 1].x);
    CHECK(dist <= 1e-12 * std::max(1.0, p.norm()));
  }
}

TEST_CASE("subsample variance of a long 1-d run") {
  const Trajectory tr = pdmp::nuzz_run(Target::std_normal(1), pdmp::RateConfig{0.001},
                                       pdmp::initial_state(VectorXd::Zero(1), VectorXd::Ones(1)), 100000, 1e-10,
                                       1e-10, 12);
  const MatrixXd s = subsample_trajectory(tr, 100000);
  const double mean = s.col(0).mean();
  const double var = (s.col(0).array() - mean).square().sum() / (s.rows() - 1);
  CHECK(std::abs(var - 1.0) <= 0.03);
}

TEST_CASE("subsampling needs a non-degenerate trajectory") {
  const Trajectory one = path({{0.0, vec({0.0}), vec({1.0})}});
  try {
    subsample_trajectory(one, 3);
    FAIL("expected EmptyTrajectory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyTrajectory);
  }
  CHECK_THROWS_AS(path_integral(one, [](const VectorXd&) { return 1.0; }), Error);
}

TEST_CASE("path integrals") {
  const Trajectory seg = path({{0.0, vec({0.0}), vec({2.0})}, {1.0, vec({2.0}), vec({-2.0})}});
  CHECK(path_integral(seg, [](const VectorXd&) { return 1.0; }) == 1.0);
  CHECK(path_integral(seg, [](const VectorXd& x) { return x[0]; }) == doctest::Approx(1.0).epsilon(1e-15));
  // int_0^1 (2s)^2 ds = 4/3.
  CHECK(path_integral(seg, [](const VectorXd& x) { return x[0] * x[0]; }) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("path integral of a constant is that constant") {
  const Trajectory tr = pdmp::nuzz_run(Target::student_t1(2), pdmp::RateConfig::from_total(0.001, 2),
                                       pdmp::initial_state(VectorXd::Zero(2), VectorXd::Ones(2)), 300, 1e-10,
                                       1e-10, 3);
  for (double c : {-2.5, 0.0, 1.0, 7.25})
    CHECK(path_integral(tr, [c](const VectorXd&) { return c; }) == doctest::Approx(c).epsilon(1e-13));
}

TEST_CASE("path integral reports non-finite values") {
  const Trajectory seg = path({{0.0, vec({0.0}), vec({1.0})}, {1.0, vec({1.0}), vec({-1.0})}});
  try {
    path_integral(seg, [](const VectorXd&) { return NAN; });
    FAIL("expected NonFiniteIntegrand");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteIntegrand);
  }
}

TEST_CASE("ks statistic on exact draws") {
  const Target t = Target::std_normal(10);
  const KSReport r = ks_statistic(t.direct_sample(5, 100000), t);
  CHECK(r.D <= 0.01);
  CHECK(r.n_samples == 100000);
  CHECK(r.per_coord.size() == 10);
  CHECK(r.D == r.per_coord.maxCoeff());
  CHECK((r.per_coord.array() >= 0.0).all());
}

TEST_CASE("ks statistic of degenerate samples") {
  const Target t = Target::std_normal(1);
  CHECK(ks_statistic(MatrixXd::Zero(1, 1), t).D == doctest::Approx(0.5));
  const double q90 = 1.2815515655446004;  // standard normal 0.9 quantile
  CHECK(ks_statistic(MatrixXd::Constant(50, 1, q90), t).D == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("ks statistic matches a brute-force sup") {
  Rng rng(4);
  const Target t = Target::student_t1(1);
  for (int k = 0; k < 30; ++k) {
    const std::size_t n = 1 + rng.index(1000);
    std::vector<double> xs(n);
    MatrixXd m(n, 1);
    for (std::size_t j = 0; j < n; ++j) {
      // Mix of shifted normals and repeated values to exercise ties.
      xs[j] = rng.uniform() < 0.2 ? std::round(rng.normal()) : 0.5 + 2.0 * rng.normal();
      m(static_cast<Eigen::Index>(j), 0) = xs[j];
    }
    auto cdf = [&t](double x) { return t.marginal_cdf(0, x); };
    CHECK(ks_statistic(m, t).D == doctest::Approx(brute_force_ks(xs, cdf)).epsilon(1e-12));
    CHECK(ks_one_sample(xs, cdf) == doctest::Approx(brute_force_ks(xs, cdf)).epsilon(1e-12));
  }
}

TEST_CASE("two-sample ks matches a brute-force sup") {
  Rng rng(8);
  for (int k = 0; k < 30; ++k) {
    std::vector<double> a(1 + rng.index(300)), b(1 + rng.index(300));
    for (double& x : a) x = std::round(4.0 * rng.normal()) / 2.0;
    for (double& x : b) x = 0.3 + std::round(4.0 * rng.normal()) / 2.0;
    CHECK(ks_two_sample(a, b) == doctest::Approx(brute_force_two_sample(a, b)).epsilon(1e-12));
  }
  CHECK(ks_two_sample({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_two_sample({1, 2}, {3, 4}) == 1.0);
}

TEST_CASE("ks statistic needs marginals") {
  const Target t = Target::hybrid_rosenbrock(3, 2.5, 50.0);
  try {
    ks_statistic(MatrixXd::Zero(10, 3), t);
    FAIL("expected NoMarginalAvailable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoMarginalAvailable);
  }
}

TEST_CASE("batched convergence on exact draws scales like one over root n") {
  const Target t = Target::std_normal(1);
  const std::size_t batches = 40;
  std::vector<double> mean_d(batches, 0.0);
  const int repeats = 30;
  for (int r = 0; r < repeats; ++r) {
    const KSReport rep = batched_convergence(t.direct_sample(100 + r, 40000), t, batches, 40000.0);
    REQUIRE(rep.batches.size() == batches);
    for (std::size_t k = 0; k < batches; ++k) mean_d[k] += rep.batches[k].D / repeats;
  }
  // Least-squares slope of log D against log prefix size.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < batches; ++k) {
    const double x = std::log(double(k + 1)), y = std::log(mean_d[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = batches;
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(std::abs(slope + 0.5) <= 0.15);
}

TEST_CASE("a wrong first batch is diluted by later batches") {
  const Target t = Target::std_normal(1);
  MatrixXd s = t.direct_sample(9, 4000);
  s.topRows(100).array() += 3.0;
  const KSReport r = batched_convergence(s, t, 40);
  for (std::size_t k = 1; k < r.batches.size(); ++k) CHECK(r.batches[k].D < r.batches[0].D);
}

TEST_CASE("batched convergence bookkeeping") {
  const Target t = Target::std_normal(2);
  const MatrixXd s = t.direct_sample(1, 1003);
  const KSReport one = batched_convergence(s, t, 1, 500.0);
  REQUIRE(one.batches.size() == 1);
  CHECK(one.batches[0].D == ks_statistic(s, t).D);
  CHECK(one.batches[0].epochs == 500.0);
  CHECK(one.batches[0].prefix_batches == 1);

  const KSReport many = batched_convergence(s, t, 10, 1000.0);
  REQUIRE(many.batches.size() == 10);
  // Remainder rows are dropped: prefix k covers 100 k rows.
  CHECK(many.batches[3].D == ks_statistic(s.topRows(400), t).D);
  CHECK(many.batches[3].epochs == doctest::Approx(400.0));
  CHECK(many.n_samples == 1000);

  try {
    batched_convergence(s.topRows(5), t, 40);
    FAIL("expected TooFewSamples");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewSamples);
  }
}

TEST_CASE("dkw bound") {
  CHECK(dkw_bound(100000, 1e-3) == doctest::Approx(std::sqrt(std::log(2000.0) / 200000.0)));
  CHECK(dkw_bound(100000, 1e-3) == doctest::Approx(0.0062).epsilon(0.01));
}

TEST_CASE("batch means of an autocorrelated series") {
  // AR(1) with coefficient 0.9: the naive standard error is too small by a
  // factor sqrt((1 + 0.9) / (1 - 0.9)).
  Rng rng(6);
  const std::size_t n = 200000;
  std::vector<double> s(n);
  double x = 0.0;
  for (double& v : s) {
    x = 0.9 * x + std::sqrt(1 - 0.81) * rng.normal();
    v = x;
  }
  const BatchMeans bm = batch_means(s);
  const double asymptotic = std::sqrt(19.0 / n);
  CHECK(bm.se == doctest::Approx(asymptotic).epsilon(0.35));
  CHECK(std::abs(bm.mean) <= 4.0 * asymptotic);
}

TEST_CASE("repeat aggregation") {
  std::vector<std::vector<double>> curves;
  for (int r = 0; r < 40; ++r) curves.push_back({double(r), 2.0 * r, 5.0});
  const RepeatSummary s = aggregate_repeats(curves);
  REQUIRE(s.mean.size() == 3);
  CHECK(s.mean[0] == doctest::Approx(19.5));
  CHECK(s.median[0] == doctest::Approx(19.5));
  // Linear-interpolation percentiles of 0..39.
  CHECK(s.lower[0] == doctest::Approx(0.025 * 39));
  CHECK(s.upper[0] == doctest::Approx(0.975 * 39));
  CHECK(s.upper[1] == doctest::Approx(2 * 0.975 * 39));
  CHECK(s.lower[2] == 5.0);
  CHECK(percentile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(percentile({1.0, 2.0}, 0.25) == doctest::Approx(1.25));
}

TEST_CASE("effort ledger") {
  EffortLedger e;
  e.grad_evals = 300;
  e.density_evals = 100;
  e.evals_per_epoch = 100;
  CHECK(e.epochs() == 4.0);
}
