#include "nuzz/pdmp.hpp"

#include "nuzz/error.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>

namespace nuzz::pdmp {

namespace {

void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

void check_state(const Target& target, const ZigZagState& s) {
  require(s.x.size() == target.dim() && s.v.size() == target.dim(), ErrorCode::DimensionMismatch,
          "state dimension does not match target");
}

// Sum over coordinates of max(0, -v_i g_i) + gamma.
double rate_sum(const VectorXd& grad, const VectorXd& v, double gamma) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < grad.size(); ++i) total += std::max(0.0, -v[i] * grad[i]) + gamma;
  return total;
}

void check_gradient(const VectorXd& grad) {
  if (!grad.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient is not finite");
}

void append_double(std::string& out, double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  out.append(buf, ptr);
}

std::atomic<bool> g_warned_tolerance_clamp{false};
std::atomic<bool> g_warned_zero_gamma{false};

// Solves int_0^tau f = R through `out.cache`.
void solve_sellke(const quad::Integrand& f, double R, double eps_int, double eps_bre, double t0,
                  SwitchTime& out) {
  require(eps_int > 0.0 && eps_bre > 0.0, ErrorCode::InvalidArgument, "tolerances must be positive");
  require(R > 0.0 && std::isfinite(R), ErrorCode::InvalidArgument, "R must be a positive finite draw");
  const double floor = 1e-14 * (1.0 + R);
  if (eps_bre < floor) {
    if (!g_warned_tolerance_clamp.exchange(true))
      std::cerr << "nuzz: warning: eps_bre " << eps_bre << " is below machine precision for R = " << R
                << "; clamping to " << floor << "\n";
    eps_bre = floor;
  }
  auto g = [&](double t) { return out.cache.extend(f, t, eps_int) - R; };
  out.bracket = root::expand_bracket(g, t0);
  out.root = root::brent(g, out.bracket, eps_bre);
  out.tau = out.root.root;
  out.integrated_rate = R + out.root.g_at_root;
  out.counters.rate_evals += out.cache.evals();
  out.counters.grad_evals += out.cache.evals();
  out.counters.brent_iters += static_cast<std::size_t>(out.root.iterations);
  out.counters.quad_failures += out.cache.failures();
  if (!out.root.converged) ++out.counters.root_failures;
}

}  // namespace

RateConfig RateConfig::from_total(double gamma_total, int dim) {
  require(gamma_total >= 0.0, ErrorCode::InvalidArgument, "refreshment rate must be >= 0");
  require(dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  return RateConfig{gamma_total / dim};
}

ZigZagState initial_state(VectorXd x0, const VectorXd& speeds) {
  require(x0.size() == speeds.size(), ErrorCode::DimensionMismatch, "x0 and speeds differ in size");
  require((speeds.array() > 0.0).all(), ErrorCode::NonPositiveSigma, "speeds must be positive");
  return ZigZagState{std::move(x0), speeds, 0.0};
}

Counters& Counters::operator+=(const Counters& o) noexcept {
  grad_evals += o.grad_evals;
  rate_evals += o.rate_evals;
  switches += o.switches;
  brent_iters += o.brent_iters;
  proposals += o.proposals;
  quad_failures += o.quad_failures;
  root_failures += o.root_failures;
  return *this;
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  const int d = traj.dim();
  std::string line = "t";
  for (int i = 1; i <= d; ++i) line += ",x_" + std::to_string(i);
  for (int i = 1; i <= d; ++i) line += ",v_" + std::to_string(i);
  out << line << '\n';
  for (const SkeletonPoint& p : traj.skeleton) {
    line.clear();
    append_double(line, p.t);
    for (int i = 0; i < d; ++i) {
      line += ',';
      append_double(line, p.x[i]);
    }
    for (int i = 0; i < d; ++i) {
      line += ',';
      append_double(line, p.v[i]);
    }
    out << line << '\n';
  }
}

// ---------------------------------------------------------------------------
// Rates

VectorXd component_rates(const Target& target, const RateConfig& cfg, const VectorXd& x,
                         const VectorXd& v) {
  require(x.size() == target.dim() && v.size() == target.dim(), ErrorCode::DimensionMismatch,
          "x and v must match the target dimension");
  VectorXd grad(target.dim());
  target.gradient(x, grad);
  check_gradient(grad);
  VectorXd rates(target.dim());
  for (int i = 0; i < target.dim(); ++i) rates[i] = std::max(0.0, -v[i] * grad[i]) + cfg.gamma;
  return rates;
}

double component_rate(const Target& target, const RateConfig& cfg, const VectorXd& x,
                      const VectorXd& v, int i) {
  require(i >= 0 && i < target.dim(), ErrorCode::DimensionMismatch, "coordinate out of range");
  return component_rates(target, cfg, x, v)[i];
}

double total_rate(const Target& target, const RateConfig& cfg, const VectorXd& x, const VectorXd& v) {
  return component_rates(target, cfg, x, v).sum();
}

int sample_switch_index(std::span<const double> rates, double u) {
  require(!rates.empty(), ErrorCode::ZeroTotalRate, "no rates");
  std::vector<double> cumulative(rates.size());
  std::partial_sum(rates.begin(), rates.end(), cumulative.begin());
  const double total = cumulative.back();
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroTotalRate, "total switching rate is zero");
  const double level = u * total;
  auto it = std::lower_bound(cumulative.begin(), cumulative.end(), level);
  if (it == cumulative.end()) --it;  // u rounding up to 1
  return static_cast<int>(it - cumulative.begin());
}

int sample_switch_index(const Target& target, const RateConfig& cfg, const VectorXd& x_at_tau,
                        const VectorXd& v, double u) {
  const VectorXd rates = component_rates(target, cfg, x_at_tau, v);
  return sample_switch_index(std::span<const double>(rates.data(), rates.size()), u);
}

// ---------------------------------------------------------------------------
// Numerical switching time

SwitchTime nuzz_switch_time(const Target& target, const RateConfig& cfg, const ZigZagState& state,
                            double R, double eps_int, double eps_bre, double t0) {
  check_state(target, state);
  const double gamma_total = cfg.total(target.dim());
  VectorXd xs(target.dim()), grad(target.dim());
  const VectorXd& x = state.x;
  const VectorXd& v = state.v;
  quad::Integrand rate = [&](double s) {
    xs = x + s * v;
    target.gradient(xs, grad);
    check_gradient(grad);
    return rate_sum(grad, v, 0.0) + gamma_total;
  };
  SwitchTime out;
  solve_sellke(rate, R, eps_int, eps_bre, t0, out);
  return out;
}

NuzzSampler::NuzzSampler(Target target, RateConfig cfg, ZigZagState init, NuzzOptions options,
                         std::uint64_t seed)
    : target_(std::move(target)),
      cfg_(cfg),
      state_(std::move(init)),
      options_(options),
      rng_(seed) {
  check_state(target_, state_);
  require(cfg_.gamma >= 0.0, ErrorCode::InvalidArgument, "gamma must be >= 0");
  if (cfg_.gamma == 0.0 && !g_warned_zero_gamma.exchange(true))
    std::cerr << "nuzz: warning: zero refreshment rate; switching times may be unbounded\n";
}

NuzzEvent NuzzSampler::step() {
  try {
    NuzzEvent ev = options_.mode == SwitchMode::TotalRate ? step_total_rate() : step_per_coordinate();
    ++event_index_;
    return ev;
  } catch (const Error& e) {
    throw Error(e.code(), std::string(e.what()) + " (event " + std::to_string(event_index_) + ")");
  }
}

NuzzEvent NuzzSampler::step_total_rate() {
  NuzzEvent ev;
  ev.R = rng_.exponential();
  const double t0 = std::clamp(warm_start_, 1e-3, 1e3);
  SwitchTime st = nuzz_switch_time(target_, cfg_, state_, ev.R, options_.eps_int, options_.eps_bre, t0);
  if (options_.strict) {
    if (st.counters.quad_failures > 0)
      throw Error(ErrorCode::ToleranceNotReached, "integration tolerance not reached");
    if (st.counters.root_failures > 0)
      throw Error(ErrorCode::MaxIterationsExceeded, "Brent did not reach eps_bre");
  }
  ev.tau = st.tau;
  ev.integrated_rate = st.integrated_rate;
  ev.cost = st.counters;

  state_.x += ev.tau * state_.v;
  state_.t += ev.tau;
  VectorXd rates = component_rates(target_, cfg_, state_.x, state_.v);
  ev.cost.grad_evals += 1;
  ev.index = sample_switch_index(std::span<const double>(rates.data(), rates.size()), rng_.uniform());
  state_.v[ev.index] = -state_.v[ev.index];
  ev.cost.switches = 1;
  counters_ += ev.cost;
  warm_start_ = ev.tau;
  return ev;
}

NuzzEvent NuzzSampler::step_per_coordinate() {
  const int d = target_.dim();
  NuzzEvent ev;
  ev.tau = std::numeric_limits<double>::infinity();
  VectorXd xs(d), grad(d);
  const VectorXd& x = state_.x;
  const VectorXd& v = state_.v;
  for (int i = 0; i < d; ++i) {
    const double R = rng_.exponential();
    quad::Integrand rate = [&](double s) {
      xs = x + s * v;
      target_.gradient(xs, grad);
      check_gradient(grad);
      return std::max(0.0, -v[i] * grad[i]) + cfg_.gamma;
    };
    SwitchTime st;
    try {
      solve_sellke(rate, R, options_.eps_int, options_.eps_bre, 1.0, st);
    } catch (const Error& e) {
      // A coordinate whose rate integral never reaches R simply never fires.
      if (e.code() != ErrorCode::BracketNotFound) throw;
      continue;
    }
    ev.cost += st.counters;
    if (st.tau < ev.tau) {
      ev.tau = st.tau;
      ev.index = i;
      ev.R = R;
      ev.integrated_rate = st.integrated_rate;
    }
  }
  if (ev.index < 0) throw Error(ErrorCode::BracketNotFound, "no coordinate has a finite switching time");
  state_.x += ev.tau * state_.v;
  state_.t += ev.tau;
  state_.v[ev.index] = -state_.v[ev.index];
  ev.cost.switches = 1;
  counters_ += ev.cost;
  return ev;
}

Trajectory nuzz_run(const Target& target, const RateConfig& cfg, const ZigZagState& init,
                    std::size_t n_switches, const NuzzOptions& options, std::uint64_t seed) {
  require(n_switches >= 1, ErrorCode::InvalidArgument, "need at least one switch");
  NuzzSampler sampler(target, cfg, init, options, seed);
  Trajectory traj;
  traj.skeleton.reserve(n_switches + 1);
  traj.record(sampler.state());
  for (std::size_t k = 0; k < n_switches; ++k) {
    sampler.step();
    traj.record(sampler.state());
  }
  traj.counters = sampler.counters();
  return traj;
}

// ---------------------------------------------------------------------------
// Exact Zig-Zag for isotropic Gaussians

double icdf_coordinate_time(double x, double v, double R, double sigma, double gamma) {
  require(v != 0.0, ErrorCode::InvalidArgument, "velocity component must be non-zero");
  require(sigma > 0.0, ErrorCode::NonPositiveSigma, "sigma must be positive");
  // lambda(t) = max(0, a + b t) + gamma
  const double var = sigma * sigma;
  const double a = v * x / var;
  const double b = v * v / var;
  if (a >= 0.0) {
    const double c = a + gamma;
    return 2.0 * R / (c + std::sqrt(c * c + 2.0 * b * R));
  }
  const double t_zero = -a / b;  // rate leaves zero here
  if (gamma * t_zero >= R) return R / gamma;
  const double rest = R - gamma * t_zero;
  return t_zero + 2.0 * rest / (gamma + std::sqrt(gamma * gamma + 2.0 * b * rest));
}

IcdfSwitch icdf_switch_time_gaussian(const ZigZagState& state, std::span<const double> R,
                                     double sigma, double gamma) {
  const auto d = static_cast<std::size_t>(state.x.size());
  require(state.v.size() == state.x.size() && R.size() == d, ErrorCode::DimensionMismatch,
          "need one exponential draw per coordinate");
  IcdfSwitch out{std::numeric_limits<double>::infinity(), -1};
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double tau = icdf_coordinate_time(state.x[ii], state.v[ii], R[i], sigma, gamma);
    if (tau < out.tau) out = IcdfSwitch{tau, static_cast<int>(i)};
  }
  return out;
}

IcdfSampler::IcdfSampler(const Target& target, RateConfig cfg, ZigZagState init, std::uint64_t seed)
    : sigma_(0.0), cfg_(cfg), state_(std::move(init)), rng_(seed) {
  const auto scale = target.isotropic_scale();
  if (!scale)
    throw Error(ErrorCode::NotGaussian, "cdf inversion needs an isotropic zero-mean Gaussian target");
  sigma_ = *scale;
  check_state(target, state_);
  draws_.resize(static_cast<std::size_t>(target.dim()));
}

IcdfSwitch IcdfSampler::step() {
  for (double& r : draws_) r = rng_.exponential();
  const IcdfSwitch sw = icdf_switch_time_gaussian(state_, draws_, sigma_, cfg_.gamma);
  state_.x += sw.tau * state_.v;
  state_.t += sw.tau;
  state_.v[sw.index] = -state_.v[sw.index];
  ++counters_.switches;
  return sw;
}

Trajectory icdf_run(const Target& target, const RateConfig& cfg, const ZigZagState& init,
                    std::size_t n_switches, std::uint64_t seed) {
  IcdfSampler sampler(target, cfg, init, seed);
  Trajectory traj;
  traj.skeleton.reserve(n_switches + 1);
  traj.record(sampler.state());
  for (std::size_t k = 0; k < n_switches; ++k) {
    sampler.step();
    traj.record(sampler.state());
  }
  traj.counters = sampler.counters();
  return traj;
}

// ---------------------------------------------------------------------------
// ZZCV

double linear_bound_time(double A, double B, double R) {
  require(A >= 0.0 && B >= 0.0, ErrorCode::InvalidArgument, "bound coefficients must be >= 0");
  require(A > 0.0 || B > 0.0, ErrorCode::ZeroTotalRate, "linear bound is identically zero");
  if (B == 0.0) return R / A;
  return 2.0 * R / (A + std::sqrt(A * A + 2.0 * B * R));
}

namespace {

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

ZzcvProposal zzcv_step(const LogisticAux& aux, const ZigZagState& state, double R, double u_index,
                       double u_accept, int j) {
  const int d = aux.dim();
  require(state.x.size() == d && state.v.size() == d, ErrorCode::DimensionMismatch,
          "state dimension does not match the logistic model");
  require(j >= 0 && j < aux.n_obs(), ErrorCode::InvalidArgument, "observation index out of range");

  const double dist = (state.x - aux.mle).norm();
  const double vnorm = state.v.norm();
  VectorXd a(d), b(d);
  for (int i = 0; i < d; ++i) {
    const double s = std::abs(state.v[i]);
    a[i] = s * (std::abs(aux.grad_at_mle[i]) + aux.lipschitz[i] * dist);
    b[i] = s * aux.lipschitz[i] * vnorm;
  }
  ZzcvProposal out;
  out.tau = linear_bound_time(a.sum(), b.sum(), R);
  const VectorXd bound_rates = a + out.tau * b;
  const int i = sample_switch_index(std::span<const double>(bound_rates.data(), bound_rates.size()), u_index);
  out.proposed = i;
  out.bound = bound_rates[i];

  // Control-variate estimate of dU/dx_i from observation j at x + tau v.
  const VectorXd x_new = state.x + out.tau * state.v;
  const auto row = aux.design.row(j);
  const double n = aux.n_obs();
  const double estimate = aux.grad_at_mle[i] +
                          n * row[i] * (sigmoid(row.dot(x_new)) - sigmoid(row.dot(aux.mle))) +
                          aux.prior_precision * (x_new[i] - aux.mle[i]);
  out.rate_estimate = std::max(0.0, state.v[i] * estimate);
  if (out.rate_estimate > out.bound + 1e-9)
    throw Error(ErrorCode::BoundViolated,
                "rate estimate " + std::to_string(out.rate_estimate) + " exceeds bound " +
                    std::to_string(out.bound) + " for coordinate " + std::to_string(i));
  out.accept = out.bound > 0.0 && u_accept * out.bound <= out.rate_estimate;
  if (out.accept) out.index = i;
  return out;
}

ZzcvSampler::ZzcvSampler(const LogisticAux& aux, ZigZagState init, std::uint64_t seed)
    : aux_(&aux), state_(std::move(init)), rng_(seed) {
  require(state_.x.size() == aux.dim() && state_.v.size() == aux.dim(),
          ErrorCode::DimensionMismatch, "state dimension does not match the logistic model");
}

ZzcvProposal ZzcvSampler::step() {
  const double R = rng_.exponential();
  const double u_index = rng_.uniform();
  const int j = static_cast<int>(rng_.index(static_cast<std::uint64_t>(aux_->n_obs())));
  const double u_accept = rng_.uniform();
  ZzcvProposal p = zzcv_step(*aux_, state_, R, u_index, u_accept, j);
  state_.x += p.tau * state_.v;
  state_.t += p.tau;
  ++counters_.proposals;
  ++counters_.grad_evals;
  if (p.accept) {
    state_.v[*p.index] = -state_.v[*p.index];
    ++counters_.switches;
  }
  return p;
}

Trajectory zzcv_run(const LogisticAux& aux, const ZigZagState& init, std::size_t n_proposals,
                    std::uint64_t seed) {
  ZzcvSampler sampler(aux, init, seed);
  Trajectory traj;
  traj.record(sampler.state());
  for (std::size_t k = 0; k < n_proposals; ++k)
    if (sampler.step().accept) traj.record(sampler.state());
  traj.counters = sampler.counters();
  return traj;
}

// ---------------------------------------------------------------------------

VectorXd velocity_tuning(const VectorXd& sigmas) {
  require(sigmas.size() > 0, ErrorCode::InvalidArgument, "empty sigma vector");
  for (double s : sigmas)
    require(s > 0.0 && std::isfinite(s), ErrorCode::NonPositiveSigma, "sigmas must be positive");
  const double d = static_cast<double>(sigmas.size());
  return sigmas * (std::sqrt(d) / sigmas.norm());
}

}  // namespace nuzz::pdmp
