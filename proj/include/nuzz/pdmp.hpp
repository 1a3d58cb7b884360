#pragma once

#include "nuzz/quadrature.hpp"
#include "nuzz/rng.hpp"
#include "nuzz/rootfind.hpp"
#include "nuzz/targets.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace nuzz::pdmp {

/// Uniform refreshment: every coordinate gets the same gamma, so the total
/// refreshment rate is Gamma = d * gamma.
struct RateConfig {
  double gamma = 0.0;

  double total(int dim) const noexcept { return gamma * dim; }
  static RateConfig from_total(double gamma_total, int dim);
};

/// Position, velocity and process clock. Velocities are v_i = +-s_i with
/// fixed per-coordinate speeds s_i; a switch flips one sign.
struct ZigZagState {
  VectorXd x;
  VectorXd v;
  double t = 0.0;
};

/// State at x0 moving with +speeds in every coordinate.
ZigZagState initial_state(VectorXd x0, const VectorXd& speeds);

struct Counters {
  std::size_t grad_evals = 0;
  std::size_t rate_evals = 0;
  std::size_t switches = 0;
  std::size_t brent_iters = 0;
  /// Thinning proposals (ZZCV only; accepted ones are also switches).
  std::size_t proposals = 0;
  std::size_t quad_failures = 0;
  std::size_t root_failures = 0;

  Counters& operator+=(const Counters& o) noexcept;
};

struct SkeletonPoint {
  double t;
  VectorXd x;
  VectorXd v;
};

/// Skeleton chain; the continuous path is x(t) = x_k + (t - T_k) v_k on
/// [T_k, T_{k+1}).
struct Trajectory {
  std::vector<SkeletonPoint> skeleton;
  Counters counters;

  int dim() const noexcept {
    return skeleton.empty() ? 0 : static_cast<int>(skeleton.front().x.size());
  }
  double start_time() const noexcept { return skeleton.empty() ? 0.0 : skeleton.front().t; }
  double end_time() const noexcept { return skeleton.empty() ? 0.0 : skeleton.back().t; }
  double total_time() const noexcept { return end_time() - start_time(); }
  void record(const ZigZagState& s) { skeleton.push_back({s.t, s.x, s.v}); }
};

/// CSV with header `t,x_1..x_d,v_1..v_d`, 17 significant digits.
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

// ---------------------------------------------------------------------------
// Rates

/// lambda_i = max(0, -v_i d_i log pi(x)) + gamma.
double component_rate(const Target& target, const RateConfig& cfg, const VectorXd& x,
                      const VectorXd& v, int i);
VectorXd component_rates(const Target& target, const RateConfig& cfg, const VectorXd& x,
                         const VectorXd& v);
/// Lambda = sum_i lambda_i >= Gamma.
double total_rate(const Target& target, const RateConfig& cfg, const VectorXd& x, const VectorXd& v);

/// Minimal l with sum_{i<=l} rates_i >= u * Lambda, located by bisection on
/// the cumulative sums. Returns a 0-based index.
int sample_switch_index(std::span<const double> rates, double u);
int sample_switch_index(const Target& target, const RateConfig& cfg, const VectorXd& x_at_tau,
                        const VectorXd& v, double u);

// ---------------------------------------------------------------------------
// Numerical switching time

inline constexpr double kDefaultTolerance = 1e-10;
inline constexpr double kDefaultGammaTotal = 1e-3;

struct SwitchTime {
  double tau = 0.0;
  /// Integral of the cached rate approximation over [0, tau]; equals
  /// R + root.g_at_root.
  double integrated_rate = 0.0;
  quad::QuadCache cache;
  root::RootResult root;
  root::Bracket bracket;
  Counters counters;
};

/// Solves int_0^tau Lambda(x + s v) ds = R by bracket growth plus Brent, with
/// every objective evaluation routed through one progressive QuadCache.
/// `t0` is the first bracket guess (callers pass the previous switching time).
SwitchTime nuzz_switch_time(const Target& target, const RateConfig& cfg, const ZigZagState& state,
                            double R, double eps_int = kDefaultTolerance,
                            double eps_bre = kDefaultTolerance, double t0 = 1.0);

enum class SwitchMode {
  /// One integral of the total rate, then a multinomial index draw.
  TotalRate,
  /// Reference path: one integral per coordinate, first arrival wins. Kept
  /// for equivalence testing only; costs d times more.
  PerCoordinateMin,
};

struct NuzzOptions {
  double eps_int = kDefaultTolerance;
  double eps_bre = kDefaultTolerance;
  SwitchMode mode = SwitchMode::TotalRate;
  /// Throw instead of counting when an inner tolerance is missed.
  bool strict = false;
};

struct NuzzEvent {
  double tau = 0.0;
  int index = -1;
  double R = 0.0;
  double integrated_rate = 0.0;
  Counters cost;
};

/// Event-by-event NuZZ driver. Each call to step() draws R ~ Exp(1), solves
/// for the switching time, moves, and flips one velocity component.
class NuzzSampler {
 public:
  NuzzSampler(Target target, RateConfig cfg, ZigZagState init, NuzzOptions options,
              std::uint64_t seed);

  NuzzEvent step();
  const ZigZagState& state() const noexcept { return state_; }
  const Counters& counters() const noexcept { return counters_; }
  const Target& target() const noexcept { return target_; }

 private:
  NuzzEvent step_total_rate();
  NuzzEvent step_per_coordinate();

  Target target_;
  RateConfig cfg_;
  ZigZagState state_;
  NuzzOptions options_;
  Rng rng_;
  Counters counters_;
  double warm_start_ = 1.0;
  std::size_t event_index_ = 0;
};

Trajectory nuzz_run(const Target& target, const RateConfig& cfg, const ZigZagState& init,
                    std::size_t n_switches, const NuzzOptions& options, std::uint64_t seed);

inline Trajectory nuzz_run(const Target& target, const RateConfig& cfg, const ZigZagState& init,
                           std::size_t n_switches, double eps_int, double eps_bre,
                           std::uint64_t seed) {
  return nuzz_run(target, cfg, init, n_switches, NuzzOptions{eps_int, eps_bre}, seed);
}

// ---------------------------------------------------------------------------
// Exact Zig-Zag for isotropic Gaussians

struct IcdfSwitch {
  double tau;
  int index;
};

/// Exact first-arrival time for N(0, sigma^2 I): coordinate i's integrated
/// rate gamma*t + int_0^t max(0, v_i (x_i + v_i s)) / sigma^2 ds is piecewise
/// quadratic and inverted in closed form against R[i].
IcdfSwitch icdf_switch_time_gaussian(const ZigZagState& state, std::span<const double> R,
                                     double sigma, double gamma = 0.0);

/// Closed-form tau for one coordinate (the building block above).
double icdf_coordinate_time(double x, double v, double R, double sigma, double gamma);

class IcdfSampler {
 public:
  IcdfSampler(const Target& target, RateConfig cfg, ZigZagState init, std::uint64_t seed);

  IcdfSwitch step();
  const ZigZagState& state() const noexcept { return state_; }
  const Counters& counters() const noexcept { return counters_; }

 private:
  double sigma_;
  RateConfig cfg_;
  ZigZagState state_;
  Rng rng_;
  Counters counters_;
  std::vector<double> draws_;
};

Trajectory icdf_run(const Target& target, const RateConfig& cfg, const ZigZagState& init,
                    std::size_t n_switches, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Zig-Zag with control variates (logistic regression)

struct ZzcvProposal {
  double tau = 0.0;
  bool accept = false;
  std::optional<int> index;
  /// Proposed coordinate (set even when rejected).
  int proposed = -1;
  double rate_estimate = 0.0;
  double bound = 0.0;
};

/// One thinning proposal. The linear bound is
///   a_i = s_i (|dU_i(x*)| + C_i |x - x*|_2),  b_i = s_i C_i |v|_2,
/// which for unit speeds is C_i |x - x*| and C_i sqrt(d) (the first term
/// vanishes at an exact mode). tau solves A tau + B tau^2 / 2 = R.
/// Throws BoundViolated if the observation-j rate estimate exceeds the bound.
ZzcvProposal zzcv_step(const LogisticAux& aux, const ZigZagState& state, double R, double u_index,
                       double u_accept, int j);

/// Closed-form positive root of A t + B t^2 / 2 = R.
double linear_bound_time(double A, double B, double R);

class ZzcvSampler {
 public:
  ZzcvSampler(const LogisticAux& aux, ZigZagState init, std::uint64_t seed);

  /// One proposal; the state always advances by tau.
  ZzcvProposal step();
  const ZigZagState& state() const noexcept { return state_; }
  const Counters& counters() const noexcept { return counters_; }

 private:
  const LogisticAux* aux_;
  ZigZagState state_;
  Rng rng_;
  Counters counters_;
};

/// Runs `n_proposals` thinning proposals. Only accepted switches enter the
/// skeleton since the velocity is unchanged across rejections; the path
/// ends at the last accepted switch.
Trajectory zzcv_run(const LogisticAux& aux, const ZigZagState& init, std::size_t n_proposals,
                    std::uint64_t seed);

// ---------------------------------------------------------------------------

/// s_i = sigma_i sqrt(d) / |sigma|_2, so |s|_2 = sqrt(d).
VectorXd velocity_tuning(const VectorXd& sigmas);

}  // namespace nuzz::pdmp
