#pragma once

#include <functional>
#include <vector>

namespace nuzz::root {

using Objective = std::function<double(double)>;

/// Interval known to contain a root: g_lo <= 0 <= g_hi (or the reverse).
struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
  double g_lo = 0.0;
  double g_hi = 0.0;
};

struct RootResult {
  double root = 0.0;
  double g_at_root = 0.0;
  int iterations = 0;
  double last_bracket_width = 0.0;
  /// |g_at_root| <= eps was reached. When false the result is the best
  /// point found (iteration cap hit, or the bracket collapsed to adjacent
  /// doubles before the residual dropped below eps).
  bool converged = false;
};

inline constexpr int kMaxBracketGrowths = 200;

/// Geometric search for a sign change of an increasing-type objective with
/// g(0) < 0: starts from [0, t0] and replaces [lo, hi] by [hi, growth*hi]
/// while g(hi) < 0. Throws BracketNotFound after kMaxBracketGrowths steps.
Bracket expand_bracket(const Objective& g, double t0, double growth = 2.0);

/// Brent's method: inverse quadratic interpolation / secant steps guarded
/// by bisection. Stops on the residual |g(root)| <= eps_bre.
///
/// If `trace` is non-null the bracket [b, c] held after every iteration is
/// appended to it.
RootResult brent(const Objective& g, const Bracket& bracket, double eps_bre, int max_iter = 200,
                 std::vector<Bracket>* trace = nullptr);

}  // namespace nuzz::root
