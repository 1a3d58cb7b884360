#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace nuzz::quad {

using Integrand = std::function<double(double)>;

struct QuadResult {
  double value = 0.0;
  double err_estimate = 0.0;
  std::size_t evals = 0;
  std::size_t intervals = 0;
  /// False when the error target was not met (subdivision cap or interval
  /// too small to bisect); `value` is then the best available estimate.
  bool converged = true;
};

/// One accepted subinterval of an adaptive integration.
struct Panel {
  double a = 0.0;
  double b = 0.0;
  double value = 0.0;
  double err = 0.0;
};

/// Single 7-point Gauss / 15-point Kronrod panel with the QUADPACK error
/// estimate. Throws NonFiniteIntegrand naming the offending node.
QuadResult gk_7_15(const Integrand& f, double a, double b);

inline constexpr int kMaxSubdivisions = 64;

struct AdaptiveResult {
  QuadResult result;
  /// Accepted panels, ordered by position, tiling [a, b].
  std::vector<Panel> panels;
};

/// Globally adaptive integration: bisect the panel with the largest error
/// estimate until the summed estimate is <= tol, at most `max_subdivisions`
/// bisections.
AdaptiveResult adaptive_integrate_panels(const Integrand& f, double a, double b, double tol,
                                         int max_subdivisions = kMaxSubdivisions);

inline QuadResult adaptive_integrate(const Integrand& f, double a, double b, double tol,
                                     int max_subdivisions = kMaxSubdivisions) {
  return adaptive_integrate_panels(f, a, b, tol, max_subdivisions).result;
}

/// Progressive integral of f over [0, t].
///
/// Extending past the frontier integrates only the new ground and appends
/// its panels. Queries below the frontier are answered from whole panels
/// plus a side integration of the single straddling panel; they leave the
/// cache untouched.
class QuadCache {
 public:
  double frontier() const noexcept { return panels_.empty() ? 0.0 : panels_.back().b; }
  double accumulated() const noexcept { return prefix_.back(); }
  double total_err() const noexcept { return total_err_; }
  const std::vector<Panel>& panels() const noexcept { return panels_; }

  /// Integrand evaluations made through this cache, side queries included.
  std::size_t evals() const noexcept { return evals_; }
  /// Number of adaptive integrations that missed their tolerance.
  std::size_t failures() const noexcept { return failures_; }
  /// Error estimate attached to the most recent returned value.
  double last_err() const noexcept { return last_err_; }

  /// Value of the integral over [0, t_new].
  double extend(const Integrand& f, double t_new, double tol);

  void clear();

 private:
  std::vector<Panel> panels_;
  std::vector<double> prefix_{0.0};  // prefix_[k] = sum of the first k panel values
  double total_err_ = 0.0;
  double last_err_ = 0.0;
  std::size_t evals_ = 0;
  std::size_t failures_ = 0;
  std::optional<double> f_frontier_;  // f at the frontier, reused by the next extension
};

}  // namespace nuzz::quad
