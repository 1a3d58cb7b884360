#include "nuzz/rootfind.hpp"

#include "nuzz/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace nuzz::root {

namespace {

double eval(const Objective& g, double t) {
  const double v = g(t);
  if (!std::isfinite(v))
    throw Error(ErrorCode::NonFiniteInput, "objective is not finite at t = " + std::to_string(t));
  return v;
}

}  // namespace

Bracket expand_bracket(const Objective& g, double t0, double growth) {
  if (!(t0 > 0.0) || !std::isfinite(t0))
    throw Error(ErrorCode::InvalidArgument, "bracket start must be positive and finite");
  if (!(growth > 1.0)) throw Error(ErrorCode::InvalidArgument, "growth factor must exceed 1");

  Bracket br{0.0, t0, eval(g, 0.0), 0.0};
  if (br.g_lo > 0.0) throw Error(ErrorCode::InvalidArgument, "expand_bracket requires g(0) <= 0");
  for (int step = 0; step <= kMaxBracketGrowths; ++step) {
    br.g_hi = eval(g, br.hi);
    if (br.g_hi >= 0.0) return br;
    if (step == kMaxBracketGrowths) break;
    br.lo = br.hi;
    br.g_lo = br.g_hi;
    br.hi *= growth;
    if (!std::isfinite(br.hi)) break;
  }
  throw Error(ErrorCode::BracketNotFound,
              "objective still negative at t = " + std::to_string(br.hi) + " after " +
                  std::to_string(kMaxBracketGrowths) + " growth steps");
}

RootResult brent(const Objective& g, const Bracket& bracket, double eps_bre, int max_iter,
                 std::vector<Bracket>* trace) {
  if (!(eps_bre > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps_bre must be positive");
  constexpr double kEps = std::numeric_limits<double>::epsilon();

  double a = bracket.lo, b = bracket.hi;
  double fa = bracket.g_lo, fb = bracket.g_hi;
  if ((fa > 0.0 && fb > 0.0) || (fa < 0.0 && fb < 0.0))
    throw Error(ErrorCode::InvalidArgument, "bracket endpoints have the same sign");

  RootResult out;
  if (std::abs(fa) <= eps_bre || std::abs(fb) <= eps_bre) {
    const bool use_a = std::abs(fa) < std::abs(fb);
    out.root = use_a ? a : b;
    out.g_at_root = use_a ? fa : fb;
    out.last_bracket_width = std::abs(b - a);
    out.converged = true;
    return out;
  }

  double c = b, fc = fb;
  double d = b - a, e = d;
  for (int iter = 1; iter <= max_iter; ++iter) {
    if ((fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    if (trace) trace->push_back(Bracket{std::min(b, c), std::max(b, c), b < c ? fb : fc, b < c ? fc : fb});

    const double tol1 = 2.0 * kEps * std::abs(b) + std::numeric_limits<double>::denorm_min();
    const double xm = 0.5 * (c - b);
    out.root = b;
    out.g_at_root = fb;
    out.iterations = iter - 1;
    out.last_bracket_width = std::abs(c - b);
    if (std::abs(fb) <= eps_bre) {
      out.converged = true;
      return out;
    }
    if (std::abs(xm) <= tol1) return out;  // bracket exhausted at machine precision

    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      // Interpolation: secant when only two distinct points, otherwise
      // inverse quadratic.
      const double s = fb / fa;
      double p, q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      const double min1 = 3.0 * xm * q - std::abs(tol1 * q);
      const double min2 = std::abs(e * q);
      if (2.0 * p < std::min(min1, min2)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : std::copysign(tol1, xm);
    fb = eval(g, b);
  }

  if ((fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0)) c = a;
  out.root = b;
  out.g_at_root = fb;
  out.iterations = max_iter;
  out.last_bracket_width = std::abs(c - b);
  out.converged = std::abs(fb) <= eps_bre;
  return out;
}

}  // namespace nuzz::root
