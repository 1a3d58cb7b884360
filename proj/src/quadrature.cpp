#include "nuzz/quadrature.hpp"

#include "nuzz/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace nuzz::quad {

namespace {

// Kronrod abscissae on [-1, 1]; xgk[1], xgk[3], xgk[5], xgk[7] are the
// 7-point Gauss nodes.
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
};

constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
};

constexpr double kWg[4] = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
};

double checked(const Integrand& f, double x) {
  const double y = f(x);
  if (!std::isfinite(y)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "integrand is " << y << " at node x = " << x;
    throw Error(ErrorCode::NonFiniteIntegrand, msg.str());
  }
  return y;
}

// Nodes of the 15-point rule in ascending order on [-1, 1].
std::array<double, 15> ascending_nodes() {
  std::array<double, 15> x{};
  for (int j = 0; j < 7; ++j) {
    x[j] = -kXgk[j];
    x[14 - j] = kXgk[j];
  }
  x[7] = 0.0;
  return x;
}

// Null rules of degree 10..14 on the Kronrod nodes, each scaled to the
// Euclidean norm of the Kronrod-minus-Gauss weights, plus weights that
// extrapolate the degree-14 interpolant to the panel ends.
struct PanelRules {
  static constexpr int kNull = 5;
  std::array<std::array<double, 15>, kNull> null{};
  std::array<double, 15> kg{};
  std::array<double, 15> to_left{};
  std::array<double, 15> to_right{};
  double gap = 0.0;  // distance from the outer node to the panel end, unit half-width

  PanelRules() {
    const auto x = ascending_nodes();
    Eigen::Matrix<double, 15, 15> vt;
    for (int i = 0; i < 15; ++i)
      for (int k = 0; k < 15; ++k) vt(i, k) = std::pow(x[i], k);
    const Eigen::Matrix<double, 15, 15> q = vt.householderQr().householderQ();

    for (int j = 0; j < 7; ++j) kg[j] = kg[14 - j] = kWgk[j];
    kg[7] = kWgk[7] - kWg[3];
    for (int j = 0; j < 3; ++j) {
      kg[2 * j + 1] -= kWg[j];
      kg[13 - 2 * j] -= kWg[j];
    }
    double norm = 0.0;
    for (double v : kg) norm += v * v;
    norm = std::sqrt(norm);
    for (int r = 0; r < kNull; ++r)
      for (int i = 0; i < 15; ++i) null[r][i] = norm * q(i, 15 - kNull + r);

    // Barycentric weights of the interpolant through all 15 nodes.
    std::array<double, 15> bw{};
    for (int j = 0; j < 15; ++j) {
      bw[j] = 1.0;
      for (int k = 0; k < 15; ++k)
        if (k != j) bw[j] /= x[j] - x[k];
    }
    double sl = 0.0, sr = 0.0;
    for (int j = 0; j < 15; ++j) {
      to_left[j] = bw[j] / (-1.0 - x[j]);
      to_right[j] = bw[j] / (1.0 - x[j]);
      sl += to_left[j];
      sr += to_right[j];
    }
    for (int j = 0; j < 15; ++j) {
      to_left[j] /= sl;
      to_right[j] /= sr;
    }
    gap = 1.0 - x[14];
  }
};

const PanelRules& panel_rules() {
  static const PanelRules rules;
  return rules;
}

struct NodeSums {
  std::array<double, 15> y{};  // f at the ascending nodes
  double kronrod = 0.0;        // unit half-width sums
  double gauss = 0.0;
  double abs = 0.0;
  double asc = 0.0;
};

NodeSums evaluate_nodes(const Integrand& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  NodeSums s;
  const double fc = checked(f, center);
  s.y[7] = fc;
  s.gauss = fc * kWg[3];
  s.kronrod = fc * kWgk[7];
  s.abs = std::abs(s.kronrod);
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double f1 = checked(f, center - dx);
    const double f2 = checked(f, center + dx);
    s.y[j] = f1;
    s.y[14 - j] = f2;
    if (j % 2 == 1) s.gauss += kWg[j / 2] * (f1 + f2);
    s.kronrod += kWgk[j] * (f1 + f2);
    s.abs += kWgk[j] * (std::abs(f1) + std::abs(f2));
  }
  const double mean = 0.5 * s.kronrod;
  s.asc = kWgk[7] * std::abs(fc - mean);
  for (int j = 0; j < 7; ++j) s.asc += kWgk[j] * (std::abs(s.y[j] - mean) + std::abs(s.y[14 - j] - mean));
  return s;
}

double quadpack_error(const NodeSums& s) {
  double err = std::abs(s.kronrod - s.gauss);
  if (s.asc != 0.0 && err != 0.0) err = s.asc * std::min(1.0, std::pow(200.0 * err / s.asc, 1.5));
  return std::max(err, std::numeric_limits<double>::epsilon() * s.abs);
}

double dot15(const std::array<double, 15>& w, const std::array<double, 15>& y) {
  double acc = 0.0;
  for (int i = 0; i < 15; ++i) acc += w[i] * y[i];
  return acc;
}

// Error of one adaptive panel. The QUADPACK estimate is kept while the null
// rules decay with degree; otherwise the panel is not resolved and the largest
// raw null rule is used. Endpoint values catch a kink between the outer node
// and the panel end, which no null rule can see.
double panel_error(const NodeSums& s, double f_lo, double f_hi) {
  const PanelRules& r = panel_rules();
  std::array<double, PanelRules::kNull> n{};
  for (int k = 0; k < PanelRules::kNull; ++k) n[k] = std::abs(dot15(r.null[k], s.y));
  const double low = std::max(n[0], n[1]);
  const double high = std::max(n[3], n[4]);
  double err = quadpack_error(s);
  if (high > 0.02 * low) err = std::max({err, std::abs(s.kronrod - s.gauss), n[0], n[1], n[2], n[3], n[4]});
  const double gap_lo = std::abs(f_lo - dot15(r.to_left, s.y)) * r.gap;
  const double gap_hi = std::abs(f_hi - dot15(r.to_right, s.y)) * r.gap;
  return std::max({err, gap_lo, gap_hi});
}

}  // namespace

QuadResult gk_7_15(const Integrand& f, double a, double b) {
  if (!(a <= b)) throw Error(ErrorCode::InvalidArgument, "gk_7_15 requires a <= b");
  const double abs_half = std::abs(0.5 * (b - a));
  NodeSums s = evaluate_nodes(f, a, b);
  s.abs *= abs_half;
  s.asc *= abs_half;
  QuadResult out;
  out.value = s.kronrod * 0.5 * (b - a);
  s.kronrod *= abs_half;
  s.gauss *= abs_half;
  out.err_estimate = quadpack_error(s);
  out.evals = 15;
  out.intervals = 1;
  return out;
}

namespace {

// Adaptive bisection. `f_a` is f(a) if already known; f(b) is returned in
// `f_b` so a cache can pass it to the next extension.
AdaptiveResult adaptive_core(const Integrand& f, double a, double b, double tol, int max_subdivisions,
                             std::optional<double> f_a, double* f_b) {
  if (!(a <= b)) throw Error(ErrorCode::InvalidArgument, "adaptive_integrate requires a <= b");
  if (!(tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be positive");

  AdaptiveResult out;
  std::vector<Panel>& panels = out.panels;
  std::size_t evals = 0;

  if (a == b) {
    const QuadResult r = gk_7_15(f, a, b);
    panels.push_back(Panel{a, b, r.value, r.err_estimate});
    out.result = QuadResult{r.value, r.err_estimate, r.evals, 1, r.err_estimate <= tol};
    if (f_b) *f_b = f_a ? *f_a : checked(f, b);
    return out;
  }

  // Function values at panel ends, ends[k] = f(panels[k].a), plus f(b).
  std::vector<double> ends;
  auto make_panel = [&](double lo, double hi, double f_lo, double f_hi) {
    NodeSums s = evaluate_nodes(f, lo, hi);
    evals += 15;
    const double h = 0.5 * (hi - lo);
    const double value = s.kronrod * h;
    s.kronrod *= h;
    s.gauss *= h;
    s.abs *= h;
    s.asc *= h;
    for (double& v : s.y) v *= h;
    return Panel{lo, hi, value, panel_error(s, f_lo * h, f_hi * h)};
  };

  const double fa = f_a ? *f_a : (++evals, checked(f, a));
  const double fb = (++evals, checked(f, b));
  ends = {fa, fb};
  panels.push_back(make_panel(a, b, fa, fb));
  double err_sum = panels.front().err;
  bool converged = err_sum <= tol;

  for (int split = 0; !converged && split < max_subdivisions; ++split) {
    const auto worst = std::max_element(panels.begin(), panels.end(),
                                        [](const Panel& l, const Panel& r) { return l.err < r.err; });
    const auto k = static_cast<std::size_t>(worst - panels.begin());
    const double lo = worst->a;
    const double hi = worst->b;
    const double mid = 0.5 * (lo + hi);
    if (!(lo < mid && mid < hi)) break;  // no representable bisection point left
    const double f_mid = checked(f, mid);
    ++evals;
    const Panel left = make_panel(lo, mid, ends[k], f_mid);
    const Panel right = make_panel(mid, hi, f_mid, ends[k + 1]);
    panels[k] = left;
    panels.insert(panels.begin() + static_cast<std::ptrdiff_t>(k) + 1, right);
    ends.insert(ends.begin() + static_cast<std::ptrdiff_t>(k) + 1, f_mid);
    err_sum = 0.0;
    for (const Panel& p : panels) err_sum += p.err;
    converged = err_sum <= tol;
  }

  double value = 0.0;
  for (const Panel& p : panels) value += p.value;
  out.result = QuadResult{value, err_sum, evals, panels.size(), converged};
  if (f_b) *f_b = fb;
  return out;
}

}  // namespace

AdaptiveResult adaptive_integrate_panels(const Integrand& f, double a, double b, double tol,
                                         int max_subdivisions) {
  return adaptive_core(f, a, b, tol, max_subdivisions, std::nullopt, nullptr);
}

double QuadCache::extend(const Integrand& f, double t_new, double tol) {
  if (!(t_new >= 0.0) || !std::isfinite(t_new))
    throw Error(ErrorCode::InvalidArgument, "extend requires a finite t_new >= 0");
  const double front = frontier();
  if (t_new == front) {
    last_err_ = total_err_;
    return accumulated();
  }

  if (t_new > front) {
    double f_end = 0.0;
    AdaptiveResult r = adaptive_core(f, front, t_new, tol, kMaxSubdivisions, f_frontier_, &f_end);
    f_frontier_ = f_end;
    evals_ += r.result.evals;
    if (!r.result.converged) ++failures_;
    for (const Panel& p : r.panels) {
      panels_.push_back(p);
      prefix_.push_back(prefix_.back() + p.value);
    }
    total_err_ += r.result.err_estimate;
    last_err_ = total_err_;
    return accumulated();
  }

  // Below the frontier: first panel whose right end reaches t_new.
  const auto it = std::lower_bound(panels_.begin(), panels_.end(), t_new,
                                   [](const Panel& p, double t) { return p.b < t; });
  const auto k = static_cast<std::size_t>(it - panels_.begin());
  if (it->b == t_new) {
    last_err_ = 0.0;
    for (std::size_t j = 0; j <= k; ++j) last_err_ += panels_[j].err;
    return prefix_[k + 1];
  }
  if (t_new == it->a) {
    last_err_ = 0.0;
    for (std::size_t j = 0; j < k; ++j) last_err_ += panels_[j].err;
    return prefix_[k];
  }
  const QuadResult partial = adaptive_integrate(f, it->a, t_new, tol);
  evals_ += partial.evals;
  if (!partial.converged) ++failures_;
  last_err_ = partial.err_estimate;
  for (std::size_t j = 0; j < k; ++j) last_err_ += panels_[j].err;
  return prefix_[k] + partial.value;
}

void QuadCache::clear() {
  panels_.clear();
  prefix_.assign(1, 0.0);
  total_err_ = 0.0;
  last_err_ = 0.0;
  evals_ = 0;
  failures_ = 0;
  f_frontier_.reset();
}

}  // namespace nuzz::quad
