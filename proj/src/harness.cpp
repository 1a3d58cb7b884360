#include "nuzz/harness.hpp"

#include "nuzz/error.hpp"
#include "nuzz/rng.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

namespace nuzz::harness {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::ConfigError, field + ": " + msg);
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& field, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    config_error(field, "expected a finite number, got '" + raw + "'");
  return v;
}

std::uint64_t parse_count(const std::string& field, const std::string& raw) {
  // Accepts integers and integral scientific notation such as 1e5.
  const double v = parse_double(field, raw);
  if (v < 0.0 || v != std::floor(v) || v > 9.0e18)
    config_error(field, "expected a non-negative integer, got '" + raw + "'");
  return static_cast<std::uint64_t>(v);
}

std::vector<double> parse_list(const std::string& field, const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(parse_double(field, item));
  return out;
}

std::vector<std::string> parse_names(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!(item = trim(item)).empty()) out.push_back(item);
  return out;
}

bool parse_bool(const std::string& field, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  config_error(field, "expected true or false, got '" + raw + "'");
}

SamplerKind parse_kind(const std::string& field, const std::string& raw) {
  static const std::pair<const char*, SamplerKind> kinds[] = {
      {"nuzz", SamplerKind::Nuzz}, {"icdf", SamplerKind::Icdf}, {"zzcv", SamplerKind::Zzcv},
      {"rwm", SamplerKind::Rwm},   {"mala", SamplerKind::Mala}, {"hmc", SamplerKind::Hmc},
      {"direct", SamplerKind::Direct},
  };
  for (const auto& [name, kind] : kinds)
    if (trim(raw) == name) return kind;
  config_error(field, "unknown sampler kind '" + raw + "'");
}

const std::vector<std::string>& known_families() {
  static const std::vector<std::string> names = {"std_normal",   "diag_normal",       "corr_normal",
                                                 "student_t1",   "hybrid_rosenbrock", "logistic",
                                                 "gauss_lin_reg"};
  return names;
}

baselines::Algorithm to_algorithm(SamplerKind k) {
  switch (k) {
    case SamplerKind::Rwm:
      return baselines::Algorithm::Rwm;
    case SamplerKind::Mala:
      return baselines::Algorithm::Mala;
    default:
      return baselines::Algorithm::Hmc;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view kind_name(SamplerKind kind) noexcept {
  switch (kind) {
    case SamplerKind::Nuzz: return "nuzz";
    case SamplerKind::Icdf: return "icdf";
    case SamplerKind::Zzcv: return "zzcv";
    case SamplerKind::Rwm: return "rwm";
    case SamplerKind::Mala: return "mala";
    case SamplerKind::Hmc: return "hmc";
    case SamplerKind::Direct: return "direct";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Config

baselines::MetropolisConfig default_tuning(const std::string& family, SamplerKind kind, int dim) {
  // Acceptance targets of roughly 25% (RWM) and 50% (MALA); HMC uses the
  // usual step / leapfrog pairs.
  baselines::MetropolisConfig c;
  const bool gaussian = family == "std_normal" || family == "diag_normal" ||
                        family == "corr_normal" || family == "gauss_lin_reg";
  const double ratio = 10.0 / std::max(dim, 1);
  if (family == "student_t1") {
    c.step_size = kind == SamplerKind::Hmc ? 0.3 : 1.0;
    c.leapfrog_steps = kind == SamplerKind::Hmc ? 20 : 1;
  } else if (family == "hybrid_rosenbrock") {
    c.step_size = kind == SamplerKind::Rwm ? 0.07 : kind == SamplerKind::Mala ? 0.09 : 0.03;
    c.leapfrog_steps = kind == SamplerKind::Hmc ? 20 : 1;
  } else if (gaussian) {
    // Whitened by the covariance, every Gaussian looks standard normal.
    c.step_size = kind == SamplerKind::Rwm    ? 0.75 * std::sqrt(ratio)
                  : kind == SamplerKind::Mala ? 1.2 * std::pow(ratio, 1.0 / 6.0)
                  : dim >= 100                ? 0.73
                                              : 0.6;
    c.leapfrog_steps = kind == SamplerKind::Hmc ? 3 : 1;
  } else {
    c.step_size = kind == SamplerKind::Rwm ? 0.1 : 0.05;
    c.leapfrog_steps = kind == SamplerKind::Hmc ? 10 : 1;
  }
  return c;
}

std::string config_reference() {
  return R"([experiment]
  name            label used in summary files (default experiment)
  samplers        comma-separated sampler names; default: every [sampler.*] section
  epoch_budget    epochs per run (default 1e5)
  n_repeats       seeded repeats per sampler (default 8)
  n_subsamples    samples fed to the KS protocol (default 1e5)
  n_batches       prefixes in the convergence curve (default 40)
  seed            base seed (default 1)
  output_dir      output directory (default out)
  tolerance_sweep comma-separated eps_bre values for `sweep`
  sweep_sampler   sampler swept by `sweep` (default: first nuzz sampler)
  write_traces    also write trajectory / chain CSVs (default false)
[target]
  family          std_normal | diag_normal | corr_normal | student_t1 |
                  hybrid_rosenbrock | logistic | gauss_lin_reg
  dim             dimension (default 10)
  alpha           corr_normal correlation (default 0.9)
  sigmas          diag_normal standard deviations (default 1,2,...,dim)
  a, b            hybrid_rosenbrock parameters (default 2.5, 50)
  csv             data file for logistic (last column 0/1) or gauss_lin_reg
  noise_sigma     gauss_lin_reg noise level (default 1)
  prior_precision logistic Gaussian prior precision (default 0)
  synthetic_obs   logistic: simulate this many observations instead of csv
  reference_samples  direct draws behind the hybrid_rosenbrock ecdfs (default 1e7)
  reference_csv   CSV of reference draws; registers one ecdf per column
  init            starting point, one value or dim values
[sampler.<name>]
  kind            nuzz | icdf | zzcv | rwm | mala | hmc | direct (default: <name>)
  gamma_total     total refreshment rate (default 0.001)
  eps_int         quadrature tolerance (default 1e-10)
  eps_bre         root-finding tolerance (default 1e-10)
  velocity        tuned | unit (default tuned)
  accounting      root | epoch (default root)
  step_size       Metropolis / leapfrog step (default: per-family tuning)
  leapfrog_steps  HMC steps per iteration
  precond         covariance | identity (default covariance when known)
)";
}

namespace {

void parse_target(const pt::ptree& sec, TargetSpec& t) {
  for (const auto& [key, node] : sec) {
    const std::string field = "target." + key;
    const std::string v = node.get_value<std::string>();
    if (key == "family") {
      t.family = trim(v);
      if (std::find(known_families().begin(), known_families().end(), t.family) == known_families().end())
        config_error(field, "unknown family '" + v + "'");
    } else if (key == "dim") {
      t.dim = static_cast<int>(parse_count(field, v));
    } else if (key == "alpha") {
      t.alpha = parse_double(field, v);
    } else if (key == "sigmas") {
      t.sigmas = parse_list(field, v);
    } else if (key == "a") {
      t.a = parse_double(field, v);
    } else if (key == "b") {
      t.b = parse_double(field, v);
    } else if (key == "csv") {
      t.csv = trim(v);
    } else if (key == "noise_sigma") {
      t.noise_sigma = parse_double(field, v);
    } else if (key == "prior_precision") {
      t.prior_precision = parse_double(field, v);
    } else if (key == "synthetic_obs") {
      t.synthetic_obs = parse_count(field, v);
    } else if (key == "reference_samples") {
      t.reference_samples = parse_count(field, v);
    } else if (key == "reference_csv") {
      t.reference_csv = trim(v);
    } else if (key == "init") {
      t.init = parse_list(field, v);
    } else {
      config_error(field, "unknown key");
    }
  }
}

SamplerSpec parse_sampler(const std::string& name, const pt::ptree& sec, const TargetSpec& target) {
  SamplerSpec s;
  s.name = name;
  const std::string prefix = "sampler." + name + ".";
  const auto kind_node = sec.get_optional<std::string>("kind");
  s.kind = parse_kind(prefix + "kind", kind_node ? *kind_node : name);
  s.mcmc = default_tuning(target.family, s.kind, target.dim);
  for (const auto& [key, node] : sec) {
    const std::string field = prefix + key;
    const std::string v = node.get_value<std::string>();
    if (key == "kind") continue;
    if (key == "gamma_total") {
      s.gamma_total = parse_double(field, v);
    } else if (key == "eps_int") {
      s.eps_int = parse_double(field, v);
    } else if (key == "eps_bre") {
      s.eps_bre = parse_double(field, v);
    } else if (key == "velocity") {
      if (trim(v) != "tuned" && trim(v) != "unit") config_error(field, "expected tuned or unit");
      s.tuned_velocity = trim(v) == "tuned";
    } else if (key == "accounting") {
      if (trim(v) != "root" && trim(v) != "epoch") config_error(field, "expected root or epoch");
      s.accounting = trim(v) == "root" ? Accounting::Root : Accounting::Epoch;
    } else if (key == "step_size") {
      s.mcmc.step_size = parse_double(field, v);
    } else if (key == "leapfrog_steps") {
      s.mcmc.leapfrog_steps = static_cast<int>(parse_count(field, v));
    } else if (key == "precond") {
      if (trim(v) != "covariance" && trim(v) != "identity")
        config_error(field, "expected covariance or identity");
      s.use_covariance = trim(v) == "covariance";
    } else {
      config_error(field, "unknown key");
    }
  }
  return s;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  // read_ini drops sections without keys, so the headers are listed separately.
  std::vector<std::string> headers;
  {
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      line = trim(line);
      if (line.size() >= 2 && line.front() == '[' && line.back() == ']') headers.push_back(trim(line.substr(1, line.size() - 2)));
    }
  }
  pt::ptree tree;
  try {
    std::istringstream body(text);
    pt::read_ini(body, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }

  ExperimentConfig cfg;
  std::vector<std::string> requested;
  if (const auto t = tree.get_child_optional("target")) parse_target(*t, cfg.target);
  std::vector<SamplerSpec> declared;
  const pt::ptree no_keys;
  for (const std::string& section : headers) {
    const auto found = tree.get_child_optional(pt::ptree::path_type(section, '\0'));
    const pt::ptree& node = found ? *found : no_keys;
    if (section == "experiment") {
      for (const auto& [key, value] : node) {
        const std::string field = "experiment." + key;
        const std::string v = value.get_value<std::string>();
        if (key == "name") cfg.name = trim(v);
        else if (key == "samplers") requested = parse_names(v);
        else if (key == "epoch_budget") cfg.epoch_budget = parse_double(field, v);
        else if (key == "n_repeats") cfg.n_repeats = parse_count(field, v);
        else if (key == "n_subsamples") cfg.n_subsamples = parse_count(field, v);
        else if (key == "n_batches") cfg.n_batches = parse_count(field, v);
        else if (key == "seed") cfg.seed = parse_count(field, v);
        else if (key == "output_dir") cfg.output_dir = trim(v);
        else if (key == "tolerance_sweep") cfg.tolerance_sweep = parse_list(field, v);
        else if (key == "sweep_sampler") cfg.sweep_sampler = trim(v);
        else if (key == "write_traces") cfg.write_traces = parse_bool(field, v);
        else config_error(field, "unknown key");
      }
    } else if (section == "target") {
      continue;
    } else if (section.rfind("sampler.", 0) == 0 && section.size() > 8) {
      declared.push_back(parse_sampler(section.substr(8), node, cfg.target));
    } else {
      config_error(section, "unknown section");
    }
  }

  if (requested.empty()) {
    cfg.samplers = declared;
  } else {
    for (const std::string& name : requested) {
      auto it = std::find_if(declared.begin(), declared.end(),
                             [&](const SamplerSpec& s) { return s.name == name; });
      if (it != declared.end()) {
        cfg.samplers.push_back(*it);
      } else {
        // A bare kind name needs no section.
        SamplerSpec s;
        s.name = name;
        s.kind = parse_kind("experiment.samplers", name);
        s.mcmc = default_tuning(cfg.target.family, s.kind, cfg.target.dim);
        cfg.samplers.push_back(s);
      }
    }
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "config: cannot open " + path.string());
  ExperimentConfig cfg = parse_config(in);
  // Relative data paths are resolved against the config file.
  const fs::path base = path.parent_path();
  if (!cfg.target.csv.empty() && cfg.target.csv.is_relative()) cfg.target.csv = base / cfg.target.csv;
  if (!cfg.target.reference_csv.empty() && cfg.target.reference_csv.is_relative())
    cfg.target.reference_csv = base / cfg.target.reference_csv;
  return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.samplers.empty()) config_error("experiment.samplers", "no samplers configured");
  if (!(cfg.epoch_budget >= 1.0)) config_error("experiment.epoch_budget", "must be >= 1");
  if (cfg.n_repeats < 1) config_error("experiment.n_repeats", "must be >= 1");
  if (cfg.n_subsamples < 1) config_error("experiment.n_subsamples", "must be >= 1");
  if (cfg.n_batches < 1) config_error("experiment.n_batches", "must be >= 1");
  if (cfg.n_subsamples < cfg.n_batches)
    config_error("experiment.n_subsamples", "must be at least n_batches");
  for (double e : cfg.tolerance_sweep)
    if (!(e > 0.0)) config_error("experiment.tolerance_sweep", "all tolerances must be > 0");
  const TargetSpec& t = cfg.target;
  if (t.dim < 1) config_error("target.dim", "must be >= 1");
  if (t.family == "diag_normal" && !t.sigmas.empty() && static_cast<int>(t.sigmas.size()) != t.dim)
    config_error("target.sigmas", "need exactly dim values");
  for (double s : t.sigmas)
    if (!(s > 0.0)) config_error("target.sigmas", "must be positive");
  if (t.family == "corr_normal" && !(std::abs(t.alpha) < 1.0)) config_error("target.alpha", "need |alpha| < 1");
  if (t.family == "hybrid_rosenbrock" && !(t.a > 0.0 && t.b > 0.0))
    config_error("target.a", "a and b must be positive");
  if (t.family == "gauss_lin_reg" && t.csv.empty()) config_error("target.csv", "required for gauss_lin_reg");
  if (t.family == "gauss_lin_reg" && !(t.noise_sigma > 0.0)) config_error("target.noise_sigma", "must be positive");
  if (t.family == "logistic" && t.csv.empty() && t.synthetic_obs == 0)
    config_error("target.csv", "logistic needs csv or synthetic_obs");
  if (t.prior_precision < 0.0) config_error("target.prior_precision", "must be >= 0");
  if (!t.init.empty() && t.init.size() != 1 && static_cast<int>(t.init.size()) != t.dim)
    config_error("target.init", "need one value or dim values");
  for (std::size_t i = 0; i < cfg.samplers.size(); ++i) {
    const SamplerSpec& s = cfg.samplers[i];
    const std::string prefix = "sampler." + s.name + ".";
    for (std::size_t j = 0; j < i; ++j)
      if (cfg.samplers[j].name == s.name) config_error("experiment.samplers", "duplicate sampler " + s.name);
    if (!(s.gamma_total >= 0.0)) config_error(prefix + "gamma_total", "must be >= 0");
    if (!(s.eps_int > 0.0)) config_error(prefix + "eps_int", "must be > 0");
    if (!(s.eps_bre > 0.0)) config_error(prefix + "eps_bre", "must be > 0");
    if (!(s.mcmc.step_size > 0.0)) config_error(prefix + "step_size", "must be > 0");
    if (s.mcmc.leapfrog_steps < 1) config_error(prefix + "leapfrog_steps", "must be >= 1");
    if (s.kind == SamplerKind::Zzcv && t.family != "logistic")
      config_error(prefix + "kind", "zzcv needs the logistic family");
    if (s.kind == SamplerKind::Icdf && t.family != "std_normal" &&
        !(t.family == "diag_normal" && !t.sigmas.empty() &&
          std::all_of(t.sigmas.begin(), t.sigmas.end(), [&](double v) { return v == t.sigmas[0]; })))
      config_error(prefix + "kind", "icdf needs an isotropic Gaussian target");
  }
}

// ---------------------------------------------------------------------------
// Targets and samplers

std::pair<MatrixXd, VectorXd> synthetic_logistic(std::size_t n_obs, int dim, std::uint64_t seed) {
  if (n_obs == 0 || dim < 1) throw Error(ErrorCode::InvalidArgument, "need n_obs >= 1 and dim >= 1");
  Rng rng(seed);
  MatrixXd X(static_cast<Eigen::Index>(n_obs), dim);
  VectorXd beta(dim);
  for (int i = 0; i < dim; ++i) beta[i] = (i % 2 == 0 ? 0.5 : -0.5);
  VectorXd y(static_cast<Eigen::Index>(n_obs));
  for (Eigen::Index j = 0; j < X.rows(); ++j) {
    X(j, 0) = 1.0;
    for (int i = 1; i < dim; ++i) X(j, i) = rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-X.row(j).dot(beta)));
    y[j] = rng.uniform() < p ? 1.0 : 0.0;
  }
  return {X, y};
}

BuiltTarget build_target(const TargetSpec& spec, std::uint64_t seed) {
  const int d = spec.dim;
  std::optional<Target> target;
  std::optional<LogisticAux> aux;
  if (spec.family == "std_normal") {
    target = Target::std_normal(d);
  } else if (spec.family == "diag_normal") {
    VectorXd sig(d);
    for (int i = 0; i < d; ++i) sig[i] = spec.sigmas.empty() ? i + 1.0 : spec.sigmas[static_cast<std::size_t>(i)];
    target = Target::diag_normal(sig);
  } else if (spec.family == "corr_normal") {
    target = Target::linear_correlation_normal(d, spec.alpha);
  } else if (spec.family == "student_t1") {
    target = Target::student_t1(d);
  } else if (spec.family == "hybrid_rosenbrock") {
    target = with_rosenbrock_reference(Target::hybrid_rosenbrock(d, spec.a, spec.b), spec.reference_samples,
                                       derive_seed(seed, "reference", 0));
  } else if (spec.family == "gauss_lin_reg") {
    target = load_regression_target(spec.csv, spec.noise_sigma);
  } else if (spec.family == "logistic") {
    MatrixXd X;
    VectorXd y;
    if (!spec.csv.empty()) {
      const MatrixXd data = read_numeric_csv(spec.csv);
      if (data.cols() < 2) throw Error(ErrorCode::ParseError, "logistic csv needs covariates and a label column");
      X = data.leftCols(data.cols() - 1);
      y = data.col(data.cols() - 1);
    } else {
      std::tie(X, y) = synthetic_logistic(spec.synthetic_obs, d, derive_seed(seed, "data", 0));
    }
    LogisticFitOptions opt;
    opt.prior_precision = spec.prior_precision;
    opt.regularize_on_separation = true;
    aux = fit_logistic_aux(X, y, opt);
    target = aux->target();
  } else {
    throw Error(ErrorCode::UnsupportedFamily, "unknown family " + spec.family);
  }

  if (!spec.reference_csv.empty()) {
    const MatrixXd ref = read_numeric_csv(spec.reference_csv);
    if (ref.cols() != target->dim())
      throw Error(ErrorCode::DimensionMismatch, "reference_csv must have one column per coordinate");
    for (int i = 0; i < target->dim(); ++i) {
      std::vector<double> col(ref.col(i).data(), ref.col(i).data() + ref.rows());
      target = target->with_marginal_ecdf(i, std::make_shared<const Ecdf>(std::move(col)));
    }
  }

  BuiltTarget out{*target, VectorXd::Zero(target->dim()), aux};
  if (aux) out.init = aux->mle;
  else if (auto m = target->mean()) out.init = *m;
  if (spec.init.size() == 1) out.init.setConstant(spec.init[0]);
  else if (!spec.init.empty())
    out.init = Eigen::Map<const VectorXd>(spec.init.data(), static_cast<Eigen::Index>(spec.init.size()));
  if (out.init.size() != target->dim())
    throw Error(ErrorCode::DimensionMismatch, "init does not match the target dimension");
  return out;
}

namespace {

// Evenly spaced rows (half-step phase) when the chain is longer than n.
MatrixXd thin_rows(const MatrixXd& m, std::size_t n) {
  const auto rows = static_cast<std::size_t>(m.rows());
  if (rows <= n) return m;
  MatrixXd out(static_cast<Eigen::Index>(n), m.cols());
  for (std::size_t j = 0; j < n; ++j) {
    const auto k = static_cast<Eigen::Index>((static_cast<double>(j) + 0.5) * static_cast<double>(rows) / static_cast<double>(n));
    out.row(static_cast<Eigen::Index>(j)) = m.row(k);
  }
  return out;
}

VectorXd speeds_for(const Target& target, bool tuned) {
  if (tuned)
    if (auto sds = target.marginal_sds()) return pdmp::velocity_tuning(*sds);
  return VectorXd::Ones(target.dim());
}

}  // namespace

SamplerOutput run_sampler(const BuiltTarget& built, const SamplerSpec& spec, double epoch_budget,
                          std::size_t n_subsamples, std::uint64_t seed) {
  const Target& target = built.target;
  const int d = target.dim();
  SamplerOutput out;

  switch (spec.kind) {
    case SamplerKind::Nuzz: {
      const auto cfg = pdmp::RateConfig::from_total(spec.gamma_total, d);
      pdmp::NuzzOptions opt;
      opt.eps_int = spec.eps_int;
      opt.eps_bre = spec.eps_bre;
      pdmp::NuzzSampler s(target, cfg, pdmp::initial_state(built.init, speeds_for(target, spec.tuned_velocity)),
                          opt, seed);
      pdmp::Trajectory traj;
      traj.record(s.state());
      for (;;) {
        const pdmp::NuzzEvent ev = s.step();
        const double cost = spec.accounting == Accounting::Root ? 1.0 : static_cast<double>(ev.cost.grad_evals);
        if (out.epochs + cost > epoch_budget) break;
        out.epochs += cost;
        traj.record(s.state());
        traj.counters += ev.cost;
      }
      out.counters = traj.counters;
      out.samples = diag::subsample_trajectory(traj, n_subsamples);
      out.trajectory = std::move(traj);
      break;
    }
    case SamplerKind::Icdf: {
      const auto cfg = pdmp::RateConfig::from_total(spec.gamma_total, d);
      pdmp::IcdfSampler s(target, cfg, pdmp::initial_state(built.init, VectorXd::Ones(d)), seed);
      pdmp::Trajectory traj;
      traj.record(s.state());
      while (out.epochs + 1.0 <= epoch_budget) {
        s.step();
        out.epochs += 1.0;
        traj.record(s.state());
      }
      traj.counters = s.counters();
      out.counters = traj.counters;
      out.samples = diag::subsample_trajectory(traj, n_subsamples);
      out.trajectory = std::move(traj);
      break;
    }
    case SamplerKind::Zzcv: {
      if (!built.aux) throw Error(ErrorCode::UnsupportedFamily, "zzcv needs a logistic target");
      const double cost = 1.0 / built.aux->n_obs();
      pdmp::ZzcvSampler s(*built.aux, pdmp::initial_state(built.init, VectorXd::Ones(d)), seed);
      pdmp::Trajectory traj;
      traj.record(s.state());
      std::size_t proposals = 0;
      const auto max_proposals = static_cast<std::size_t>(std::floor(epoch_budget / cost + 1e-9));
      for (; proposals < max_proposals; ++proposals)
        if (s.step().accept) traj.record(s.state());
      out.epochs = static_cast<double>(proposals) * cost;
      traj.counters = s.counters();
      out.counters = traj.counters;
      out.accept_rate = proposals ? static_cast<double>(s.counters().switches) / static_cast<double>(proposals) : 0.0;
      out.samples = diag::subsample_trajectory(traj, n_subsamples);
      out.trajectory = std::move(traj);
      break;
    }
    case SamplerKind::Rwm:
    case SamplerKind::Mala:
    case SamplerKind::Hmc: {
      baselines::MetropolisConfig mc = spec.mcmc;
      if (spec.use_covariance) mc.precond = target.covariance();
      const auto algo = to_algorithm(spec.kind);
      const std::size_t iters = baselines::iterations_for_budget(algo, mc, epoch_budget);
      baselines::ChainResult r = baselines::run(algo, target, mc, built.init, iters, seed);
      out.epochs = r.epochs;
      out.accept_rate = r.accept_rate;
      out.samples = thin_rows(r.samples, n_subsamples);
      out.chain = std::move(r.samples);
      break;
    }
    case SamplerKind::Direct: {
      if (!target.has_direct_sampler()) throw Error(ErrorCode::UnsupportedFamily, "no direct sampler");
      const auto n = static_cast<std::size_t>(std::floor(epoch_budget));
      MatrixXd draws = target.direct_sample(seed, n);
      out.epochs = static_cast<double>(n);
      out.samples = thin_rows(draws, n_subsamples);
      out.chain = std::move(draws);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grids

namespace {

using Json = nlohmann::ordered_json;

template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& th : pool) th.join();
}

void check_reference(const Target& target) {
  for (int i = 0; i < target.dim(); ++i)
    if (!target.has_marginal(i))
      config_error("target.reference_csv",
                   std::string(family_name(target.family())) + " has no marginal cdf for coordinate " +
                       std::to_string(i + 1) + "; supply reference draws");
}

struct Logger {
  std::ostream* os;
  std::mutex mu;
  void operator()(const std::string& line) {
    if (!os) return;
    std::lock_guard lock(mu);
    *os << line << '\n';
  }
};

std::string convergence_csv(const CellOutcome& c) {
  std::string s = "algo,seed,prefix_batches,epochs,D\n";
  for (const diag::BatchPoint& b : c.report.batches)
    s += c.algo + ',' + std::to_string(c.seed) + ',' + std::to_string(b.prefix_batches) + ',' + fmt(b.epochs) +
         ',' + fmt(b.D) + '\n';
  return s;
}

void write_traces(const fs::path& dir, const std::string& stem, const SamplerOutput& out) {
  if (out.trajectory) {
    std::ofstream f(dir / (stem + "_trajectory.csv"), std::ios::binary);
    pdmp::write_trajectory_csv(*out.trajectory, f);
  }
  if (out.chain) {
    std::ofstream f(dir / (stem + "_samples.csv"), std::ios::binary);
    baselines::write_samples_csv(*out.chain, f);
  }
}

Json target_json(const ExperimentConfig& cfg) {
  Json t;
  t["family"] = cfg.target.family;
  t["dim"] = cfg.target.dim;
  return t;
}

Json failure_json(const CellOutcome& c) {
  Json f;
  f["algo"] = c.algo;
  f["repeat"] = c.repeat;
  f["seed"] = c.seed;
  if (c.eps_bre > 0.0) f["eps_bre"] = c.eps_bre;
  f["error"] = c.error;
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::ConfigError, "experiment.output_dir: cannot create " + dir.string());
}

}  // namespace

GridResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  validate_config(cfg);
  ensure_dir(cfg.output_dir);
  const BuiltTarget built = build_target(cfg.target, cfg.seed);
  check_reference(built.target);
  Logger log{opts.log, {}};

  const std::size_t n_cells = cfg.samplers.size() * cfg.n_repeats;
  std::vector<CellOutcome> cells(n_cells);
  parallel_for(n_cells, opts.jobs, [&](std::size_t idx) {
    const SamplerSpec& spec = cfg.samplers[idx / cfg.n_repeats];
    CellOutcome& c = cells[idx];
    c.algo = spec.name;
    c.repeat = idx % cfg.n_repeats;
    c.seed = derive_seed(cfg.seed, spec.name, c.repeat);
    const std::string stem = spec.name + "_r" + std::to_string(c.repeat);
    try {
      const SamplerOutput out = run_sampler(built, spec, cfg.epoch_budget, cfg.n_subsamples, c.seed);
      c.report = diag::batched_convergence(out.samples, built.target, cfg.n_batches, out.epochs);
      c.epochs = out.epochs;
      c.accept_rate = out.accept_rate;
      write_text(cfg.output_dir / (stem + ".csv"), convergence_csv(c));
      if (cfg.write_traces) write_traces(cfg.output_dir, stem, out);
      c.ok = true;
      log(stem + ": D = " + fmt(c.report.D) + ", epochs = " + fmt(c.epochs));
    } catch (const std::exception& e) {
      c.error = e.what();
      log(stem + ": failed: " + c.error);
    }
  });

  Json summary;
  summary["name"] = cfg.name;
  summary["target"] = target_json(cfg);
  summary["epoch_budget"] = cfg.epoch_budget;
  summary["n_repeats"] = cfg.n_repeats;
  summary["n_subsamples"] = cfg.n_subsamples;
  summary["n_batches"] = cfg.n_batches;
  summary["seed"] = cfg.seed;
  {
    double floor = 0.0;
    for (int i = 0; i < built.target.dim(); ++i)
      if (const Ecdf* e = built.target.marginal_ecdf(i)) floor = std::max(floor, e->dkw_floor());
    if (floor > 0.0) summary["reference_floor"] = floor;
  }
  Json samplers = Json::object();
  Json failures = Json::array();
  GridResult result;
  for (std::size_t s = 0; s < cfg.samplers.size(); ++s) {
    const SamplerSpec& spec = cfg.samplers[s];
    std::vector<std::vector<double>> curves, epochs;
    Json finals = Json::array(), accepts = Json::array(), seeds = Json::array();
    for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
      const CellOutcome& c = cells[s * cfg.n_repeats + r];
      if (!c.ok) {
        failures.push_back(failure_json(c));
        result.exit_code = 2;
        continue;
      }
      std::vector<double> curve, eps;
      for (const auto& b : c.report.batches) {
        curve.push_back(b.D);
        eps.push_back(b.epochs);
      }
      curves.push_back(curve);
      epochs.push_back(eps);
      finals.push_back(c.report.D);
      seeds.push_back(c.seed);
      if (c.accept_rate) accepts.push_back(*c.accept_rate);
    }
    Json j;
    j["kind"] = std::string(kind_name(spec.kind));
    j["repeats_ok"] = curves.size();
    j["seeds"] = seeds;
    j["final_D"] = finals;
    if (!accepts.empty()) j["accept_rate"] = accepts;
    if (!curves.empty()) {
      const diag::RepeatSummary d = diag::aggregate_repeats(curves);
      j["epochs"] = diag::aggregate_repeats(epochs).mean;
      j["D_mean"] = d.mean;
      j["D_lower"] = d.lower;
      j["D_upper"] = d.upper;
      j["D_median"] = d.median;
    }
    samplers[spec.name] = j;
  }
  summary["samplers"] = samplers;
  summary["failures"] = failures;
  write_text(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
  result.cells = std::move(cells);
  return result;
}

GridResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  validate_config(cfg);
  if (cfg.tolerance_sweep.empty()) config_error("experiment.tolerance_sweep", "required for sweep");
  const SamplerSpec* base = nullptr;
  for (const SamplerSpec& s : cfg.samplers)
    if (cfg.sweep_sampler.empty() ? s.kind == SamplerKind::Nuzz : s.name == cfg.sweep_sampler) {
      base = &s;
      break;
    }
  if (!base || base->kind != SamplerKind::Nuzz)
    config_error("experiment.sweep_sampler", "sweep needs a nuzz sampler");
  ensure_dir(cfg.output_dir);
  const BuiltTarget built = build_target(cfg.target, cfg.seed);
  check_reference(built.target);
  Logger log{opts.log, {}};

  const std::size_t n_eps = cfg.tolerance_sweep.size();
  const std::size_t n_cells = n_eps * cfg.n_repeats;
  std::vector<CellOutcome> cells(n_cells);
  parallel_for(n_cells, opts.jobs, [&](std::size_t idx) {
    CellOutcome& c = cells[idx];
    SamplerSpec spec = *base;
    spec.eps_bre = cfg.tolerance_sweep[idx / cfg.n_repeats];
    c.algo = spec.name;
    c.eps_bre = spec.eps_bre;
    c.repeat = idx % cfg.n_repeats;
    c.seed = derive_seed(cfg.seed, spec.name, c.repeat);
    try {
      const SamplerOutput out = run_sampler(built, spec, cfg.epoch_budget, cfg.n_subsamples, c.seed);
      c.report = diag::ks_statistic(out.samples, built.target);
      c.epochs = out.epochs;
      c.ok = true;
      log("eps_bre=" + fmt(c.eps_bre) + " r" + std::to_string(c.repeat) + ": D = " + fmt(c.report.D));
    } catch (const std::exception& e) {
      c.error = e.what();
      log("eps_bre=" + fmt(c.eps_bre) + " r" + std::to_string(c.repeat) + ": failed: " + c.error);
    }
  });

  GridResult result;
  std::string csv = "eps_bre,seed,D\n";
  Json rows = Json::array();
  Json failures = Json::array();
  for (std::size_t e = 0; e < n_eps; ++e) {
    std::vector<double> ds;
    for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
      const CellOutcome& c = cells[e * cfg.n_repeats + r];
      if (!c.ok) {
        failures.push_back(failure_json(c));
        result.exit_code = 2;
        continue;
      }
      csv += fmt(c.eps_bre) + ',' + std::to_string(c.seed) + ',' + fmt(c.report.D) + '\n';
      ds.push_back(c.report.D);
    }
    Json j;
    j["eps_bre"] = cfg.tolerance_sweep[e];
    j["repeats_ok"] = ds.size();
    if (!ds.empty()) {
      j["D_median"] = diag::percentile(ds, 0.5);
      j["D_lower"] = diag::percentile(ds, 0.025);
      j["D_upper"] = diag::percentile(ds, 0.975);
    }
    rows.push_back(j);
  }
  write_text(cfg.output_dir / "sweep.csv", csv);
  Json summary;
  summary["name"] = cfg.name;
  summary["target"] = target_json(cfg);
  summary["sampler"] = base->name;
  summary["epoch_budget"] = cfg.epoch_budget;
  summary["n_repeats"] = cfg.n_repeats;
  summary["seed"] = cfg.seed;
  summary["sweep"] = rows;
  summary["failures"] = failures;
  write_text(cfg.output_dir / "sweep_summary.json", summary.dump(2) + "\n");
  result.cells = std::move(cells);
  return result;
}

std::string describe_targets() {
  std::ostringstream os;
  os << "families (defaults):\n"
     << "  std_normal dim=10\n"
     << "  diag_normal dim=10 sigmas=1,2,...,10\n"
     << "  corr_normal dim=10 alpha=0.9\n"
     << "  student_t1 dim=10\n"
     << "  hybrid_rosenbrock a=2.5 b=50 dim=10\n"
     << "  logistic csv=<file> | synthetic_obs=<n>, prior_precision=0\n"
     << "  gauss_lin_reg csv=<file> noise_sigma=1\n"
     << "nuzz defaults: gamma_total=0.001 eps_int=1e-10 eps_bre=1e-10\n"
     << "samplers: nuzz icdf zzcv rwm mala hmc direct\n";
  return os.str();
}

}  // namespace nuzz::harness
