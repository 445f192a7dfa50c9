#include "mecor/mecorrect.hpp"

#include "mecor/errors.hpp"
#include "mecor/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace mecor {

namespace {

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

} // namespace

InfeasibleCorrectionError::InfeasibleCorrectionError(double tau2, double exposure_variance)
    : Error("infeasible correction: tau2 (" + format_g(tau2) +
            ") >= conditional exposure variance (" + format_g(exposure_variance) + ")"),
      tau2_(tau2), exposure_variance_(exposure_variance) {}

std::string_view to_string(Method m) noexcept {
  switch (m) {
  case Method::uncorrected:
    return "uncorrected";
  case Method::rc:
    return "rc";
  case Method::simex:
    return "simex";
  }
  return "?";
}

std::string_view to_string(Extrapolant e) noexcept {
  return e == Extrapolant::linear ? "linear" : "quadratic";
}

Method parse_method(std::string_view text) {
  if (text == "uncorrected") return Method::uncorrected;
  if (text == "rc") return Method::rc;
  if (text == "simex") return Method::simex;
  throw ConfigError("unknown method '" + std::string(text) + "' (expected uncorrected, rc or simex)");
}

Extrapolant parse_extrapolant(std::string_view text) {
  if (text == "linear") return Extrapolant::linear;
  if (text == "quadratic") return Extrapolant::quadratic;
  throw ConfigError("unknown extrapolant '" + std::string(text) + "' (expected linear or quadratic)");
}

ErrorVariance ErrorVariance::external(double tau2) {
  if (!(tau2 >= 0.0) || !std::isfinite(tau2)) {
    throw ConfigError("tau2 must be a finite nonnegative number");
  }
  return ErrorVariance{tau2, Source::external};
}

void SimexConfig::validate() const {
  if (lambda_grid.empty()) {
    throw ConfigError("lambda grid is empty");
  }
  if (std::find(lambda_grid.begin(), lambda_grid.end(), 0.0) == lambda_grid.end()) {
    throw ConfigError("lambda grid must contain 0");
  }
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] >= 0.0) || !std::isfinite(lambda_grid[i])) {
      throw ConfigError("lambda values must be finite and nonnegative");
    }
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) {
      throw ConfigError("lambda grid must be strictly increasing");
    }
  }
  if (n_sim < 1) {
    throw ConfigError("n_sim must be at least 1");
  }
}

void BootstrapConfig::validate() const {
  if (n_boot < 50) {
    throw ConfigError("n_boot must be at least 50");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw ConfigError("confidence level must lie in (0, 1)");
  }
}

ErrorVariance estimate_tau2_from_replicates(const Dataset& data, const AnalysisSpec& spec) {
  const std::size_t k = spec.replicate_count();
  if (k < 2) {
    throw ConfigError("estimating tau2 needs at least 2 replicate columns, got " + std::to_string(k));
  }
  std::vector<Eigen::Index> cols;
  for (const auto& name : spec.exposure_replicates) {
    cols.push_back(static_cast<Eigen::Index>(data.column_index(name)));
  }
  const auto& v = data.values();
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double mean = 0.0;
    for (auto c : cols) mean += v(i, c);
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (auto c : cols) ss += (v(i, c) - mean) * (v(i, c) - mean);
    total += ss / static_cast<double>(k - 1);
  }
  return ErrorVariance{total / static_cast<double>(v.rows()), ErrorVariance::Source::replicates};
}

FitResult fit_uncorrected(const Dataset& data, const AnalysisSpec& spec) {
  return ols_fit(design_matrix(data, spec.exposure(), spec.covariates), data.column(spec.outcome));
}

CorrectionResult correct_rc(const Dataset& data, const AnalysisSpec& spec, const ErrorVariance& tau2) {
  const FitResult naive = fit_uncorrected(data, spec);
  const double v = residual_variance_of(covariate_matrix(data, spec.covariates),
                                        data.column(spec.exposure()));
  if (!(v > tau2.tau2)) {
    throw InfeasibleCorrectionError(tau2.tau2, v);
  }
  CorrectionResult out;
  out.method = Method::rc;
  RcDiagnostics diag;
  diag.exposure_variance = v;
  diag.correction_factor = tau2.tau2 == 0.0 ? 1.0 : v / (v - tau2.tau2);
  out.estimate = naive.coefficients(1) * diag.correction_factor;
  out.diagnostics = diag;
  return out;
}

std::vector<SimexPoint> simex_estimates_per_lambda(const Dataset& data, const AnalysisSpec& spec,
                                                   const ErrorVariance& tau2,
                                                   const SimexConfig& cfg) {
  cfg.validate();
  if (!(tau2.tau2 >= 0.0)) {
    throw ConfigError("tau2 must be nonnegative");
  }
  const double naive = fit_uncorrected(data, spec).coefficients(1);

  std::vector<SimexPoint> points;
  points.reserve(cfg.lambda_grid.size());
  if (tau2.tau2 == 0.0) {
    for (double lambda : cfg.lambda_grid) {
      points.push_back({lambda, naive});
    }
    return points;
  }

  const PartialSlope slope(covariate_matrix(data, spec.covariates), data.column(spec.outcome));
  const Eigen::VectorXd exposure = data.column(spec.exposure());
  const Eigen::Index n = exposure.size();
  Eigen::VectorXd noisy(n);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t g = 0; g < cfg.lambda_grid.size(); ++g) {
    const double lambda = cfg.lambda_grid[g];
    if (lambda == 0.0) {
      points.push_back({lambda, naive});
      continue;
    }
    const double sd = std::sqrt(lambda * tau2.tau2);
    double sum = 0.0;
    for (std::size_t b = 0; b < cfg.n_sim; ++b) {
      Engine rng = make_engine(stream_seed(cfg.seed, {g, b}));
      normal.reset();
      for (Eigen::Index i = 0; i < n; ++i) {
        noisy(i) = exposure(i) + sd * normal(rng);
      }
      sum += slope.coefficient(noisy);
    }
    points.push_back({lambda, sum / static_cast<double>(cfg.n_sim)});
  }
  return points;
}

Extrapolation extrapolate(std::span<const SimexPoint> points, Extrapolant extrapolant) {
  const Eigen::Index degree = extrapolant == Extrapolant::linear ? 1 : 2;
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!std::isfinite(p.lambda) || !std::isfinite(p.estimate)) {
      throw ConfigError("extrapolation points must be finite");
    }
    distinct.insert(p.lambda);
  }
  if (static_cast<Eigen::Index>(points.size()) < degree + 1) {
    throw ConfigError("a " + std::string(to_string(extrapolant)) + " extrapolant needs at least " +
                      std::to_string(degree + 1) + " points");
  }
  if (static_cast<Eigen::Index>(distinct.size()) < degree + 1) {
    throw ConfigError("too few distinct lambda values for a " +
                      std::string(to_string(extrapolant)) + " extrapolant");
  }

  Extrapolation out;
  const bool flat = std::all_of(points.begin(), points.end(),
                                [&](const SimexPoint& p) { return p.estimate == points[0].estimate; });
  if (flat) {
    out.coefficients = Eigen::VectorXd::Zero(degree + 1);
    out.coefficients(0) = points[0].estimate;
    out.value_at_minus_one = points[0].estimate;
    return out;
  }

  const auto m = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd vander(m, degree + 1);
  Eigen::VectorXd est(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double l = points[static_cast<std::size_t>(i)].lambda;
    double pow = 1.0;
    for (Eigen::Index d = 0; d <= degree; ++d) {
      vander(i, d) = pow;
      pow *= l;
    }
    est(i) = points[static_cast<std::size_t>(i)].estimate;
  }
  out.coefficients = vander.colPivHouseholderQr().solve(est);
  double value = 0.0;
  double pow = 1.0;
  for (Eigen::Index d = 0; d <= degree; ++d) {
    value += out.coefficients(d) * pow;
    pow *= -1.0;
  }
  out.value_at_minus_one = value;
  return out;
}

CorrectionResult correct_simex(const Dataset& data, const AnalysisSpec& spec,
                               const ErrorVariance& tau2, const SimexConfig& cfg) {
  auto points = simex_estimates_per_lambda(data, spec, tau2, cfg);
  const Extrapolation fit = extrapolate(points, cfg.extrapolant);
  CorrectionResult out;
  out.method = Method::simex;
  out.estimate = fit.value_at_minus_one;
  out.diagnostics = SimexDiagnostics{std::move(points), fit.coefficients};
  return out;
}

CorrectionResult correct(Method method, const Dataset& data, const AnalysisSpec& spec,
                         const ErrorVariance& tau2, const SimexConfig& cfg) {
  switch (method) {
  case Method::rc:
    return correct_rc(data, spec, tau2);
  case Method::simex:
    return correct_simex(data, spec, tau2, cfg);
  case Method::uncorrected:
    break;
  }
  CorrectionResult out;
  out.method = Method::uncorrected;
  out.estimate = fit_uncorrected(data, spec).coefficients(1);
  return out;
}

double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) {
    throw ConfigError("quantile of an empty sample");
  }
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0 || sorted[lo] == sorted[hi]) {
    return sorted[lo];
  }
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap_ci(const Dataset& data, const AnalysisSpec& spec, Method corrector,
                             const ErrorVariance& tau2, const SimexConfig& cfg,
                             const BootstrapConfig& boot) {
  boot.validate();
  if (corrector == Method::simex) {
    cfg.validate();
  }
  const std::size_t n = data.n_rows();
  std::vector<double> estimates(boot.n_boot, 0.0);
  std::vector<char> ok(boot.n_boot, 0);

  parallel_for(boot.n_boot, boot.threads, [&](std::size_t b) {
    const std::uint64_t seed = stream_seed(boot.seed, {b});
    Engine rng = make_engine(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = pick(rng);
    try {
      const Dataset resampled = data.select_rows(rows);
      ErrorVariance t = tau2;
      if (tau2.source == ErrorVariance::Source::replicates) {
        t = estimate_tau2_from_replicates(resampled, spec);
      }
      SimexConfig c = cfg;
      c.seed = stream_seed(seed, {1});
      estimates[b] = correct(corrector, resampled, spec, t, c).estimate;
      ok[b] = 1;
    } catch (const Error&) {
      ok[b] = 0;
    }
  });

  BootstrapResult out;
  std::vector<double> good;
  good.reserve(boot.n_boot);
  for (std::size_t b = 0; b < boot.n_boot; ++b) {
    if (ok[b]) good.push_back(estimates[b]);
  }
  out.n_used = good.size();
  out.n_failed = boot.n_boot - good.size();
  if (static_cast<double>(out.n_failed) > boot.max_failure_fraction * static_cast<double>(boot.n_boot) ||
      good.empty()) {
    throw BootstrapError("bootstrap aborted: " + std::to_string(out.n_failed) + " of " +
                         std::to_string(boot.n_boot) + " replicates failed");
  }
  std::sort(good.begin(), good.end());
  const double alpha = 1.0 - boot.level;
  out.ci.lower = quantile_sorted(good, alpha / 2.0);
  out.ci.upper = quantile_sorted(good, 1.0 - alpha / 2.0);
  return out;
}

} // namespace mecor
