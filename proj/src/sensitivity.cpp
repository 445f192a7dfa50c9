#include "mecor/sensitivity.hpp"

#include "mecor/errors.hpp"
#include "mecor/io.hpp"
#include "mecor/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mecor {

ErrorVarianceDistribution ErrorVarianceDistribution::uniform(double min, double max) {
  ErrorVarianceDistribution d;
  d.kind = Kind::uniform;
  d.min = min;
  d.max = max;
  d.validate();
  return d;
}

ErrorVarianceDistribution ErrorVarianceDistribution::triangular(double min, double mode, double max) {
  ErrorVarianceDistribution d;
  d.kind = Kind::triangular;
  d.min = min;
  d.mode = mode;
  d.max = max;
  d.validate();
  return d;
}

ErrorVarianceDistribution ErrorVarianceDistribution::trapezoidal(double min, double lower_mode,
                                                                 double upper_mode, double max) {
  ErrorVarianceDistribution d;
  d.kind = Kind::trapezoidal;
  d.min = min;
  d.lower_mode = lower_mode;
  d.upper_mode = upper_mode;
  d.max = max;
  d.validate();
  return d;
}

void ErrorVarianceDistribution::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(min) || !finite(max)) {
    throw ConfigError("distribution bounds must be finite");
  }
  if (min < 0.0) {
    throw ConfigError("tau2 distribution minimum must be nonnegative");
  }
  if (max < min) {
    throw ConfigError("tau2 distribution needs min <= max");
  }
  switch (kind) {
  case Kind::uniform:
    break;
  case Kind::triangular:
    if (!finite(mode) || mode < min || mode > max) {
      throw ConfigError("triangular distribution needs min <= mode <= max");
    }
    break;
  case Kind::trapezoidal:
    if (!finite(lower_mode) || !finite(upper_mode) || lower_mode < min || upper_mode < lower_mode ||
        max < upper_mode) {
      throw ConfigError("trapezoidal distribution needs min <= lower_mode <= upper_mode <= max");
    }
    break;
  }
}

double ErrorVarianceDistribution::cdf(double x) const {
  if (x < min) return 0.0;
  if (x >= max) return 1.0;
  const double a = min;
  const double b = max;
  switch (kind) {
  case Kind::uniform:
    return (x - a) / (b - a);
  case Kind::triangular: {
    const double c = mode;
    if (x <= c) return c > a ? (x - a) * (x - a) / ((b - a) * (c - a)) : 0.0;
    return 1.0 - (b - x) * (b - x) / ((b - a) * (b - c));
  }
  case Kind::trapezoidal: {
    const double c = lower_mode;
    const double d = upper_mode;
    const double h = 2.0 / ((b - a) + (d - c)); // height of the flat top
    if (x < c) return h * (x - a) * (x - a) / (2.0 * (c - a));
    if (x <= d) return h * (c - a) / 2.0 + h * (x - c);
    return 1.0 - h * (b - x) * (b - x) / (2.0 * (b - d));
  }
  }
  return 0.0;
}

double ErrorVarianceDistribution::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  const double a = min;
  const double b = max;
  if (b == a) return a;
  switch (kind) {
  case Kind::uniform:
    return a + u * (b - a);
  case Kind::triangular: {
    const double c = mode;
    const double split = (c - a) / (b - a);
    if (u < split) return a + std::sqrt(u * (b - a) * (c - a));
    return b - std::sqrt((1.0 - u) * (b - a) * (b - c));
  }
  case Kind::trapezoidal: {
    const double c = lower_mode;
    const double d = upper_mode;
    const double h = 2.0 / ((b - a) + (d - c));
    const double left = h * (c - a) / 2.0;  // mass of the rising ramp
    const double right = h * (b - d) / 2.0; // mass of the falling ramp
    if (u < left) return a + std::sqrt(2.0 * u * (c - a) / h);
    if (u <= 1.0 - right) return c + (u - left) / h;
    return b - std::sqrt(2.0 * (1.0 - u) * (b - d) / h);
  }
  }
  return a;
}

std::string_view to_string(ErrorVarianceDistribution::Kind kind) noexcept {
  switch (kind) {
  case ErrorVarianceDistribution::Kind::uniform:
    return "uniform";
  case ErrorVarianceDistribution::Kind::triangular:
    return "triangular";
  case ErrorVarianceDistribution::Kind::trapezoidal:
    return "trapezoidal";
  }
  return "?";
}

ErrorVarianceDistribution::Kind parse_distribution_kind(std::string_view text) {
  if (text == "uniform") return ErrorVarianceDistribution::Kind::uniform;
  if (text == "triangular") return ErrorVarianceDistribution::Kind::triangular;
  if (text == "trapezoidal") return ErrorVarianceDistribution::Kind::trapezoidal;
  throw ConfigError("unknown distribution '" + std::string(text) +
                    "' (expected uniform, triangular or trapezoidal)");
}

std::vector<double> sample_tau2(const ErrorVarianceDistribution& dist, std::size_t m,
                                std::uint64_t seed) {
  dist.validate();
  if (m < 1) {
    throw ConfigError("number of draws must be at least 1");
  }
  Engine rng = make_engine(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(m);
  for (auto& v : out) {
    v = dist.quantile(unif(rng));
  }
  return out;
}

std::uint64_t sensitivity_draw_seed(std::uint64_t seed, std::size_t draw) {
  return stream_seed(seed, {draw});
}

SensitivitySummary summarize(std::span<const SensitivityDraw> draws) {
  std::vector<double> est;
  for (const auto& d : draws) {
    if (d.status == SensitivityDraw::Status::ok && d.estimate) est.push_back(*d.estimate);
  }
  SensitivitySummary s;
  s.n_ok = est.size();
  if (est.empty()) return s;
  std::sort(est.begin(), est.end());
  s.min = est.front();
  s.max = est.back();
  s.median = quantile_sorted(est, 0.5);
  return s;
}

SensitivityResult run_sensitivity(const Dataset& data, const AnalysisSpec& spec,
                                  const ErrorVarianceDistribution& dist,
                                  const SensitivityConfig& cfg) {
  validate(spec, data);
  if (cfg.method == Method::uncorrected) {
    throw ConfigError("sensitivity analysis needs a correction method (rc or simex)");
  }
  if (cfg.method == Method::simex) cfg.simex.validate();
  if (cfg.ci) cfg.bootstrap.validate();

  SensitivityResult result;
  result.method = cfg.method;
  result.distribution = dist;
  const auto tau2s = sample_tau2(dist, cfg.draws, stream_seed(cfg.seed, {0xD157}));
  result.draws.resize(tau2s.size());

  parallel_for(tau2s.size(), cfg.threads, [&](std::size_t i) {
    SensitivityDraw& draw = result.draws[i];
    draw.tau2 = tau2s[i];
    const auto tau2 = ErrorVariance::external(tau2s[i]);
    const std::uint64_t seed = sensitivity_draw_seed(cfg.seed, i);
    SimexConfig simex = cfg.simex;
    simex.seed = seed;
    try {
      draw.estimate = correct(cfg.method, data, spec, tau2, simex).estimate;
      draw.status = SensitivityDraw::Status::ok;
    } catch (const InfeasibleCorrectionError&) {
      draw.status = SensitivityDraw::Status::infeasible;
      return;
    }
    if (cfg.ci) {
      BootstrapConfig boot = cfg.bootstrap;
      boot.seed = stream_seed(seed, {1});
      boot.threads = 1;
      try {
        draw.ci = bootstrap_ci(data, spec, cfg.method, tau2, simex, boot).ci;
      } catch (const BootstrapError&) {
        draw.ci.reset();
      }
    }
  });

  result.summary = summarize(result.draws);
  if (result.summary.n_ok == 0) {
    throw InfeasibleCorrectionError(*std::min_element(tau2s.begin(), tau2s.end()),
                                    residual_variance_of(covariate_matrix(data, spec.covariates),
                                                         data.column(spec.exposure())));
  }
  return result;
}

std::filesystem::path emit_plot_data(const SensitivityResult& result,
                                     const std::filesystem::path& csv_path) {
  if (result.draws.empty()) {
    throw ConfigError("sensitivity result has no draws");
  }
  std::vector<std::size_t> order(result.draws.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.draws[a].tau2 < result.draws[b].tau2;
  });

  std::ostringstream csv;
  csv << "tau2,estimate,ci_lower,ci_upper,status\n";
  for (std::size_t i : order) {
    const auto& d = result.draws[i];
    const bool ok = d.status == SensitivityDraw::Status::ok;
    csv << format_double(d.tau2) << ',';
    csv << (ok && d.estimate ? format_double(*d.estimate) : "") << ',';
    csv << (ok && d.ci ? format_double(d.ci->lower) : "") << ',';
    csv << (ok && d.ci ? format_double(d.ci->upper) : "") << ',';
    csv << (ok ? "ok" : "infeasible") << '\n';
  }

  const auto& dist = result.distribution;
  nlohmann::ordered_json params;
  params["kind"] = std::string(to_string(dist.kind));
  params["min"] = dist.min;
  if (dist.kind == ErrorVarianceDistribution::Kind::triangular) params["mode"] = dist.mode;
  if (dist.kind == ErrorVarianceDistribution::Kind::trapezoidal) {
    params["lower_mode"] = dist.lower_mode;
    params["upper_mode"] = dist.upper_mode;
  }
  params["max"] = dist.max;

  nlohmann::ordered_json summary;
  summary["method"] = std::string(to_string(result.method));
  summary["m"] = result.draws.size();
  summary["n_ok"] = result.summary.n_ok;
  summary["n_infeasible"] = result.draws.size() - result.summary.n_ok;
  summary["distribution"] = params;
  summary["median"] = result.summary.median;
  summary["min"] = result.summary.min;
  summary["max"] = result.summary.max;

  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  if (json_path == csv_path) json_path += ".summary.json";

  write_file_atomic(csv_path, csv.str());
  write_file_atomic(json_path, summary.dump(2) + "\n");
  return json_path;
}

} // namespace mecor
