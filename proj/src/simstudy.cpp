#include "mecor/simstudy.hpp"

#include "mecor/errors.hpp"
#include "mecor/io.hpp"
#include "mecor/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mecor {

void ScenarioConfig::validate() const {
  if (!(tau2 >= 0.0) || !std::isfinite(tau2)) throw ConfigError(name + ": tau2 must be >= 0");
  if (n < 4) throw ConfigError(name + ": n must be at least 4");
  if (k < 2) throw ConfigError(name + ": k must be at least 2");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ConfigError(name + ": sigma2 must be > 0");
  if (!std::isfinite(gamma)) throw ConfigError(name + ": gamma must be finite");
  if (n_reps < 1) throw ConfigError(name + ": n_reps must be at least 1");
}

ScenarioDerived derive(const ScenarioConfig& cfg) {
  using namespace dgm;
  const double g = cfg.gamma;
  const double var_bp = kAgeVariance * g * g + kBpResidualVariance;
  const double cov_bp_age = kAgeVariance * g;
  ScenarioDerived d;
  d.reliability = var_bp / (var_bp + cfg.tau2);
  d.attenuation = kBpResidualVariance / (kBpResidualVariance + cfg.tau2);
  const double explained = kTrueEffect * kTrueEffect * var_bp + kAgeEffect * kAgeEffect * kAgeVariance +
                           2.0 * kTrueEffect * kAgeEffect * cov_bp_age;
  d.r_squared = explained / (explained + cfg.sigma2);
  d.crude_effect = kTrueEffect + kAgeEffect * cov_bp_age / var_bp;
  return d;
}

AnalysisSpec simulation_spec(std::size_t k) {
  AnalysisSpec spec;
  spec.outcome = "creatinine";
  for (std::size_t j = 1; j <= k; ++j) {
    spec.exposure_replicates.push_back("bp_star_" + std::to_string(j));
  }
  spec.covariates = {"age"};
  return spec;
}

Dataset generate_dataset(const ScenarioConfig& cfg, std::size_t rep_index) {
  using namespace dgm;
  cfg.validate();
  Engine rng = make_engine(stream_seed(cfg.seed, {rep_index}));
  std::normal_distribution<double> z(0.0, 1.0);

  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto k = static_cast<Eigen::Index>(cfg.k);
  Eigen::MatrixXd v(n, k + 2);
  const double sd_age = std::sqrt(kAgeVariance);
  const double sd_bp = std::sqrt(kBpResidualVariance);
  const double sd_err = std::sqrt(cfg.tau2);
  const double sd_out = std::sqrt(cfg.sigma2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double age = kAgeMean + sd_age * z(rng);
    const double bp = kBpIntercept + cfg.gamma * age + sd_bp * z(rng);
    for (Eigen::Index j = 0; j < k; ++j) {
      v(i, 1 + j) = bp + sd_err * z(rng);
    }
    v(i, 0) = kOutcomeIntercept + kTrueEffect * bp + kAgeEffect * age + sd_out * z(rng);
    v(i, k + 1) = age;
  }
  auto spec = simulation_spec(cfg.k);
  std::vector<std::string> names;
  names.push_back(spec.outcome);
  names.insert(names.end(), spec.exposure_replicates.begin(), spec.exposure_replicates.end());
  names.push_back("age");
  return Dataset(std::move(names), std::move(v));
}

std::vector<ScenarioConfig> scenario_grid(std::uint64_t seed, std::size_t n_reps) {
  std::vector<ScenarioConfig> grid;
  ScenarioConfig base;
  base.n_reps = n_reps;
  grid.push_back(base);

  auto add = [&](const std::string& sweep, const std::string& knob, double value, auto set) {
    ScenarioConfig c = base;
    c.sweep = sweep;
    set(c);
    std::ostringstream name;
    name << knob << '=' << format_double(value);
    c.name = name.str();
    grid.push_back(c);
  };
  for (double t : {200.0, 100.0, 50.0, 25.0, 20.0, 15.0, 10.0, 5.0}) {
    add("reliability", "tau2", t, [t](ScenarioConfig& c) { c.tau2 = t; });
  }
  for (std::size_t n : {125u, 250u, 1000u, 10000u}) {
    add("sample_size", "n", static_cast<double>(n), [n](ScenarioConfig& c) { c.n = n; });
  }
  for (std::size_t k : {2u, 5u, 10u}) {
    add("replicates", "k", static_cast<double>(k), [k](ScenarioConfig& c) { c.k = k; });
  }
  for (double s : {20.0, 5.0, 1.0}) {
    add("r_squared", "sigma2", s, [s](ScenarioConfig& c) { c.sigma2 = s; });
  }
  for (double g : {1.0, 4.0, 8.0}) {
    add("covariate_dependency", "gamma", g, [g](ScenarioConfig& c) { c.gamma = g; });
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i].seed = stream_seed(seed, {i});
  }
  return grid;
}

std::string sweep_knob(const std::string& sweep) {
  if (sweep == "reliability" || sweep == "base") return "tau2";
  if (sweep == "sample_size") return "n";
  if (sweep == "replicates") return "k";
  if (sweep == "r_squared") return "sigma2";
  if (sweep == "covariate_dependency") return "gamma";
  throw ConfigError("unknown sweep '" + sweep + "'");
}

double knob_value(const ScenarioConfig& cfg, const std::string& knob) {
  if (knob == "tau2") return cfg.tau2;
  if (knob == "n") return static_cast<double>(cfg.n);
  if (knob == "k") return static_cast<double>(cfg.k);
  if (knob == "sigma2") return cfg.sigma2;
  if (knob == "gamma") return cfg.gamma;
  throw ConfigError("unknown knob '" + knob + "'");
}

const MethodPerformance& PerformanceSummary::of(Method m) const {
  for (const auto& p : methods) {
    if (p.method == m) return p;
  }
  throw ConfigError("method " + std::string(to_string(m)) + " was not run");
}

RepetitionResult run_repetition(const ScenarioConfig& cfg, const HarnessConfig& harness,
                                std::size_t rep_index) {
  RepetitionResult rep;
  const Dataset data = generate_dataset(cfg, rep_index);
  const AnalysisSpec spec = simulation_spec(cfg.k);
  try {
    const ErrorVariance tau2 = estimate_tau2_from_replicates(data, spec);
    rep.tau2_hat = tau2.tau2;
    for (std::size_t m = 0; m < harness.methods.size(); ++m) {
      const Method method = harness.methods[m];
      SimexConfig simex = harness.simex;
      simex.seed = stream_seed(cfg.seed, {rep_index, 1});
      std::optional<ConfidenceInterval> ci;
      double estimate = 0.0;
      if (method == Method::uncorrected) {
        const FitResult fit = fit_uncorrected(data, spec);
        estimate = fit.coefficients(1);
        const double level = harness.level;
        boost::math::students_t t(static_cast<double>(fit.degrees_of_freedom()));
        const double crit = boost::math::quantile(t, 0.5 + level / 2.0);
        ci = ConfidenceInterval{estimate - crit * fit.standard_errors(1),
                                estimate + crit * fit.standard_errors(1)};
      } else {
        estimate = correct(method, data, spec, tau2, simex).estimate;
        if (std::find(harness.ci_methods.begin(), harness.ci_methods.end(), method) !=
                harness.ci_methods.end() &&
            harness.n_boot > 0) {
          BootstrapConfig boot;
          boot.n_boot = harness.n_boot;
          boot.level = harness.level;
          boot.seed = stream_seed(cfg.seed, {rep_index, 2, static_cast<std::uint64_t>(method)});
          boot.threads = 1;
          ci = bootstrap_ci(data, spec, method, tau2, simex, boot).ci;
        }
      }
      rep.estimates.push_back(estimate);
      rep.cis.push_back(ci);
    }
    rep.ok = true;
  } catch (const Error&) {
    rep.ok = false;
    rep.estimates.clear();
    rep.cis.clear();
  }
  return rep;
}

namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

} // namespace

PerformanceSummary summarize_repetitions(const ScenarioConfig& cfg, const HarnessConfig& harness,
                                         std::span<const RepetitionResult> reps) {
  PerformanceSummary summary;
  summary.config = cfg;
  summary.derived = derive(cfg);
  std::vector<const RepetitionResult*> used;
  double tau2_sum = 0.0;
  for (const auto& r : reps) {
    if (r.ok) {
      used.push_back(&r);
      tau2_sum += r.tau2_hat;
    }
  }
  summary.n_reps_used = used.size();
  summary.n_failures = reps.size() - used.size();
  if (used.empty() || static_cast<double>(summary.n_failures) >
                          harness.max_failure_fraction * static_cast<double>(reps.size())) {
    throw Error("scenario " + cfg.name + " aborted: " + std::to_string(summary.n_failures) + " of " +
                std::to_string(reps.size()) + " repetitions failed");
  }
  summary.mean_tau2_hat = tau2_sum / static_cast<double>(used.size());

  const double theta = dgm::kTrueEffect;
  const double r = static_cast<double>(used.size());
  for (std::size_t m = 0; m < harness.methods.size(); ++m) {
    std::vector<double> est;
    std::vector<double> sq_err;
    std::size_t covered = 0;
    std::size_t with_ci = 0;
    for (const auto* rep : used) {
      const double e = rep->estimates[m];
      est.push_back(e);
      sq_err.push_back((e - theta) * (e - theta));
      if (rep->cis[m]) {
        ++with_ci;
        if (rep->cis[m]->lower <= theta && theta <= rep->cis[m]->upper) ++covered;
      }
    }
    MethodPerformance p;
    p.method = harness.methods[m];
    p.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / r;
    p.bias = p.mean_estimate - theta;
    p.empirical_se = sample_sd(est);
    p.bias_mcse = p.empirical_se / std::sqrt(r);
    p.percent_bias = 100.0 * p.bias / theta;
    p.percent_bias_mcse = 100.0 * p.bias_mcse / theta;
    p.mse = std::accumulate(sq_err.begin(), sq_err.end(), 0.0) / r;
    p.mse_mcse = sample_sd(sq_err) / std::sqrt(r);
    if (with_ci == used.size()) {
      const double cov = static_cast<double>(covered) / r;
      p.coverage = cov;
      p.coverage_mcse = std::sqrt(cov * (1.0 - cov) / r);
    }
    summary.methods.push_back(p);
  }
  return summary;
}

PerformanceSummary run_scenario(const ScenarioConfig& cfg, const HarnessConfig& harness) {
  cfg.validate();
  if (std::find(harness.methods.begin(), harness.methods.end(), Method::simex) != harness.methods.end()) {
    harness.simex.validate();
  }
  std::vector<RepetitionResult> reps(cfg.n_reps);
  parallel_for(cfg.n_reps, harness.threads,
               [&](std::size_t r) { reps[r] = run_repetition(cfg, harness, r); });
  return summarize_repetitions(cfg, harness, reps);
}

namespace {

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json to_json(const PerformanceSummary& s) {
  nlohmann::ordered_json j;
  const auto& c = s.config;
  j["name"] = c.name;
  j["sweep"] = c.sweep;
  j["config"] = {{"tau2", c.tau2}, {"n", c.n},         {"k", c.k},          {"sigma2", c.sigma2},
                 {"gamma", c.gamma}, {"n_reps", c.n_reps}, {"seed", c.seed}};
  j["derived"] = {{"reliability", s.derived.reliability},
                  {"attenuation", s.derived.attenuation},
                  {"r_squared", s.derived.r_squared},
                  {"crude_effect", s.derived.crude_effect}};
  j["n_reps_used"] = s.n_reps_used;
  j["n_failures"] = s.n_failures;
  j["mean_tau2_hat"] = s.mean_tau2_hat;
  auto methods = nlohmann::ordered_json::array();
  for (const auto& p : s.methods) {
    methods.push_back({{"method", std::string(to_string(p.method))},
                       {"mean_estimate", p.mean_estimate},
                       {"empirical_se", p.empirical_se},
                       {"bias", p.bias},
                       {"bias_mcse", p.bias_mcse},
                       {"percent_bias", p.percent_bias},
                       {"percent_bias_mcse", p.percent_bias_mcse},
                       {"mse", p.mse},
                       {"mse_mcse", p.mse_mcse},
                       {"coverage", opt_json(p.coverage)},
                       {"coverage_mcse", opt_json(p.coverage_mcse)}});
  }
  j["methods"] = methods;
  return j;
}

} // namespace

std::vector<std::filesystem::path> emit_study_report(std::span<const PerformanceSummary> summaries,
                                                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create report directory " + dir.string());
  }

  std::vector<const PerformanceSummary*> base;
  std::map<std::string, std::vector<const PerformanceSummary*>> sweeps;
  std::vector<std::string> sweep_order;
  for (const auto& s : summaries) {
    if (s.config.is_base()) {
      base.push_back(&s);
    } else {
      if (!sweeps.contains(s.config.sweep)) sweep_order.push_back(s.config.sweep);
      sweeps[s.config.sweep].push_back(&s);
    }
  }
  if (sweep_order.empty() && !base.empty()) {
    sweep_order.push_back("base");
  }

  std::vector<fs::path> written;
  for (const auto& sweep : sweep_order) {
    const std::string knob = sweep_knob(sweep);
    std::vector<const PerformanceSummary*> rows = base;
    if (sweep != "base") {
      rows.insert(rows.end(), sweeps[sweep].begin(), sweeps[sweep].end());
    }
    std::stable_sort(rows.begin(), rows.end(), [&](const auto* a, const auto* b) {
      return knob_value(a->config, knob) < knob_value(b->config, knob);
    });
    std::ostringstream csv;
    csv << "knob,value,is_base,method,percent_bias,bias_mcse,mse,mse_mcse,coverage,coverage_mcse\n";
    for (const auto* s : rows) {
      for (const auto& p : s->methods) {
        csv << knob << ',' << format_double(knob_value(s->config, knob)) << ','
            << (s->config.is_base() ? 1 : 0) << ',' << to_string(p.method) << ','
            << format_double(p.percent_bias) << ',' << format_double(p.bias_mcse) << ','
            << format_double(p.mse) << ',' << format_double(p.mse_mcse) << ','
            << opt_cell(p.coverage) << ',' << opt_cell(p.coverage_mcse) << '\n';
      }
    }
    const fs::path path = dir / (sweep + ".csv");
    write_file_atomic(path, csv.str());
    written.push_back(path);
  }

  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& s : summaries) all.push_back(to_json(s));
  const fs::path json_path = dir / "summaries.json";
  write_file_atomic(json_path, all.dump(2) + "\n");
  written.push_back(json_path);
  return written;
}

namespace {

// The single knob a custom scenario changes relative to the base scenario.
std::string infer_sweep(const ScenarioConfig& c) {
  const ScenarioConfig base;
  std::vector<std::string> changed;
  if (c.tau2 != base.tau2) changed.push_back("reliability");
  if (c.n != base.n) changed.push_back("sample_size");
  if (c.k != base.k) changed.push_back("replicates");
  if (c.sigma2 != base.sigma2) changed.push_back("r_squared");
  if (c.gamma != base.gamma) changed.push_back("covariate_dependency");
  if (changed.empty()) return "base";
  if (changed.size() == 1) return changed.front();
  throw ConfigError("scenario " + c.name +
                    " changes several knobs; give its \"sweep\" explicitly");
}

} // namespace

std::vector<ScenarioConfig> load_scenarios_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid scenario JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ConfigError("scenario file must contain a JSON array");

  std::vector<ScenarioConfig> out;
  try {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& e = doc[i];
      ScenarioConfig c;
      c.name = e.value("name", "scenario_" + std::to_string(i));
      c.tau2 = e.value("tau2", c.tau2);
      c.n = e.value("n", c.n);
      c.k = e.value("k", c.k);
      c.sigma2 = e.value("sigma2", c.sigma2);
      c.gamma = e.value("gamma", c.gamma);
      c.n_reps = e.value("n_reps", c.n_reps);
      c.seed = e.value("seed", stream_seed(kDefaultSeed, {i}));
      c.sweep = e.contains("sweep") ? e.at("sweep").get<std::string>() : infer_sweep(c);
      sweep_knob(c.sweep); // rejects unknown sweep names
      c.validate();
      out.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid scenario entry in " + path.string() + ": " + e.what());
  }
  return out;
}

} // namespace mecor
