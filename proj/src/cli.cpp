#include "mecor/cli.hpp"

#include "mecor/dataset.hpp"
#include "mecor/errors.hpp"
#include "mecor/io.hpp"
#include "mecor/linreg.hpp"
#include "mecor/mecorrect.hpp"
#include "mecor/sensitivity.hpp"
#include "mecor/simstudy.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mecor::cli {

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Failure of one named stage of a subcommand.
class StageError : public std::runtime_error {
public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  for (const auto& f : split(text, ',')) {
    out.emplace_back(trim(f));
  }
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(f, &used));
      if (used != f.size()) throw std::invalid_argument(f);
    } catch (const std::exception&) {
      throw UsageError("invalid number in --lambda-grid: '" + f + "'");
    }
  }
  return out;
}

struct DataOptions {
  std::string input;
  std::string outcome;
  std::string exposure;
  std::string replicates;
  std::string covariates;

  void add_to(CLI::App* cmd, bool allow_replicates) {
    cmd->add_option("--input", input, "Input CSV file (header row, numeric cells)")->required();
    cmd->add_option("--outcome", outcome, "Outcome column")->required();
    cmd->add_option("--exposure", exposure,
                    "Error-prone exposure column (defaults to the first --replicates column)");
    if (allow_replicates) {
      cmd->add_option("--replicates", replicates,
                      "Comma-separated replicate exposure columns; tau2 is estimated from them");
    }
    cmd->add_option("--covariates", covariates, "Comma-separated adjustment covariates")
        ->default_str("");
  }

  AnalysisSpec spec() const {
    AnalysisSpec s;
    s.outcome = outcome;
    s.covariates = split_list(covariates);
    const auto reps = split_list(replicates);
    if (!reps.empty()) {
      if (!exposure.empty() && exposure != reps.front()) {
        throw UsageError("--exposure must be the first column listed in --replicates");
      }
      s.exposure_replicates = reps;
    } else {
      if (exposure.empty()) throw UsageError("--exposure (or --replicates) is required");
      s.exposure_replicates = {exposure};
    }
    return s;
  }
};

struct SimexOptions {
  std::string lambda_grid = "0,0.5,1,1.5,2";
  std::size_t n_sim = 100;
  std::string extrapolant = "quadratic";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--lambda-grid", lambda_grid, "SIMEX error-inflation multipliers (must include 0)")
        ->capture_default_str();
    cmd->add_option("--n-sim", n_sim, "SIMEX pseudo-datasets per lambda")->capture_default_str();
    cmd->add_option("--extrapolant", extrapolant, "SIMEX extrapolant: linear or quadratic")
        ->capture_default_str()
        ->check(CLI::IsMember({"linear", "quadratic"}));
  }

  SimexConfig config(std::uint64_t seed) const {
    SimexConfig c;
    c.lambda_grid = parse_grid(lambda_grid);
    c.n_sim = n_sim;
    c.extrapolant = parse_extrapolant(extrapolant);
    c.seed = seed;
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

void print_fit(std::ostream& out, const FitResult& fit, const AnalysisSpec& spec) {
  std::vector<std::string> terms{"(intercept)", spec.exposure()};
  terms.insert(terms.end(), spec.covariates.begin(), spec.covariates.end());
  out << std::left << std::setw(16) << "term" << std::right << std::setw(16) << "estimate"
      << std::setw(16) << "std_error" << '\n';
  for (std::size_t i = 0; i < terms.size(); ++i) {
    out << std::left << std::setw(16) << terms[i] << std::right << std::setw(16)
        << num(fit.coefficients(static_cast<Eigen::Index>(i)), 8) << std::setw(16)
        << num(fit.standard_errors(static_cast<Eigen::Index>(i)), 8) << '\n';
  }
  out << "n = " << fit.n << ", p = " << fit.p << ", residual variance = " << num(fit.residual_variance, 8)
      << ", R^2 = " << num(fit.r_squared, 6) << '\n';
}

nlohmann::ordered_json fit_json(const FitResult& fit, const AnalysisSpec& spec) {
  std::vector<std::string> terms{"(intercept)", spec.exposure()};
  terms.insert(terms.end(), spec.covariates.begin(), spec.covariates.end());
  nlohmann::ordered_json coef = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    coef.push_back({{"term", terms[i]},
                    {"estimate", fit.coefficients(static_cast<Eigen::Index>(i))},
                    {"std_error", fit.standard_errors(static_cast<Eigen::Index>(i))}});
  }
  return {{"coefficients", coef},
          {"residual_variance", fit.residual_variance},
          {"r_squared", fit.r_squared},
          {"n", fit.n},
          {"p", fit.p}};
}

int cmd_fit(const DataOptions& d, const std::string& output, std::ostream& out) {
  const AnalysisSpec spec = d.spec();
  const Dataset data = stage("load", [&] { return load_csv(d.input, spec); });
  const FitResult fit = stage("fit", [&] { return fit_uncorrected(data, spec); });
  print_fit(out, fit, spec);
  if (!output.empty()) {
    stage("write output", [&] { write_file_atomic(output, fit_json(fit, spec).dump(2) + "\n"); });
  }
  return 0;
}

struct CorrectOptions {
  std::string method = "rc";
  std::optional<double> tau2;
  std::size_t n_boot = 999;
  double level = 0.95;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
  std::string output;
};

int cmd_correct(const DataOptions& d, const SimexOptions& so, const CorrectOptions& o,
                std::ostream& out) {
  const AnalysisSpec spec = d.spec();
  const bool from_replicates = spec.replicate_count() >= 2;
  if (o.tau2.has_value() == from_replicates) {
    throw UsageError("give exactly one tau2 source: --tau2 or --replicates (two or more columns)");
  }
  const Method method = parse_method(o.method);
  const SimexConfig simex = so.config(o.seed);
  BootstrapConfig boot;
  boot.n_boot = o.n_boot;
  boot.level = o.level;
  boot.seed = stream_seed(o.seed, {1});
  boot.threads = o.threads;
  if (o.n_boot > 0) {
    try {
      boot.validate();
    } catch (const ConfigError& e) {
      throw UsageError(std::string(e.what()) + " (use --n-boot 0 to skip the interval)");
    }
  }

  const Dataset data = stage("load", [&] { return load_csv(d.input, spec); });
  const ErrorVariance tau2 = stage("estimate tau2", [&] {
    return from_replicates ? estimate_tau2_from_replicates(data, spec) : ErrorVariance::external(*o.tau2);
  });
  const FitResult naive = stage("fit", [&] { return fit_uncorrected(data, spec); });
  CorrectionResult result = stage("correct", [&] { return correct(method, data, spec, tau2, simex); });
  std::optional<BootstrapResult> bootstrap;
  if (o.n_boot > 0 && method != Method::uncorrected) {
    bootstrap = stage("bootstrap", [&] { return bootstrap_ci(data, spec, method, tau2, simex, boot); });
    result.ci = bootstrap->ci;
  }

  out << "tau2 = " << num(tau2.tau2, 8) << " ("
      << (tau2.source == ErrorVariance::Source::replicates ? "estimated from replicates" : "external")
      << ")\n";
  out << std::left << std::setw(14) << "method" << std::right << std::setw(16) << "estimate"
      << std::setw(16) << "ci_lower" << std::setw(16) << "ci_upper" << '\n';
  out << std::left << std::setw(14) << "uncorrected" << std::right << std::setw(16)
      << num(naive.coefficients(1), 8) << std::setw(16) << "" << std::setw(16) << "" << '\n';
  if (method != Method::uncorrected) {
    out << std::left << std::setw(14) << to_string(method) << std::right << std::setw(16)
        << num(result.estimate, 8) << std::setw(16) << (result.ci ? num(result.ci->lower, 8) : "")
        << std::setw(16) << (result.ci ? num(result.ci->upper, 8) : "") << '\n';
  }

  nlohmann::ordered_json j;
  j["method"] = std::string(to_string(method));
  j["tau2"] = tau2.tau2;
  j["tau2_source"] = tau2.source == ErrorVariance::Source::replicates ? "replicates" : "external";
  j["uncorrected"] = naive.coefficients(1);
  j["estimate"] = result.estimate;
  j["ci_lower"] = result.ci ? nlohmann::ordered_json(result.ci->lower) : nlohmann::ordered_json(nullptr);
  j["ci_upper"] = result.ci ? nlohmann::ordered_json(result.ci->upper) : nlohmann::ordered_json(nullptr);
  if (const auto* rc = std::get_if<RcDiagnostics>(&result.diagnostics)) {
    out << "correction factor = " << num(rc->correction_factor, 8)
        << ", conditional exposure variance V = " << num(rc->exposure_variance, 8) << '\n';
    j["diagnostics"] = {{"correction_factor", rc->correction_factor},
                        {"exposure_variance", rc->exposure_variance}};
  } else if (const auto* sx = std::get_if<SimexDiagnostics>(&result.diagnostics)) {
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    out << "lambda   estimate\n";
    for (const auto& p : sx->points) {
      out << std::left << std::setw(9) << num(p.lambda) << num(p.estimate, 8) << '\n';
      pts.push_back({{"lambda", p.lambda}, {"estimate", p.estimate}});
    }
    std::vector<double> coef(sx->extrapolant_coefficients.data(),
                             sx->extrapolant_coefficients.data() + sx->extrapolant_coefficients.size());
    j["diagnostics"] = {{"points", pts}, {"extrapolant", std::string(to_string(simex.extrapolant))},
                        {"extrapolant_coefficients", coef}};
  }
  if (bootstrap) {
    out << "bootstrap: " << bootstrap->n_used << " replicates used, " << bootstrap->n_failed
        << " failed, level " << num(o.level) << '\n';
    j["bootstrap"] = {{"n_boot", o.n_boot}, {"level", o.level}, {"n_used", bootstrap->n_used},
                      {"n_failed", bootstrap->n_failed}};
  }
  if (!o.output.empty()) {
    stage("write output", [&] { write_file_atomic(o.output, j.dump(2) + "\n"); });
  }
  return 0;
}

struct SensitivityOptions {
  std::string method = "rc";
  std::string dist;
  std::optional<double> min, mode, lower_mode, upper_mode, max;
  std::size_t draws = 100;
  std::optional<bool> ci;
  std::size_t n_boot = 999;
  double level = 0.95;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
  std::string output;
};

ErrorVarianceDistribution make_distribution(const SensitivityOptions& o) {
  auto need = [](const std::optional<double>& v, const char* flag) {
    if (!v) throw UsageError(std::string(flag) + " is required for this distribution");
    return *v;
  };
  try {
    switch (parse_distribution_kind(o.dist)) {
    case ErrorVarianceDistribution::Kind::uniform:
      return ErrorVarianceDistribution::uniform(need(o.min, "--tau2-min"), need(o.max, "--tau2-max"));
    case ErrorVarianceDistribution::Kind::triangular:
      return ErrorVarianceDistribution::triangular(need(o.min, "--tau2-min"), need(o.mode, "--tau2-mode"),
                                                   need(o.max, "--tau2-max"));
    case ErrorVarianceDistribution::Kind::trapezoidal:
      return ErrorVarianceDistribution::trapezoidal(
          need(o.min, "--tau2-min"), need(o.lower_mode, "--tau2-lower-mode"),
          need(o.upper_mode, "--tau2-upper-mode"), need(o.max, "--tau2-max"));
    }
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  throw UsageError("unknown distribution");
}

int cmd_sensitivity(const DataOptions& d, const SimexOptions& so, const SensitivityOptions& o,
                    std::ostream& out) {
  const AnalysisSpec spec = d.spec();
  const Method method = parse_method(o.method);
  if (method == Method::uncorrected) throw UsageError("--method must be rc or simex");
  const ErrorVarianceDistribution dist = make_distribution(o);
  if (o.draws < 1) throw UsageError("--draws must be at least 1");

  SensitivityConfig cfg;
  cfg.method = method;
  cfg.draws = o.draws;
  cfg.ci = o.ci.value_or(method == Method::rc);
  cfg.simex = so.config(o.seed);
  cfg.bootstrap.n_boot = o.n_boot;
  cfg.bootstrap.level = o.level;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  if (cfg.ci) {
    try {
      cfg.bootstrap.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }

  const Dataset data = stage("load", [&] { return load_csv(d.input, spec); });
  const FitResult naive = stage("fit", [&] { return fit_uncorrected(data, spec); });
  const SensitivityResult result = stage("sensitivity", [&] { return run_sensitivity(data, spec, dist, cfg); });
  const auto sidecar = stage("write output", [&] { return emit_plot_data(result, o.output); });

  out << "uncorrected estimate = " << num(naive.coefficients(1), 8) << '\n';
  out << "method = " << to_string(method) << ", distribution = " << to_string(dist.kind)
      << ", draws = " << result.draws.size() << ", ok = " << result.summary.n_ok
      << ", infeasible = " << result.draws.size() - result.summary.n_ok << '\n';
  out << "median = " << num(result.summary.median, 8) << ", min = " << num(result.summary.min, 8)
      << ", max = " << num(result.summary.max, 8) << '\n';
  out << "wrote " << o.output << " and " << sidecar.string() << '\n';
  return 0;
}

struct SimulateOptions {
  std::string scenario = "base";
  std::string scenarios_json;
  std::size_t reps = 1000;
  std::uint64_t seed = kDefaultSeed;
  bool full = false;
  std::size_t n_boot = 200;
  std::string ci_methods = "rc";
  std::string methods = "uncorrected,rc,simex";
  double level = 0.95;
  unsigned threads = 1;
  std::string output;
};

int cmd_simulate(const SimexOptions& so, const SimulateOptions& o, std::ostream& out) {
  std::vector<ScenarioConfig> grid;
  if (!o.scenarios_json.empty()) {
    grid = stage("load scenarios", [&] { return load_scenarios_json(o.scenarios_json); });
  } else {
    for (auto& c : scenario_grid(o.seed, o.reps)) {
      const bool selected = o.scenario == "all" || o.scenario == c.sweep || o.scenario == c.name ||
                            (c.is_base() && o.scenario != "base" && o.scenario != c.name);
      if (!selected) continue;
      if (c.n >= 10000 && !o.full) continue;
      grid.push_back(c);
    }
    const bool matched = std::any_of(grid.begin(), grid.end(),
                                     [&](const auto& c) { return c.sweep == o.scenario || c.name == o.scenario; });
    if (o.scenario != "all" && !matched) {
      throw UsageError("unknown scenario '" + o.scenario +
                       "' (expected all, base, a sweep name, or a scenario name such as tau2=200)");
    }
  }
  if (grid.empty()) throw UsageError("no scenarios selected");

  HarnessConfig harness;
  harness.methods.clear();
  harness.ci_methods.clear();
  try {
    for (const auto& m : split_list(o.methods)) harness.methods.push_back(parse_method(m));
    for (const auto& m : split_list(o.ci_methods)) harness.ci_methods.push_back(parse_method(m));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (harness.methods.empty()) throw UsageError("--methods is empty");
  harness.simex = so.config(o.seed);
  harness.n_boot = o.n_boot;
  harness.level = o.level;
  harness.threads = o.threads;
  if (o.n_boot > 0 && !harness.ci_methods.empty()) {
    BootstrapConfig check;
    check.n_boot = o.n_boot;
    check.level = o.level;
    try {
      check.validate();
    } catch (const ConfigError& e) {
      throw UsageError(std::string(e.what()) + " (use --n-boot 0 to skip intervals)");
    }
  }

  std::vector<PerformanceSummary> summaries;
  for (const auto& cfg : grid) {
    summaries.push_back(stage("scenario " + cfg.name, [&] { return run_scenario(cfg, harness); }));
    const auto& s = summaries.back();
    out << s.config.name << " (reliability " << num(s.derived.reliability, 3) << ", "
        << s.n_reps_used << " reps, " << s.n_failures << " failed)\n";
    out << "  " << std::left << std::setw(12) << "method" << std::right << std::setw(12) << "mean"
        << std::setw(12) << "%bias" << std::setw(10) << "mcse" << std::setw(12) << "mse"
        << std::setw(10) << "coverage" << '\n';
    for (const auto& p : s.methods) {
      out << "  " << std::left << std::setw(12) << to_string(p.method) << std::right << std::setw(12)
          << num(p.mean_estimate, 5) << std::setw(12) << num(p.percent_bias, 4) << std::setw(10)
          << num(p.percent_bias_mcse, 3) << std::setw(12) << num(p.mse, 4) << std::setw(10)
          << (p.coverage ? num(*p.coverage, 3) : "-") << '\n';
    }
  }
  const auto files = stage("write output", [&] { return emit_study_report(summaries, o.output); });
  for (const auto& f : files) out << "wrote " << f.string() << '\n';
  return 0;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Measurement error correction: regression calibration, SIMEX, sensitivity "
               "analysis and simulation study",
               "mecor"};
  app.require_subcommand(1);

  std::string fit_output;
  DataOptions fit_data;
  auto* fit = app.add_subcommand("fit", "OLS of the outcome on the exposure and covariates");
  fit_data.add_to(fit, false);
  fit->add_option("--output", fit_output, "Write the fit as JSON to this path");

  DataOptions cor_data;
  SimexOptions cor_simex;
  CorrectOptions cor;
  auto* correct_cmd = app.add_subcommand("correct", "Correct the exposure coefficient for measurement error");
  cor_data.add_to(correct_cmd, true);
  correct_cmd->add_option("--method", cor.method, "Correction method: rc or simex")
      ->capture_default_str()
      ->check(CLI::IsMember({"rc", "simex", "uncorrected"}));
  correct_cmd->add_option("--tau2", cor.tau2, "Known measurement error variance");
  cor_simex.add_to(correct_cmd);
  correct_cmd->add_option("--n-boot", cor.n_boot, "Bootstrap replicates for the CI (0 disables)")
      ->capture_default_str();
  correct_cmd->add_option("--level", cor.level, "Confidence level")->capture_default_str();
  correct_cmd->add_option("--seed", cor.seed, "Random seed")->capture_default_str();
  correct_cmd->add_option("--threads", cor.threads, "Worker threads for the bootstrap (0 = all cores)")
      ->capture_default_str();
  correct_cmd->add_option("--output", cor.output, "Write the result as JSON to this path");

  DataOptions sen_data;
  SimexOptions sen_simex;
  SensitivityOptions sen;
  auto* sens = app.add_subcommand("sensitivity", "Sensitivity analysis over a prior for tau2");
  sen_data.add_to(sens, false);
  sens->add_option("--method", sen.method, "Correction method: rc or simex")
      ->capture_default_str()
      ->check(CLI::IsMember({"rc", "simex"}));
  sens->add_option("--tau2-dist", sen.dist, "Prior for tau2: uniform, triangular or trapezoidal")
      ->required()
      ->check(CLI::IsMember({"uniform", "triangular", "trapezoidal"}));
  sens->add_option("--tau2-min", sen.min, "Lower bound of the prior");
  sens->add_option("--tau2-mode", sen.mode, "Mode (triangular)");
  sens->add_option("--tau2-lower-mode", sen.lower_mode, "Start of the flat top (trapezoidal)");
  sens->add_option("--tau2-upper-mode", sen.upper_mode, "End of the flat top (trapezoidal)");
  sens->add_option("--tau2-max", sen.max, "Upper bound of the prior");
  sens->add_option("--draws", sen.draws, "Number of tau2 draws")->capture_default_str();
  sens->add_flag("--ci,!--no-ci", sen.ci, "Bootstrap CI per draw (default: on for rc, off for simex)");
  sen_simex.add_to(sens);
  sens->add_option("--n-boot", sen.n_boot, "Bootstrap replicates per draw")->capture_default_str();
  sens->add_option("--level", sen.level, "Confidence level")->capture_default_str();
  sens->add_option("--seed", sen.seed, "Random seed")->capture_default_str();
  sens->add_option("--threads", sen.threads, "Worker threads over draws (0 = all cores)")
      ->capture_default_str();
  sens->add_option("--output", sen.output, "CSV of per-draw results; a .json summary is written next to it")
      ->required();

  SimexOptions sim_simex;
  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run the simulation study");
  simulate->add_option("--scenario", sim.scenario,
                       "all, base, a sweep (reliability, sample_size, replicates, r_squared, "
                       "covariate_dependency) or one scenario name such as tau2=200")
      ->capture_default_str();
  simulate->add_option("--scenarios-json", sim.scenarios_json,
                       "JSON array of scenario objects (fields tau2, n, k, sigma2, gamma, n_reps, seed, name, sweep)")
      ->check(CLI::ExistingFile);
  simulate->add_option("--reps", sim.reps, "Repetitions per scenario")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_flag("--full", sim.full, "Include the n = 10000 scenario");
  simulate->add_option("--methods", sim.methods, "Methods to evaluate")->capture_default_str();
  simulate->add_option("--ci-methods", sim.ci_methods, "Corrected methods that get a bootstrap CI")
      ->capture_default_str();
  simulate->add_option("--n-boot", sim.n_boot, "Bootstrap replicates per repetition (0 disables)")
      ->capture_default_str();
  simulate->add_option("--level", sim.level, "Confidence level")->capture_default_str();
  sim_simex.add_to(simulate);
  simulate->add_option("--threads", sim.threads, "Worker threads over repetitions (0 = all cores)")
      ->capture_default_str();
  simulate->add_option("--output", sim.output, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == fit) return cmd_fit(fit_data, fit_output, out);
    if (active == correct_cmd) return cmd_correct(cor_data, cor_simex, cor, out);
    if (active == sens) return cmd_sensitivity(sen_data, sen_simex, sen, out);
    if (active == simulate) return cmd_simulate(sim_simex, sim, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const StageError& e) {
    err << "error in stage '" << e.stage() << "': " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

} // namespace mecor::cli
