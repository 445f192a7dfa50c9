#pragma once

#include "mecor/dataset.hpp"
#include "mecor/mecorrect.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mecor {

// Data-generating mechanism of the simulation study:
//   age        ~ N(32, 25)
//   bp | age   ~ N(120 + gamma * age, 50)
//   bp*_j | bp ~ N(bp, tau2),               j = 1..k
//   creatinine ~ N(30 + 0.2 bp + 0.2 age, sigma2)
// Second arguments are variances.
namespace dgm {
inline constexpr double kAgeMean = 32.0;
inline constexpr double kAgeVariance = 25.0;
inline constexpr double kBpIntercept = 120.0;
inline constexpr double kBpResidualVariance = 50.0;
inline constexpr double kOutcomeIntercept = 30.0;
inline constexpr double kTrueEffect = 0.2; // bp -> creatinine, the estimand
inline constexpr double kAgeEffect = 0.2;
} // namespace dgm

struct ScenarioConfig {
  std::string name = "base";
  std::string sweep = "base"; // base, reliability, sample_size, replicates, r_squared, covariate_dependency
  double tau2 = 30.0;
  std::size_t n = 500;
  std::size_t k = 3;
  double sigma2 = 100.0;
  double gamma = 0.0;
  std::size_t n_reps = 1000;
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
  bool is_base() const { return sweep == "base"; }
};

/// Closed-form properties of a scenario.
struct ScenarioDerived {
  double reliability = 0.0; // Var(bp) / Var(bp*)
  double attenuation = 0.0; // naive / true exposure coefficient given age
  double r_squared = 0.0;   // of the error-free outcome model
  double crude_effect = 0.0; // bp coefficient without age in the model
};

ScenarioDerived derive(const ScenarioConfig& cfg);

/// Columns: creatinine, bp_star_1..bp_star_k, age. Repetition r draws from
/// stream_seed(cfg.seed, {r}).
Dataset generate_dataset(const ScenarioConfig& cfg, std::size_t rep_index);

/// Analysis roles for a generated dataset: creatinine ~ bp_star_1 + age,
/// with all replicate columns available for estimating tau2.
AnalysisSpec simulation_spec(std::size_t k);

/// Base scenario plus the five one-knob sweeps, 22 entries in total.
/// Scenario i gets seed stream_seed(seed, {i}).
std::vector<ScenarioConfig> scenario_grid(std::uint64_t seed = kDefaultSeed,
                                          std::size_t n_reps = 1000);

/// Name of the knob a sweep varies ("tau2", "n", ...); "tau2" for the base.
std::string sweep_knob(const std::string& sweep);
double knob_value(const ScenarioConfig& cfg, const std::string& knob);

struct HarnessConfig {
  std::vector<Method> methods{Method::uncorrected, Method::rc, Method::simex};
  // Corrected methods that get a bootstrap interval (and so a coverage).
  std::vector<Method> ci_methods{Method::rc};
  SimexConfig simex;
  std::size_t n_boot = 200;
  double level = 0.95;
  unsigned threads = 1;
  // Abort the scenario when more repetitions than this fraction fail.
  double max_failure_fraction = 0.10;
};

/// Performance of one method over the usable repetitions.
struct MethodPerformance {
  Method method = Method::uncorrected;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double bias_mcse = 0.0;
  double percent_bias = 0.0;
  double percent_bias_mcse = 0.0;
  double mse = 0.0;
  double mse_mcse = 0.0;
  std::optional<double> coverage;
  std::optional<double> coverage_mcse;
  double empirical_se = 0.0; // sd of the estimates
};

struct PerformanceSummary {
  ScenarioConfig config;
  ScenarioDerived derived;
  std::vector<MethodPerformance> methods;
  std::size_t n_reps_used = 0;
  std::size_t n_failures = 0;
  double mean_tau2_hat = 0.0;

  const MethodPerformance& of(Method m) const;
};

/// Raw per-repetition output, kept so callers can aggregate differently.
struct RepetitionResult {
  bool ok = false;
  double tau2_hat = 0.0;
  std::vector<double> estimates;              // parallel to HarnessConfig::methods
  std::vector<std::optional<ConfidenceInterval>> cis;
};

RepetitionResult run_repetition(const ScenarioConfig& cfg, const HarnessConfig& harness,
                                std::size_t rep_index);

/// Aggregates repetitions in index order. Throws Error when failures
/// exceed the harness limit.
PerformanceSummary summarize_repetitions(const ScenarioConfig& cfg, const HarnessConfig& harness,
                                         std::span<const RepetitionResult> reps);

/// Generate, estimate tau2 from the replicates, correct using only the first
/// replicate as exposure, and aggregate. Repetitions run on harness.threads.
PerformanceSummary run_scenario(const ScenarioConfig& cfg, const HarnessConfig& harness);

/// One CSV per sweep (base rows flagged and included in each) plus
/// summaries.json, written into `dir`. Returns the written paths.
std::vector<std::filesystem::path> emit_study_report(std::span<const PerformanceSummary> summaries,
                                                     const std::filesystem::path& dir);

/// Scenario list from a JSON array of objects using the ScenarioConfig field
/// names; missing fields take base values.
std::vector<ScenarioConfig> load_scenarios_json(const std::filesystem::path& path);

} // namespace mecor
