#pragma once

#include "mecor/dataset.hpp"
#include "mecor/mecorrect.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace mecor {

/// Prior for the measurement error variance in a sensitivity analysis.
struct ErrorVarianceDistribution {
  enum class Kind { uniform, triangular, trapezoidal };

  Kind kind = Kind::uniform;
  double min = 0.0;
  double max = 0.0;
  double mode = 0.0;       // triangular
  double lower_mode = 0.0; // trapezoidal: start of the flat top
  double upper_mode = 0.0; // trapezoidal: end of the flat top

  static ErrorVarianceDistribution uniform(double min, double max);
  static ErrorVarianceDistribution triangular(double min, double mode, double max);
  static ErrorVarianceDistribution trapezoidal(double min, double lower_mode, double upper_mode,
                                               double max);

  /// Throws ConfigError on negative support or misordered parameters.
  void validate() const;

  double cdf(double x) const;
  /// Inverse CDF on u in [0, 1].
  double quantile(double u) const;
};

std::string_view to_string(ErrorVarianceDistribution::Kind kind) noexcept;
ErrorVarianceDistribution::Kind parse_distribution_kind(std::string_view text);

/// m inverse-transform draws from one stream seeded with `seed`.
std::vector<double> sample_tau2(const ErrorVarianceDistribution& dist, std::size_t m,
                                std::uint64_t seed);

struct SensitivityConfig {
  Method method = Method::rc;
  std::size_t draws = 100;
  bool ci = true;
  SimexConfig simex;
  BootstrapConfig bootstrap;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
};

/// Per-draw seed. Draw i runs SIMEX with this seed and the bootstrap with
/// stream_seed(draw_seed(seed, i), {1}).
std::uint64_t sensitivity_draw_seed(std::uint64_t seed, std::size_t draw);

struct SensitivityDraw {
  enum class Status { ok, infeasible };

  double tau2 = 0.0;
  Status status = Status::ok;
  std::optional<double> estimate;
  std::optional<ConfidenceInterval> ci;
};

struct SensitivitySummary {
  std::size_t n_ok = 0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SensitivityResult {
  Method method = Method::rc;
  ErrorVarianceDistribution distribution;
  std::vector<SensitivityDraw> draws; // sampling order
  SensitivitySummary summary;         // over ok draws only
};

/// Runs the corrector once per tau2 draw. Infeasible regression-calibration
/// draws are recorded, not fatal; if every draw is infeasible this throws
/// InfeasibleCorrectionError.
SensitivityResult run_sensitivity(const Dataset& data, const AnalysisSpec& spec,
                                  const ErrorVarianceDistribution& dist,
                                  const SensitivityConfig& cfg);

SensitivitySummary summarize(std::span<const SensitivityDraw> draws);

/// CSV with header tau2,estimate,ci_lower,ci_upper,status sorted by tau2
/// (empty numeric cells for missing values) and a JSON summary next to it
/// with the extension replaced by .json. Returns the sidecar path.
std::filesystem::path emit_plot_data(const SensitivityResult& result,
                                     const std::filesystem::path& csv_path);

} // namespace mecor
