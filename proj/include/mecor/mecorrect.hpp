#pragma once

#include "mecor/dataset.hpp"
#include "mecor/linreg.hpp"
#include "mecor/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mecor {

enum class Method { uncorrected, rc, simex };
enum class Extrapolant { linear, quadratic };

std::string_view to_string(Method m) noexcept;
std::string_view to_string(Extrapolant e) noexcept;
/// Accepts "uncorrected", "rc", "simex". Throws ConfigError.
Method parse_method(std::string_view text);
/// Accepts "linear", "quadratic". Throws ConfigError.
Extrapolant parse_extrapolant(std::string_view text);

/// Variance of the additive error on a single exposure measurement.
struct ErrorVariance {
  enum class Source { replicates, external };

  double tau2 = 0.0;
  Source source = Source::external;

  static ErrorVariance external(double tau2);
};

struct SimexConfig {
  std::vector<double> lambda_grid{0.0, 0.5, 1.0, 1.5, 2.0};
  std::size_t n_sim = 100;
  Extrapolant extrapolant = Extrapolant::quadratic;
  std::uint64_t seed = kDefaultSeed;

  /// Grid strictly increasing, nonnegative and containing 0; n_sim >= 1.
  void validate() const;
};

struct BootstrapConfig {
  std::size_t n_boot = 999;
  double level = 0.95;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
  // Abort when more than this fraction of replicates fail.
  double max_failure_fraction = 0.10;

  void validate() const;
};

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
};

struct RcDiagnostics {
  double correction_factor = 1.0;
  double exposure_variance = 0.0; // V: residual variance of X* given covariates
};

struct SimexPoint {
  double lambda = 0.0;
  double estimate = 0.0;
};

struct SimexDiagnostics {
  std::vector<SimexPoint> points;
  Eigen::VectorXd extrapolant_coefficients; // constant term first
};

struct CorrectionResult {
  Method method = Method::uncorrected;
  double estimate = 0.0;
  std::optional<ConfidenceInterval> ci;
  std::variant<std::monostate, RcDiagnostics, SimexDiagnostics> diagnostics;
};

/// Mean over rows of the within-row sample variance (divisor k - 1) of the
/// replicate columns. Throws ConfigError when fewer than two replicates.
ErrorVariance estimate_tau2_from_replicates(const Dataset& data, const AnalysisSpec& spec);

/// OLS of outcome on [1, first replicate, covariates].
FitResult fit_uncorrected(const Dataset& data, const AnalysisSpec& spec);

/// Uncorrected exposure coefficient times V / (V - tau2).
/// Throws InfeasibleCorrectionError when V <= tau2.
CorrectionResult correct_rc(const Dataset& data, const AnalysisSpec& spec, const ErrorVariance& tau2);

/// Averaged exposure coefficient at every lambda of the grid, in grid order.
/// Pseudo-dataset b at grid index g draws its noise from its own stream
/// stream_seed(cfg.seed, {g, b}).
std::vector<SimexPoint> simex_estimates_per_lambda(const Dataset& data, const AnalysisSpec& spec,
                                                   const ErrorVariance& tau2,
                                                   const SimexConfig& cfg);

struct Extrapolation {
  double value_at_minus_one = 0.0;
  Eigen::VectorXd coefficients; // constant term first
};

/// Least-squares polynomial in lambda evaluated at lambda = -1.
/// Throws ConfigError with too few distinct lambda values.
Extrapolation extrapolate(std::span<const SimexPoint> points, Extrapolant extrapolant);

CorrectionResult correct_simex(const Dataset& data, const AnalysisSpec& spec,
                               const ErrorVariance& tau2, const SimexConfig& cfg);

/// Runs the named corrector: uncorrected, rc or simex.
CorrectionResult correct(Method method, const Dataset& data, const AnalysisSpec& spec,
                         const ErrorVariance& tau2, const SimexConfig& cfg);

struct BootstrapResult {
  ConfidenceInterval ci;
  std::size_t n_used = 0;
  std::size_t n_failed = 0;
};

/// Percentile bootstrap interval for the corrected exposure coefficient.
///
/// Rows are resampled with replacement and the whole corrector is rerun,
/// including V for regression calibration. tau2 is re-estimated from the
/// resampled replicate columns when its source is `replicates` and held
/// fixed otherwise. Replicate b uses stream_seed(boot.seed, {b}) for the
/// resample and derives its SIMEX seed from the same stream.
/// Throws BootstrapError when more than boot.max_failure_fraction of the
/// replicates fail.
BootstrapResult bootstrap_ci(const Dataset& data, const AnalysisSpec& spec, Method corrector,
                             const ErrorVariance& tau2, const SimexConfig& cfg,
                             const BootstrapConfig& boot);

/// Type 7 (linear interpolation) sample quantile; `sorted` ascending.
double quantile_sorted(std::span<const double> sorted, double prob);

} // namespace mecor
