#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace mecor {

/// Ordinary least squares fit. Coefficient order follows the design matrix
/// columns (intercept, exposure, covariates for the outcome model).
struct FitResult {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd standard_errors;
  double residual_variance = 0.0; // RSS / (n - p)
  double r_squared = 0.0;
  std::size_t n = 0;
  std::size_t p = 0;

  std::size_t degrees_of_freedom() const noexcept { return n - p; }
};

// Smallest / largest singular value of the design below this is singular.
inline constexpr double kRankTolerance = 1e-10;

/// Householder QR solve with a singular-value rank check on R.
/// Throws InsufficientDataError when n <= p, SingularDesignError when the
/// design is rank deficient, DataError on a length mismatch.
FitResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// RSS / (n - p) of v regressed on x. With an intercept-only x this is the
/// unbiased sample variance of v.
double residual_variance_of(const Eigen::MatrixXd& x, const Eigen::VectorXd& v);

/// Exposure coefficient of y ~ [nuisance, exposure] for many candidate
/// exposure vectors against a fixed nuisance design and outcome.
///
/// By Frisch-Waugh-Lovell the coefficient equals <r, y> / <r, r> where r is
/// the exposure residualised on the nuisance columns, so the nuisance QR is
/// factored once and each call costs O(n * q).
class PartialSlope {
public:
  /// Throws like ols_fit when the nuisance design is unusable.
  PartialSlope(const Eigen::MatrixXd& nuisance, Eigen::VectorXd y);

  /// Throws SingularDesignError when the exposure lies in the nuisance span.
  double coefficient(const Eigen::VectorXd& exposure) const;

private:
  Eigen::MatrixXd q_; // orthonormal basis of the nuisance columns, n x q
  Eigen::VectorXd y_;
};

} // namespace mecor
