#include "mecor/linreg.hpp"

#include "mecor/errors.hpp"

#include <cmath>
#include <string>

namespace mecor {

namespace {

void check_shape(const Eigen::MatrixXd& x, Eigen::Index y_len) {
  if (x.rows() != y_len) {
    throw DataError("design has " + std::to_string(x.rows()) + " rows but response has " +
                    std::to_string(y_len));
  }
  if (x.cols() < 1) {
    throw DataError("design has no columns");
  }
  if (x.rows() <= x.cols()) {
    throw InsufficientDataError("need more rows than parameters: n = " + std::to_string(x.rows()) +
                                ", p = " + std::to_string(x.cols()));
  }
}

void check_rank(const Eigen::MatrixXd& r) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  const auto& s = svd.singularValues();
  const double largest = s(0);
  const double smallest = s(s.size() - 1);
  if (!(largest > 0.0) || smallest / largest < kRankTolerance) {
    throw SingularDesignError("design matrix is rank deficient (condition ratio " +
                              std::to_string(largest > 0.0 ? smallest / largest : 0.0) + ")");
  }
}

} // namespace

FitResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  check_shape(x, y.size());
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  check_rank(r);

  const Eigen::VectorXd qty = qr.householderQ().adjoint() * y;
  FitResult fit;
  fit.n = static_cast<std::size_t>(n);
  fit.p = static_cast<std::size_t>(p);
  fit.coefficients = r.triangularView<Eigen::Upper>().solve(qty.head(p));

  const double rss = qty.tail(n - p).squaredNorm();
  fit.residual_variance = rss / static_cast<double>(n - p);

  // (X'X)^-1 = R^-1 R^-T; its diagonal is the row norms of R^-1.
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  fit.standard_errors = (r_inv.rowwise().squaredNorm() * fit.residual_variance).cwiseSqrt();

  const double tss = (y.array() - y.mean()).square().sum();
  fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  return fit;
}

double residual_variance_of(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  return ols_fit(x, v).residual_variance;
}

PartialSlope::PartialSlope(const Eigen::MatrixXd& nuisance, Eigen::VectorXd y) : y_(std::move(y)) {
  // One extra column for the exposure itself.
  if (nuisance.rows() != y_.size()) {
    throw DataError("nuisance design and response lengths differ");
  }
  if (nuisance.rows() <= nuisance.cols() + 1) {
    throw InsufficientDataError("need more rows than parameters");
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(nuisance);
  const Eigen::Index q = nuisance.cols();
  check_rank(qr.matrixQR().topLeftCorner(q, q).triangularView<Eigen::Upper>());
  q_ = qr.householderQ() * Eigen::MatrixXd::Identity(nuisance.rows(), q);
}

double PartialSlope::coefficient(const Eigen::VectorXd& exposure) const {
  if (exposure.size() != y_.size()) {
    throw DataError("exposure length differs from response length");
  }
  const Eigen::VectorXd resid = exposure - q_ * (q_.transpose() * exposure);
  const double rr = resid.squaredNorm();
  if (!(rr > kRankTolerance * kRankTolerance * exposure.squaredNorm())) {
    throw SingularDesignError("exposure is collinear with the covariates");
  }
  return resid.dot(y_) / rr;
}

} // namespace mecor
