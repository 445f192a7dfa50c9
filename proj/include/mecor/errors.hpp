#pragma once

#include <stdexcept>
#include <string>

namespace mecor {

// Root of every error the library raises. Callers that only care about
// "the analysis failed" catch this; the subclasses let the CLI and the
// simulation harness tell failure modes apart.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input data or a column-role specification that does not match it.
class DataError : public Error {
public:
  using Error::Error;
};

// Parameter values outside their documented domain.
class ConfigError : public Error {
public:
  using Error::Error;
};

class SingularDesignError : public Error {
public:
  using Error::Error;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

// The assumed error variance is at least the conditional variance of the
// error-prone exposure, so V / (V - tau2) is undefined or negative.
class InfeasibleCorrectionError : public Error {
public:
  InfeasibleCorrectionError(double tau2, double exposure_variance);

  double tau2() const noexcept { return tau2_; }
  double exposure_variance() const noexcept { return exposure_variance_; }

private:
  double tau2_;
  double exposure_variance_;
};

class BootstrapError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace mecor
