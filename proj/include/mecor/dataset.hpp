#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mecor {

/// Rectangular table of finite reals with named columns. Immutable once
/// constructed, so a single instance can be shared by concurrent workers.
class Dataset {
public:
  /// Throws DataError when names are duplicated, the shape disagrees with
  /// the name count, there are no rows, or any value is not finite.
  Dataset(std::vector<std::string> column_names, Eigen::MatrixXd values);

  std::size_t n_rows() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t n_cols() const noexcept { return static_cast<std::size_t>(values_.cols()); }

  const std::vector<std::string>& column_names() const noexcept { return column_names_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }

  bool has_column(const std::string& name) const noexcept;
  /// Throws DataError("column not found: ...") for unknown names.
  std::size_t column_index(const std::string& name) const;
  Eigen::VectorXd column(const std::string& name) const;

  /// New dataset made of the given rows, in the given order (repeats allowed).
  Dataset select_rows(std::span<const std::size_t> rows) const;
  /// Copy with one column replaced by `values`.
  Dataset with_column(const std::string& name, const Eigen::VectorXd& values) const;

private:
  std::vector<std::string> column_names_;
  Eigen::MatrixXd values_;
};

/// Column roles for an analysis: the outcome, the error-prone exposure
/// measurements (first entry is the one analysed), and adjustment covariates.
struct AnalysisSpec {
  std::string outcome;
  std::vector<std::string> exposure_replicates;
  std::vector<std::string> covariates;

  const std::string& exposure() const { return exposure_replicates.front(); }
  std::size_t replicate_count() const noexcept { return exposure_replicates.size(); }
};

/// Checks that every referenced column exists and that no column plays two
/// roles. Throws DataError.
void validate(const AnalysisSpec& spec, const Dataset& data);

/// Reads a comma-separated file with a header row. Every body cell must be a
/// decimal number; blank lines at the end of the file are ignored.
Dataset load_csv(const std::filesystem::path& path);
/// As above, then validates `spec` against the loaded columns.
Dataset load_csv(const std::filesystem::path& path, const AnalysisSpec& spec);

/// Writes values in shortest round-trip form, so reloading is bit-exact.
void write_csv(const Dataset& data, const std::filesystem::path& path);

/// [1, exposure, covariates...] in declared order.
Eigen::MatrixXd design_matrix(const Dataset& data, const std::string& exposure_col,
                              const std::vector<std::string>& covariates);

/// [1, covariates...]; the nuisance part of the outcome model.
Eigen::MatrixXd covariate_matrix(const Dataset& data, const std::vector<std::string>& covariates);

} // namespace mecor
