#include "mecor/dataset.hpp"

#include "mecor/errors.hpp"
#include "mecor/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mecor {

Dataset::Dataset(std::vector<std::string> column_names, Eigen::MatrixXd values)
    : column_names_(std::move(column_names)), values_(std::move(values)) {
  if (static_cast<Eigen::Index>(column_names_.size()) != values_.cols()) {
    throw DataError("dataset has " + std::to_string(column_names_.size()) + " names but " +
                    std::to_string(values_.cols()) + " columns");
  }
  if (values_.rows() < 1) {
    throw DataError("dataset has no rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : column_names_) {
    if (!seen.insert(name).second) {
      throw DataError("duplicate column name: " + name);
    }
  }
  for (Eigen::Index j = 0; j < values_.cols(); ++j) {
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
      if (!std::isfinite(values_(i, j))) {
        throw DataError("non-finite value at row " + std::to_string(i + 1) + ", column '" +
                        column_names_[static_cast<std::size_t>(j)] + "'");
      }
    }
  }
}

bool Dataset::has_column(const std::string& name) const noexcept {
  for (const auto& c : column_names_) {
    if (c == name) {
      return true;
    }
  }
  return false;
}

std::size_t Dataset::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < column_names_.size(); ++j) {
    if (column_names_[j] == name) {
      return j;
    }
  }
  throw DataError("column not found: " + name);
}

Eigen::VectorXd Dataset::column(const std::string& name) const {
  return values_.col(static_cast<Eigen::Index>(column_index(name)));
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), values_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(rows[i]));
  }
  return Dataset(column_names_, std::move(out));
}

Dataset Dataset::with_column(const std::string& name, const Eigen::VectorXd& values) const {
  if (values.size() != values_.rows()) {
    throw DataError("replacement column has wrong length");
  }
  Eigen::MatrixXd out = values_;
  out.col(static_cast<Eigen::Index>(column_index(name))) = values;
  return Dataset(column_names_, std::move(out));
}

void validate(const AnalysisSpec& spec, const Dataset& data) {
  if (spec.exposure_replicates.empty()) {
    throw DataError("at least one exposure column is required");
  }
  std::vector<std::string> all;
  all.push_back(spec.outcome);
  all.insert(all.end(), spec.exposure_replicates.begin(), spec.exposure_replicates.end());
  all.insert(all.end(), spec.covariates.begin(), spec.covariates.end());
  std::unordered_set<std::string> seen;
  for (const auto& name : all) {
    if (!data.has_column(name)) {
      throw DataError("column not found: " + name);
    }
    if (!seen.insert(name).second) {
      throw DataError("column used in more than one role: " + name);
    }
  }
}

namespace {

bool parse_number(std::string_view cell, double& out) {
  cell = trim(cell);
  if (cell.empty()) {
    return false;
  }
  if (cell.front() == '+') {
    cell.remove_prefix(1);
  }
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, out, std::chars_format::general);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

} // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open file: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("empty file: " + path.string());
  }
  std::vector<std::string> header;
  for (auto& field : split(line, ',')) {
    header.emplace_back(trim(field));
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : header) {
    if (name.empty()) {
      throw DataError("empty column name in header");
    }
    if (!seen.insert(name).second) {
      throw DataError("duplicate column name: " + name);
    }
  }

  std::vector<double> cells;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  std::size_t pending_blank = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      ++pending_blank;
      continue;
    }
    if (pending_blank > 0) {
      throw DataError("blank line inside data before line " + std::to_string(line_no));
    }
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(rows + 1) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_number(fields[j], v)) {
        throw DataError("non-numeric or empty cell '" + std::string(trim(fields[j])) + "' at row " +
                        std::to_string(rows + 1) + ", column '" + header[j] + "'");
      }
      cells.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) {
    throw DataError("no data rows in " + path.string());
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(header.size()));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cells[i * header.size() + j];
    }
  }
  return Dataset(std::move(header), std::move(values));
}

Dataset load_csv(const std::filesystem::path& path, const AnalysisSpec& spec) {
  Dataset data = load_csv(path);
  validate(spec, data);
  return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ostringstream out;
  const auto& names = data.column_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    out << (j ? "," : "") << names[j];
  }
  out << '\n';
  const auto& v = data.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      out << (j ? "," : "") << format_double(v(i, j));
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

Eigen::MatrixXd design_matrix(const Dataset& data, const std::string& exposure_col,
                              const std::vector<std::string>& covariates) {
  const auto n = static_cast<Eigen::Index>(data.n_rows());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(2 + covariates.size()));
  x.col(0).setOnes();
  x.col(1) = data.column(exposure_col);
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j + 2)) = data.column(covariates[j]);
  }
  return x;
}

Eigen::MatrixXd covariate_matrix(const Dataset& data, const std::vector<std::string>& covariates) {
  const auto n = static_cast<Eigen::Index>(data.n_rows());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(1 + covariates.size()));
  x.col(0).setOnes();
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j + 1)) = data.column(covariates[j]);
  }
  return x;
}

} // namespace mecor
