#pragma once

// Test-only helpers: temporary directories and independent oracles that do
// not share code paths with the library under test.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mecor::test {

class TempDir {
public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mecor_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& contents) const {
    const auto p = file(name);
    std::ofstream(p, std::ios::binary) << contents;
    return p;
  }

private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Gaussian elimination with partial pivoting in long double.
inline std::vector<long double> solve_dense(std::vector<std::vector<long double>> a,
                                            std::vector<long double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const long double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<long double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    long double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

// OLS through the normal equations X'X b = X'y.
inline std::vector<double> normal_equations_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const auto p = static_cast<std::size_t>(x.cols());
  std::vector<std::vector<long double>> xtx(p, std::vector<long double>(p, 0.0L));
  std::vector<long double> xty(p, 0.0L);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += static_cast<long double>(x(i, static_cast<Eigen::Index>(a))) * y(i);
      for (std::size_t b = 0; b < p; ++b) {
        xtx[a][b] += static_cast<long double>(x(i, static_cast<Eigen::Index>(a))) *
                     x(i, static_cast<Eigen::Index>(b));
      }
    }
  }
  const auto sol = solve_dense(xtx, xty);
  return {sol.begin(), sol.end()};
}

// Least-squares polynomial of the given degree through (t, v), evaluated at `at`.
inline double polyfit_eval(const std::vector<double>& t, const std::vector<double>& v, int degree,
                           double at) {
  const auto p = static_cast<std::size_t>(degree + 1);
  std::vector<std::vector<long double>> m(p, std::vector<long double>(p, 0.0L));
  std::vector<long double> r(p, 0.0L);
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      r[a] += std::pow(static_cast<long double>(t[i]), a) * v[i];
      for (std::size_t b = 0; b < p; ++b) {
        m[a][b] += std::pow(static_cast<long double>(t[i]), a + b);
      }
    }
  }
  const auto c = solve_dense(m, r);
  long double out = 0.0L;
  for (std::size_t a = 0; a < p; ++a) out += c[a] * std::pow(static_cast<long double>(at), a);
  return static_cast<double>(out);
}

} // namespace mecor::test
