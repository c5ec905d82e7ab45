#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace notescreen {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Matrix&) const = default;
};

// y = M x
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (x.size() != m.cols || y.size() != m.rows) throw std::invalid_argument("matvec: shape mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y = M^T x
inline void matvec_t(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (x.size() != m.rows || y.size() != m.cols) throw std::invalid_argument("matvec_t: shape mismatch");
  for (std::size_t c = 0; c < m.cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
}

// M += scale * a b^T
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b,
                      double scale = 1.0) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double ar = scale * a[r];
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += ar * b[c];
  }
}

// C = A B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

}  // namespace notescreen
