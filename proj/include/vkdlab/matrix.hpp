// Dense row-major matrix, 64-bit floats throughout.
//
// matmul() is the OpenMP kernel (rows are independent, so the result is
// bit-identical for any thread count); serial::matmul is the plain
// reference kept for tests and the benchmark.

#pragma once

#include <cstddef>
#include <vector>

#include "vkdlab/errors.hpp"

namespace vkdlab {

using Vec = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // row-major, data.size() == rows * cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  bool operator==(const Matrix& other) const = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// Throws NumericError if any entry is NaN/Inf.
void check_finite(const Vec& v, const char* what);
void check_finite(const Matrix& m, const char* what);

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
}

}  // namespace vkdlab
