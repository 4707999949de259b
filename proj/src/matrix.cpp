#include "vkdlab/matrix.hpp"

#include <cmath>
#include <string>

#include "vkdlab/parallel.hpp"

namespace vkdlab {

void check_finite(const Vec& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

void check_finite(const Matrix& m, const char* what) { check_finite(m.data, what); }

static void require_compatible(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_compatible(a, b);
  Matrix c(a.rows, b.cols);
  // Rows are independent, so any thread count gives bit-identical results.
  const bool big = a.rows * a.cols * b.cols >= 1u << 16;
  const int nt = big && par::enabled() ? par::threads() : 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
  for (long long i = 0; i < static_cast<long long>(a.rows); ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* crow = c.data.data() + static_cast<std::size_t>(i) * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  check_finite(c, "matmul result");
  return c;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_compatible(a, b);
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = a.at(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(k, j);
    }
  }
  check_finite(c, "matmul result");
  return c;
}

}  // namespace serial
}  // namespace vkdlab
