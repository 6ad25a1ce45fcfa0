#include "mama/kernels.hpp"

#include <algorithm>

#include "mama/errors.hpp"

namespace mama::kernels {
namespace {

void prepare(Matrix& out, std::size_t rows, std::size_t cols, bool accumulate, const char* op) {
  if (accumulate) {
    if (out.rows() != rows || out.cols() != cols)
      throw ShapeError(std::string(op) + ": accumulator shape " + out.shape_string());
  } else {
    out = Matrix(rows, cols);
  }
}

void check_inner(std::size_t lhs, std::size_t rhs, const Matrix& a, const Matrix& b,
                 const char* op) {
  if (lhs != rhs)
    throw ShapeError(std::string(op) + ": " + a.shape_string() + " with " + b.shape_string());
}

// Row kernels shared by the serial and parallel drivers so both reduce in the
// same order.
inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  double* orow = out.data() + i * n;
  const double* arow = a.data() + i * inner;
  for (std::size_t k = 0; k < inner; ++k) {
    const double av = arow[k];
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t inner = a.cols();
  const std::size_t n = b.rows();
  double* orow = out.data() + i * n;
  const double* arow = a.data() + i * inner;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.data() + j * inner;
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
    orow[j] += acc;
  }
}

inline void gemm_tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t inner = a.rows();
  const std::size_t m = a.cols();
  const std::size_t n = b.cols();
  double* orow = out.data() + i * n;
  for (std::size_t k = 0; k < inner; ++k) {
    const double av = a.data()[k * m + i];
    if (av == 0.0) continue;
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
  }
}

}  // namespace

void gemm(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.cols(), b.rows(), a, b, "gemm");
  prepare(out, a.rows(), b.cols(), accumulate, "gemm");
  const auto rows = static_cast<long>(a.rows());
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i) gemm_row(a, b, out, static_cast<std::size_t>(i));
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.cols(), b.cols(), a, b, "gemm_nt");
  prepare(out, a.rows(), b.rows(), accumulate, "gemm_nt");
  const auto rows = static_cast<long>(a.rows());
  const bool par = a.rows() * a.cols() * b.rows() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i) gemm_nt_row(a, b, out, static_cast<std::size_t>(i));
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.rows(), b.rows(), a, b, "gemm_tn");
  prepare(out, a.cols(), b.cols(), accumulate, "gemm_tn");
  const auto rows = static_cast<long>(a.cols());
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i) gemm_tn_row(a, b, out, static_cast<std::size_t>(i));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm_nt(a, b, out);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm_tn(a, b, out);
  return out;
}

namespace serial {

void gemm(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.cols(), b.rows(), a, b, "gemm");
  prepare(out, a.rows(), b.cols(), accumulate, "gemm");
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, out, i);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.cols(), b.cols(), a, b, "gemm_nt");
  prepare(out, a.rows(), b.rows(), accumulate, "gemm_nt");
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_nt_row(a, b, out, i);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check_inner(a.rows(), b.rows(), a, b, "gemm_tn");
  prepare(out, a.cols(), b.cols(), accumulate, "gemm_tn");
  for (std::size_t i = 0; i < a.cols(); ++i) gemm_tn_row(a, b, out, i);
}

}  // namespace serial
}  // namespace mama::kernels
