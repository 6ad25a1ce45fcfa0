#pragma once

#include "mama/matrix.hpp"

// Dense products used by the autograd engine and the losses.
//
// The default kernels parallelize over output rows with OpenMP. Each output
// element is still reduced serially over the inner dimension in ascending
// order, so results are bit-identical to the serial reference regardless of
// thread count. The serial versions are kept for tests and benchmarks.
namespace mama::kernels {

// out = a·b (or out += a·b when accumulate is set). out is resized unless accumulating.
void gemm(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
// out = a·bᵀ
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
// out = aᵀ·b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

namespace serial {
void gemm(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
}  // namespace serial

// Work (multiply-adds) below which the OpenMP kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace mama::kernels
