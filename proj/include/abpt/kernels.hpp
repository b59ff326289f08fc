#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff tape. Every kernel exists twice: a serial
// reference used by the tests, and an OpenMP version used at runtime. The two
// produce bitwise-identical results because each output element is reduced in
// the same order; only the distribution of output rows over threads differs.
namespace abpt::kernels {

// Row-major matrices. C (m x n) += A (m x k) * B (k x n).
struct GemmShape {
  int m = 0;
  int k = 0;
  int n = 0;
};

namespace serial {
void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
// C (m x n) += A (m x k) * B^T, with B stored as (n x k).
void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
// C (m x n) += A^T * B, with A stored as (k x m) and B as (k x n).
void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void tanh_forward(std::span<const double> x, std::span<double> y);
// dx += dy * (1 - y^2)
void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);
}  // namespace serial

namespace parallel {
void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void tanh_forward(std::span<const double> x, std::span<double> y);
void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);
}  // namespace parallel

// Below this many multiply-adds the parallel kernels run on the calling thread.
inline constexpr std::size_t kParallelWorkThreshold = 1u << 15;

int max_threads();

}  // namespace abpt::kernels
