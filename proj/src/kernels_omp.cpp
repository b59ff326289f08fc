#include <omp.h>

#include <cmath>

#include "abpt/kernels.hpp"

namespace abpt::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace parallel {

namespace {
bool worth_it(GemmShape s) {
  return static_cast<std::size_t>(s.m) * s.k * s.n >= kParallelWorkThreshold && s.m > 1;
}
}  // namespace

// Same per-element reduction order as serial::gemm_nn; rows are split across threads.
void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (worth_it(s))
  for (int i = 0; i < s.m; ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * s.n;
    const double* ai = a.data() + static_cast<std::size_t>(i) * s.k;
    for (int p = 0; p < s.k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + static_cast<std::size_t>(p) * s.n;
      for (int j = 0; j < s.n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (worth_it(s))
  for (int i = 0; i < s.m; ++i) {
    const double* ai = a.data() + static_cast<std::size_t>(i) * s.k;
    for (int j = 0; j < s.n; ++j) {
      const double* bj = b.data() + static_cast<std::size_t>(j) * s.k;
      double acc = 0.0;
      for (int p = 0; p < s.k; ++p) acc += ai[p] * bj[p];
      c[static_cast<std::size_t>(i) * s.n + j] += acc;
    }
  }
}

// Output rows are columns of A, so each thread owns whole output rows and
// walks the shared reduction index p in order.
void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (worth_it(s))
  for (int i = 0; i < s.m; ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * s.n;
    for (int p = 0; p < s.k; ++p) {
      const double api = a[static_cast<std::size_t>(p) * s.m + i];
      const double* bp = b.data() + static_cast<std::size_t>(p) * s.n;
      for (int j = 0; j < s.n; ++j) ci[j] += api * bp[j];
    }
  }
}

void tanh_forward(std::span<const double> x, std::span<double> y) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelWorkThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static) if (y.size() >= kParallelWorkThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

}  // namespace parallel
}  // namespace abpt::kernels
