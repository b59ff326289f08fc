#include <cmath>

#include "abpt/kernels.hpp"

namespace abpt::kernels::serial {

void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
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

void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
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
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

}  // namespace abpt::kernels::serial
