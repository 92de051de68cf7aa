#include "oasislab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oasis {

namespace {
// Below this many multiply-adds the omp fork overhead dominates.
constexpr std::int64_t kParallelGrain = 1 << 15;
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Dimension,
          "matmul expects rank-2 tensors");
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  require(b.extent(0) == k, ErrorKind::Dimension, "matmul inner extents differ");
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelGrain)
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        acc += pa[i * k + p] * pb[p * n + j];
      }
      pc[i * n + j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Dimension,
          "matmul_tn expects rank-2 tensors");
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  require(b.extent(0) == m, ErrorKind::Dimension,
          "matmul_tn outer extents differ");
  Tensor c({k, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelGrain)
  for (std::int64_t i = 0; i < k; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < m; ++p) {
        acc += pa[p * k + i] * pb[p * n + j];
      }
      pc[i * n + j] = acc;
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Dimension,
          "matmul_nt expects rank-2 tensors");
  const std::int64_t m = a.extent(0), n = a.extent(1), k = b.extent(0);
  require(b.extent(1) == n, ErrorKind::Dimension,
          "matmul_nt inner extents differ");
  Tensor c({m, k});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelGrain)
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < n; ++p) {
        acc += pa[i * n + p] * pb[j * n + p];
      }
      pc[i * k + j] = acc;
    }
  }
  return c;
}

namespace {
template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f, const char* name) {
  require(a.same_shape(b), ErrorKind::Dimension,
          std::string(name) + ": shape mismatch");
  Tensor c(a.shape());
  const std::int64_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) pc[i] = f(pa[i], pb[i]);
  return c;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x * y; }, "hadamard");
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  const double* pa = a.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  return out;
}

Tensor axpy(const Tensor& a, double c, const Tensor& b) {
  return zip(a, b, [c](double x, double y) { return x + c * y; }, "axpy");
}

void add_in_place(Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrorKind::Dimension, "add_in_place: shape mismatch");
  double* pa = a.data();
  const double* pb = b.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) pa[i] += pb[i];
}

double sum(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc;
}

double max_abs(std::span<const double> xs) {
  double m = 0.0;
  for (double x : xs) m = std::max(m, std::abs(x));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double log_sum_exp(std::span<const double> z, bool extra_one) {
  double m = extra_one ? 0.0 : -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  if (!extra_one && z.empty()) return -std::numeric_limits<double>::infinity();
  if (m == -std::numeric_limits<double>::infinity()) {
    // every entry masked out
    return extra_one ? 0.0 : m;
  }
  double acc = extra_one ? std::exp(-m) : 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

double softplus(double x) {
  // log(1 + e^x) without overflow on either side
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace oasis
