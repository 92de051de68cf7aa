#pragma once

#include <span>

#include "oasislab/tensor.hpp"

namespace oasis {

// Dense kernels shared by every module. The OpenMP variants parallelize over
// output rows only; each output element is accumulated serially in ascending
// index order, so results are bit-identical for any thread count. A plain
// serial mirror of the hot kernels lives in tests/reference and backs both
// the oracle tests and the benchmark target.

// c[m x n] = a[m x k] * b[k x n], accumulation ascending k.
Tensor matmul(const Tensor& a, const Tensor& b);
// c[k x n] = a[m x k]^T * b[m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// c[m x k] = a[m x n] * b[k x n]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a + c * b
Tensor axpy(const Tensor& a, double c, const Tensor& b);
void add_in_place(Tensor& a, const Tensor& b);

// Fixed left-to-right summation.
double sum(std::span<const double> xs);
double max_abs(std::span<const double> xs);
double dot(std::span<const double> a, std::span<const double> b);

// log(sum exp z) or log(1 + sum exp z); max-subtraction stabilized, the
// implicit null logit 0 joins the max when extra_one is set. Entries may be
// -infinity (masked). Empty z: 0 with extra_one, -infinity without.
double log_sum_exp(std::span<const double> z, bool extra_one);

double softplus(double x);
double sigmoid(double x);

}  // namespace oasis
