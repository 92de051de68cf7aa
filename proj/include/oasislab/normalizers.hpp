#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oasislab/tensor.hpp"

namespace oasis {

enum class NormKind : int {
  Softmax,
  Softmax1,
  ClippedSoftmax,
  Sparsemax,
  Entmax15,
};

const char* norm_kind_name(NormKind kind);
NormKind norm_kind_from_name(const std::string& name);

// gamma/zeta are the ClippedSoftmax stretch endpoints; gamma < zeta required.
struct NormalizerSpec {
  NormKind kind = NormKind::Softmax;
  double gamma = -0.03;
  double zeta = 1.0;

  void validate() const;
};

// probs holds the real-slot weights (masked slots are exactly 0).
// null_mass is the implicit-null weight; 0 for kinds without a null channel.
// fully_masked flags the all-slots-masked case for null-free kinds.
struct NormalizedWeights {
  std::vector<double> probs;
  double null_mass = 0.0;
  bool fully_masked = false;
};

using Mask = std::span<const std::uint8_t>;  // 1 = slot masked out

NormalizedWeights normalize(const NormalizerSpec& spec,
                            std::span<const double> z, Mask mask = {});

// Analytic Jacobian d probs / d z, n x n; masked slots give zero rows and
// columns. Sparsemax/Entmax15 use the closed forms over the support set.
Tensor jacobian(const NormalizerSpec& spec, std::span<const double> z,
                Mask mask = {});

// Null mass of normalize(z + c * 1). Softmax1 only.
double null_mass_under_shift(const NormalizerSpec& spec,
                             std::span<const double> z, double c);

// Reverse-mode pullback: dz = J_probs^T * dprobs + (d null / d z) * dnull,
// evaluated from the forward result without re-sorting. Backs the training
// tape for every normalizer kind.
void normalize_vjp(const NormalizerSpec& spec, std::span<const double> z,
                   Mask mask, const NormalizedWeights& w,
                   std::span<const double> dprobs, double dnull,
                   std::span<double> dz);

}  // namespace oasis
