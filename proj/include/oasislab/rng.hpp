#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "oasislab/tensor.hpp"

namespace oasis {

// Deterministic seed-stable generator built on splitmix64. The draw sequence
// depends only on (seed, labels of forks), never on platform or thread count.
// Gaussian draws use Box-Muller on the raw uniform stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double next_double();

  // Uniform integer in [0, n), rejection-sampled so the stream is unbiased.
  std::int64_t next_below(std::int64_t n);

  double next_gaussian();

  // Child stream derived from (seed, label, index); independent of how much
  // of the parent stream has been consumed.
  Rng fork(std::string_view label, std::uint64_t index = 0) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// I.i.d. normal entries, deterministic given the rng stream. std must be >= 0.
Tensor sample_gaussian(Rng& rng, std::vector<std::int64_t> shape, double mean,
                       double std);

}  // namespace oasis
