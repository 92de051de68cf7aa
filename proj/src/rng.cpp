#include "oasislab/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "oasislab/error.hpp"

namespace oasis {

namespace {

inline std::uint64_t splitmix64_step(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64_step(state_); }

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::next_below(std::int64_t n) {
  require(n > 0, ErrorKind::Parameter, "next_below requires n > 0");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % un;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::int64_t>(x % un);
}

double Rng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0,1] so log never sees zero.
  const double u1 = 1.0 - next_double();
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::fork(std::string_view label, std::uint64_t index) const {
  std::uint64_t h = seed_;
  h ^= fnv1a64(label) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  h ^= (index + 1) * 0xD6E8FEB86659FD93ull + (h << 6) + (h >> 2);
  splitmix64_step(h);
  return Rng(h);
}

Tensor sample_gaussian(Rng& rng, std::vector<std::int64_t> shape, double mean,
                       double std) {
  require(std >= 0.0, ErrorKind::Parameter, "sample_gaussian requires std >= 0");
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = mean + std * rng.next_gaussian();
  }
  return t;
}

}  // namespace oasis
