#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "oasislab/error.hpp"

namespace oasis {

// Dense row-major tensor of doubles. The single numeric carrier for the
// whole library: hidden states, logits, attention weights, parameters.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == static_cast<std::size_t>(checked_numel(shape_)),
            ErrorKind::Dimension, "tensor data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t extent(int axis) const { return shape_.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Row-major addressing for the common ranks.
  double& at(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double at(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  std::span<double> row(std::int64_t i) {
    const auto cols = static_cast<std::size_t>(shape_[rank() - 1]);
    return {data_.data() + static_cast<std::size_t>(i) * cols, cols};
  }
  std::span<const double> row(std::int64_t i) const {
    const auto cols = static_cast<std::size_t>(shape_[rank() - 1]);
    return {data_.data() + static_cast<std::size_t>(i) * cols, cols};
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Text dump: header line "shape: d1 d2 ..." then row-major values with
  // 17 significant digits. load() parses the same format.
  void dump(std::ostream& os) const;
  static Tensor load(std::istream& is);

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
      require(e > 0, ErrorKind::Dimension, "tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace oasis
