#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace asxai {

/// Dense row-major tensor of doubles with up to four dimensions.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(double v);
  bool all_finite() const;
  Tensor reshaped(std::vector<std::size_t> shape) const;

  /// Copy of the leading-axis slice [begin, end).
  Tensor slice(std::size_t begin, std::size_t end) const;
  /// Copy of entry `index` along the leading axis, with that axis dropped.
  Tensor at(std::size_t index) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

/// Concatenates tensors along the existing leading axis.
Tensor concat(std::span<const Tensor> parts);

/// FNV-1a over the raw bytes; used for freeze and determinism checks.
std::uint64_t checksum(const Tensor& t);
std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace asxai
