#include "asxai/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>

#include "asxai/errors.hpp"

namespace asxai {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {
  if (shape_.empty() || shape_.size() > 4) {
    throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (product(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  out.data_ = data_;
  return out;
}

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > shape_.at(0)) throw DimensionError("slice out of range");
  std::vector<std::size_t> shape = shape_;
  shape[0] = end - begin;
  const std::size_t stride = data_.size() / shape_[0];
  Tensor out(shape);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
            data_.begin() + static_cast<std::ptrdiff_t>(end * stride), out.data_.begin());
  return out;
}

Tensor Tensor::at(std::size_t index) const {
  if (shape_.size() < 2) throw DimensionError("at() needs rank >= 2");
  Tensor s = slice(index, index + 1);
  return s.reshaped(std::vector<std::size_t>(shape_.begin() + 1, shape_.end()));
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  std::vector<std::size_t> shape{parts.size()};
  for (std::size_t d : parts[0].shape()) shape.push_back(d);
  Tensor out(shape);
  const std::size_t stride = parts[0].size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != parts[0].shape()) throw DimensionError("stack: shape mismatch");
    std::copy(parts[i].data(), parts[i].data() + stride, out.data() + i * stride);
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  std::vector<std::size_t> shape = parts[0].shape();
  shape[0] = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat: shape mismatch");
    }
    shape[0] += p.dim(0);
  }
  Tensor out(shape);
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = fnv1a(t.shape().data(), t.shape().size() * sizeof(std::size_t));
  return fnv1a(t.data(), t.size() * sizeof(double), h);
}

}  // namespace asxai
