#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asxai/rng.hpp"
#include "asxai/tensor.hpp"

namespace asxai::nn {

/// 2-D convolution over NCHW tensors (square kernel, symmetric zero padding).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding);

  /// He-normal weights, zero bias.
  void init_he(Rng& rng);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }
  std::size_t output_extent(std::size_t input_extent) const;

  Tensor forward(const Tensor& x) const;

  /// Gradient with respect to `x`. Parameter gradients are accumulated into
  /// `grad_weight` / `grad_bias` when non-null; the input gradient is skipped
  /// (empty tensor returned) when `need_input_grad` is false.
  Tensor backward(const Tensor& x, const Tensor& grad_out, Tensor* grad_weight, Tensor* grad_bias,
                  bool need_input_grad = true) const;

  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t kernel_ = 1;
  std::size_t stride_ = 1;
  std::size_t padding_ = 0;
};

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& grad_y);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_y);

/// Adam with per-slot moment buffers. Each parameter tensor owns one slot.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::size_t slot, std::span<double> param, std::span<const double> grad);
  double learning_rate() const { return lr_; }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;
  };
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::vector<Slot> slots_;
};

}  // namespace asxai::nn
