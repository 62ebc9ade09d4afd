#include "asxai/nn.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "asxai/errors.hpp"

namespace asxai::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

}  // namespace

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding)
    : weight({out_channels, in_channels, kernel, kernel}),
      bias({out_channels}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
    throw ValidationError("Conv2d: channel counts, kernel and stride must be positive");
  }
}

void Conv2d::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_ * kernel_ * kernel_));
  for (double& w : weight.values()) w = rng.normal(0.0, stddev);
  bias.fill(0.0);
}

std::size_t Conv2d::output_extent(std::size_t input_extent) const {
  const std::size_t padded = input_extent + 2 * padding_;
  if (padded < kernel_) throw DimensionError("Conv2d: input smaller than kernel");
  return (padded - kernel_) / stride_ + 1;
}

namespace {

// col is [in*k*k, Ho*Wo]
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
  const long hl = static_cast<long>(h);
  const long wl = static_cast<long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            row[oy * wo + ox] = (iy >= 0 && iy < hl && ix >= 0 && ix < wl)
                                    ? x[(c * h + static_cast<std::size_t>(iy)) * w +
                                        static_cast<std::size_t>(ix)]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* x) {
  const long hl = static_cast<long>(h);
  const long wl = static_cast<long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= hl) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= wl) continue;
            x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw DimensionError("Conv2d: expected [B, " + std::to_string(in_) + ", H, W], got " +
                         shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = output_extent(h), wo = output_extent(w);
  const std::size_t patch = in_ * kernel_ * kernel_;
  Tensor y({batch, out_, ho, wo});
  const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  std::vector<double> col(pointwise ? 0 : patch * ho * wo);
  ConstRowMap wmat(weight.data(), static_cast<long>(out_), static_cast<long>(patch));
  Eigen::Map<const Eigen::VectorXd> b(bias.data(), static_cast<long>(out_));
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = x.data() + n * in_ * h * w;
    const double* cp = xn;
    if (!pointwise) {
      im2col(xn, in_, h, w, kernel_, stride_, padding_, ho, wo, col.data());
      cp = col.data();
    }
    ConstRowMap cmat(cp, static_cast<long>(patch), static_cast<long>(ho * wo));
    RowMap ymat(y.data() + n * out_ * ho * wo, static_cast<long>(out_), static_cast<long>(ho * wo));
    ymat.noalias() = wmat * cmat;
    ymat.colwise() += b;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out, Tensor* grad_weight,
                        Tensor* grad_bias, bool need_input_grad) const {
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = output_extent(h), wo = output_extent(w);
  if (grad_out.shape() != std::vector<std::size_t>{batch, out_, ho, wo}) {
    throw DimensionError("Conv2d::backward: grad shape " + shape_string(grad_out.shape()));
  }
  const std::size_t patch = in_ * kernel_ * kernel_;
  const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  Tensor grad_x;
  if (need_input_grad) grad_x = Tensor({batch, in_, h, w});
  std::vector<double> col(pointwise ? 0 : patch * ho * wo);
  std::vector<double> grad_col(patch * ho * wo);
  ConstRowMap wmat(weight.data(), static_cast<long>(out_), static_cast<long>(patch));
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = x.data() + n * in_ * h * w;
    ConstRowMap gmat(grad_out.data() + n * out_ * ho * wo, static_cast<long>(out_),
                     static_cast<long>(ho * wo));
    if (grad_weight) {
      const double* cp = xn;
      if (!pointwise) {
        im2col(xn, in_, h, w, kernel_, stride_, padding_, ho, wo, col.data());
        cp = col.data();
      }
      ConstRowMap cmat(cp, static_cast<long>(patch), static_cast<long>(ho * wo));
      RowMap gw(grad_weight->data(), static_cast<long>(out_), static_cast<long>(patch));
      gw.noalias() += gmat * cmat.transpose();
    }
    if (grad_bias) {
      Eigen::Map<Eigen::VectorXd> gb(grad_bias->data(), static_cast<long>(out_));
      gb += gmat.rowwise().sum();
    }
    if (need_input_grad) {
      double* gx = grad_x.data() + n * in_ * h * w;
      if (pointwise) {
        RowMap gxm(gx, static_cast<long>(in_), static_cast<long>(h * w));
        gxm.noalias() = wmat.transpose() * gmat;
      } else {
        RowMap gc(grad_col.data(), static_cast<long>(patch), static_cast<long>(ho * wo));
        gc.noalias() = wmat.transpose() * gmat;
        col2im(grad_col.data(), in_, h, w, kernel_, stride_, padding_, ho, wo, gx);
      }
    }
  }
  return grad_x;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& grad_y) {
  Tensor g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(y[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_y) {
  Tensor g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
  return g;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(learning_rate > 0.0)) throw ValidationError("Adam: learning rate must be positive");
}

void Adam::step(std::size_t slot, std::span<double> param, std::span<const double> grad) {
  if (param.size() != grad.size()) throw DimensionError("Adam: parameter/gradient size mismatch");
  if (slot >= slots_.size()) slots_.resize(slot + 1);
  Slot& s = slots_[slot];
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * grad[i];
    s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
    param[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
  }
}

}  // namespace asxai::nn
