#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asxai/image.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/tensor.hpp"

namespace asxai {

enum class TvTarget { image, features };
TvTarget parse_tv_target(const std::string& name);

struct InversionConfig {
  double lambda_tv = 0.01;
  double beta = 0.05;
  std::size_t iterations = 4000;
  std::size_t log_every = 100;
  /// Where the TV penalty is measured: on z (default) or on Phi(z).
  TvTarget tv_target = TvTarget::image;

  void validate() const;
};

/// (1/CHW) * sum sqrt(dx^2 + dy^2) with forward differences and replicate
/// boundary (the last row/column difference is 0).
double tv_norm(const Tensor& chw);
/// Subgradient of tv_norm; 0 where the local difference vanishes.
Tensor tv_norm_grad(const Tensor& chw);

/// Map Phi with a vector-Jacobian product.
class DifferentiableMap {
 public:
  virtual ~DifferentiableMap() = default;
  virtual std::vector<std::size_t> input_shape() const = 0;
  virtual Tensor forward(const Tensor& z) const = 0;
  /// d<grad_out, Phi(z)>/dz
  virtual Tensor backward(const Tensor& z, const Tensor& grad_out) const = 0;
};

class IdentityMap : public DifferentiableMap {
 public:
  explicit IdentityMap(std::vector<std::size_t> shape) : shape_(std::move(shape)) {}
  std::vector<std::size_t> input_shape() const override { return shape_; }
  Tensor forward(const Tensor& z) const override { return z; }
  Tensor backward(const Tensor&, const Tensor& grad_out) const override { return grad_out; }

 private:
  std::vector<std::size_t> shape_;
};

/// Image [3, 224, 224] (normalized input space) to a model layer's maps
/// [F, 7, 7], optionally restricted to a subset of filters.
class ModelLayerMap : public DifferentiableMap {
 public:
  ModelLayerMap(const ProtoModel& model, RankLayer layer, std::vector<std::size_t> filters = {});
  std::vector<std::size_t> input_shape() const override { return {3, kInputSize, kInputSize}; }
  Tensor forward(const Tensor& z) const override;
  Tensor backward(const Tensor& z, const Tensor& grad_out) const override;
  std::size_t output_channels() const;

 private:
  Tensor select(const Tensor& maps) const;
  const ProtoModel& model_;
  RankLayer layer_;
  std::vector<std::size_t> filters_;
};

struct InversionResult {
  Tensor image;  // z*, same shape as the map's input
  std::vector<std::pair<std::size_t, double>> objective_log;
  double final_objective = 0.0;
  std::size_t iterations_run = 0;
  bool aborted = false;

  std::string log_jsonl() const;
};

/// ||Phi(z) - target||^2 + lambda * tv.
double inversion_objective(const DifferentiableMap& phi, const Tensor& z, const Tensor& target,
                           const InversionConfig& cfg);

/// Gradient descent z <- z - beta * grad from z = 0. A non-finite objective
/// stops the run and returns the last finite iterate.
InversionResult invert_features(const Tensor& target, const DifferentiableMap& phi, const InversionConfig& cfg);

/// Bilinear upsample to 224x224, keep cells at or above the pct percentile.
/// A constant map yields an empty mask and a warning.
std::vector<std::uint8_t> salient_region_mask(const Eigen::MatrixXd& simmap, double threshold_pct,
                                              std::size_t size = kInputSize);

/// Blends `color` into the masked pixels.
Image overlay_mask(const Image& image, const std::vector<std::uint8_t>& mask, const float color[3], float alpha = 0.5f);

/// Undoes input normalization of a [3, H, W] tensor and stretches it to [0, 1].
Image visualize_input(const Tensor& chw);

}  // namespace asxai
