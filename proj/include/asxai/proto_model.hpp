#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asxai/nn.hpp"
#include "asxai/rng.hpp"
#include "asxai/tensor.hpp"

namespace asxai {

inline constexpr std::size_t kInputSize = 224;
inline constexpr std::size_t kFeatureGrid = 7;

/// Activation tensor [batch, D, H, W]. Each spatial position's D-vector is a patch.
struct FeatureMap {
  Tensor values;

  FeatureMap() = default;
  explicit FeatureMap(Tensor v);

  std::size_t batch() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
  std::size_t height() const { return values.dim(2); }
  std::size_t width() const { return values.dim(3); }

  /// Patches of sample `b` as rows of a [H*W, D] matrix; row index is h * W + w.
  Eigen::MatrixXd patches(std::size_t b) const;
  std::vector<double> patch(std::size_t b, std::size_t h, std::size_t w) const;
};

/// Per-class concept basis vectors, stored [C, M, D].
struct BasisBank {
  Tensor vectors;
  std::vector<std::string> class_labels;

  BasisBank() = default;
  BasisBank(Tensor v, std::vector<std::string> labels);

  std::size_t classes() const { return vectors.dim(0); }
  std::size_t per_class() const { return vectors.dim(1); }
  std::size_t dim() const { return vectors.dim(2); }
  std::size_t total() const { return classes() * per_class(); }

  std::span<double> vector(std::size_t c, std::size_t m);
  std::span<const double> vector(std::size_t c, std::size_t m) const;

  /// A^(c) as an M x D matrix (rows are basis vectors).
  Eigen::MatrixXd class_matrix(std::size_t c) const;
  /// All C*M vectors as rows, class-major.
  Eigen::MatrixXd all_vectors() const;

  /// Throws when an entry is non-finite or a vector is zero.
  void validate() const;

  /// Entries drawn uniformly from [0, 1).
  static BasisBank random_uniform(std::size_t classes, std::size_t per_class, std::size_t dim,
                                  std::vector<std::string> labels, Rng& rng);
};

/// Fully connected layer from the C*M similarity scores to C logits, clamped.
struct ClassifierHead {
  static constexpr double kMinWeight = -0.5;
  static constexpr double kMaxWeight = 1.0;

  Tensor weights;  // [C, C*M]

  std::size_t classes() const { return weights.dim(0); }
  std::size_t inputs() const { return weights.dim(1); }
  void clamp();
  bool within_range() const;
};

/// Own-class connections +1.0, cross-class connections -0.5.
ClassifierHead init_classifier(std::size_t classes, std::size_t per_class);

struct ModelConfig {
  /// Output channels of the stride-2 3x3 backbone stages; five stages map 224 to 7.
  std::vector<std::size_t> backbone_channels{16, 32, 32, 64, 64};
  std::size_t feature_dim = 128;
  std::size_t per_class = 100;
  std::vector<std::string> class_labels;
  std::uint64_t seed = 0;
};

/// Intermediate activations of a forward pass, kept for backpropagation.
struct ForwardTrace {
  std::vector<Tensor> backbone;  // [0] is the input, [i+1] the output of stage i
  Tensor hidden;                 // add-on layer 1 (ReLU)
  Tensor features;               // add-on layer 2 (sigmoid)
};

struct AddOnGrads {
  Tensor w1, b1, w2, b2;
};

/// Proto-CNN: convolutional backbone, two 1x1 add-on convolutions, basis bank, head.
struct ProtoModel {
  ModelConfig config;
  std::vector<nn::Conv2d> backbone;
  nn::Conv2d addon1;
  nn::Conv2d addon2;
  BasisBank bank;
  ClassifierHead head;

  ProtoModel() = default;
  explicit ProtoModel(ModelConfig cfg);

  std::size_t classes() const { return bank.classes(); }
  std::size_t backbone_out_channels() const;

  Tensor backbone_forward(const Tensor& images, std::vector<Tensor>* trace = nullptr) const;
  Tensor addon_forward(const Tensor& backbone_out, Tensor* hidden = nullptr) const;

  /// Propagates d(loss)/d(features) through the add-on layers. Returns the
  /// gradient with respect to the backbone output when `need_input_grad`.
  Tensor addon_backward(const Tensor& backbone_out, const Tensor& hidden, const Tensor& features,
                        const Tensor& grad_features, AddOnGrads* grads, bool need_input_grad) const;
  /// Propagates through the backbone; parameter grads accumulate into `grads`
  /// (one weight/bias pair per stage) when non-null.
  Tensor backbone_backward(const std::vector<Tensor>& trace, const Tensor& grad_out,
                           std::vector<Tensor>* grads, bool need_input_grad) const;

  ForwardTrace trace(const Tensor& images) const;

  std::uint64_t backbone_checksum() const;
  std::uint64_t addon_checksum() const;
  std::uint64_t bank_checksum() const;
  std::uint64_t head_checksum() const;
};

/// Validates a [batch, 3, 224, 224] finite input and runs backbone + add-on.
FeatureMap extract_features(const Tensor& images, const ProtoModel& model);

/// Cosine between two vectors; 0 when either is the zero vector.
double cosine(std::span<const double> a, std::span<const double> b);

/// [batch, C*M, H, W] cosine similarity between every patch and every basis vector.
Tensor cosine_similarity_maps(const FeatureMap& fmap, const BasisBank& bank);

/// [batch, C*M] maximum over each map's spatial positions.
Tensor global_max_pool(const Tensor& simmaps);

/// [batch, C] logits: scores times head weights.
Tensor class_logits(const Tensor& scores, const ClassifierHead& head);

/// Row-wise softmax of `logits`.
Tensor softmax_rows(const Tensor& logits);

/// [batch, C] softmax probabilities of the head applied to the pooled scores.
Tensor classify(const Tensor& scores, const ClassifierHead& head);

}  // namespace asxai
