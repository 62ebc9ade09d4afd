#pragma once

#include <cstdint>
#include <span>

#include "asxai/proto_model.hpp"
#include "asxai/tensor.hpp"

namespace asxai {

/// Weights of the joint objective: ce + l1*orth + l2*ss + l3*sep + l4*agg.
struct LossWeights {
  double orthogonality = 1.0;
  double subspace_separation = -1e-7;
  double separation = -0.08;
  double aggregation = 0.8;
};

struct PerturbationConfig {
  double sigma = 0.01;
};

struct LossTerms {
  double ce = 0.0;
  double orthogonality = 0.0;
  double subspace_separation = 0.0;
  double separation = 0.0;
  double aggregation = 0.0;
};

/// a' = a + sigma * eps, eps ~ N(0, I); deterministic in `seed`.
BasisBank perturb_basis(const BasisBank& bank, const PerturbationConfig& cfg, std::uint64_t seed);

/// Mean over samples of min over same-class vectors and patches of -cos.
double aggregation_loss(const FeatureMap& fmaps, std::span<const int> labels, const BasisBank& bank);

/// Mean over samples of min over wrong-class vectors and patches of cos.
double separation_loss(const FeatureMap& fmaps, std::span<const int> labels, const BasisBank& bank);

/// Sum over classes of ||A A^T - I_M||_F^2.
double orthogonality_loss(const BasisBank& bank);

/// -1/sqrt(2) times the sum over class pairs of ||A1^T A1 - A2^T A2||_F.
double subspace_separation_loss(const BasisBank& bank);

/// -(1/n) sum_i sum_c y_ic log(max(p_ic, 1e-12)).
double cross_entropy_loss(const Tensor& probs, const Tensor& one_hot);

double total_loss(const LossTerms& terms, const LossWeights& weights);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

/// Value plus gradients with respect to the features [B, D, H, W] and the bank [C, M, D].
/// At ties the first (vector, patch) pair in index order carries the gradient.
struct PatchLossGradient {
  double value = 0.0;
  Tensor grad_features;
  Tensor grad_bank;
};

PatchLossGradient aggregation_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                        const BasisBank& bank);
PatchLossGradient separation_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                       const BasisBank& bank);
Tensor orthogonality_loss_grad(const BasisBank& bank);
/// Pairs with identical projectors contribute a zero subgradient.
Tensor subspace_separation_loss_grad(const BasisBank& bank);

/// Cross-entropy through cosine maps, max pooling, head and softmax.
struct ClassificationGradient {
  double ce = 0.0;
  Tensor probs;          // [B, C]
  Tensor scores;         // [B, C*M]
  Tensor grad_features;  // [B, D, H, W]
  Tensor grad_bank;      // [C, M, D]
  Tensor grad_head;      // [C, C*M]
};

ClassificationGradient classification_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                                const BasisBank& bank, const ClassifierHead& head);

}  // namespace asxai
