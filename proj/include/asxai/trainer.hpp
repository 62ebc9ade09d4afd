#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "asxai/losses.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/tensor.hpp"

namespace asxai {

/// Preprocessed training images [N, 3, 224, 224] with labels and stable ids.
struct TrainingSet {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return labels.size(); }
  /// Throws on an empty set, mismatched lengths or labels outside [0, classes).
  void validate(std::size_t classes) const;
};

struct TrainConfig {
  std::size_t warmup_epochs = 2;
  std::size_t joint_epochs = 10;
  std::size_t fc_iterations = 50;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  LossWeights loss_weights;
  PerturbationConfig perturbation;
  std::size_t max_cycles = 5;
  double tolerance = 1e-3;
  /// Unfreezes the backbone in the joint stage.
  bool train_backbone = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::string stage;
  std::size_t cycle = 0;
  std::size_t epoch = 0;
  LossTerms terms;
  double total = 0.0;
  double accuracy = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> records;

  std::vector<EpochRecord> stage(const std::string& name) const;
  /// One JSON object per line.
  std::string to_jsonl() const;
};

/// Where a projected basis vector came from.
struct PatchSource {
  std::size_t image = 0;
  std::string image_id;
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Features of the whole set, computed in chunks.
FeatureMap dataset_features(const ProtoModel& model, const TrainingSet& data, std::size_t chunk = 32);

/// Joint objective terms for the current parameters without perturbation.
LossTerms evaluate_losses(const ProtoModel& model, const FeatureMap& features, const std::vector<int>& labels);

void warmup_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                  std::size_t cycle = 0);
void joint_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                 std::size_t cycle = 0);

/// a_j <- the same-class training patch with the largest cosine to a_j.
/// Ties go to the lowest (image, row, col).
std::vector<PatchSource> project_basis_vectors(ProtoModel& model, const TrainingSet& data);
std::vector<PatchSource> project_basis_vectors(ProtoModel& model, const FeatureMap& features,
                                               const TrainingSet& data);

/// Projected gradient descent on the head only, step 1/L with L bounding the
/// curvature of the cross-entropy in the head weights.
void fc_convex_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                     std::size_t cycle = 0);

struct TrainResult {
  TrainingLog log;
  std::vector<PatchSource> provenance;
  std::size_t cycles = 0;
};

using CycleCallback = std::function<void(const ProtoModel&, const TrainResult&)>;

/// Warm-up once, then {joint, project, fc} cycles until the relative total-loss
/// improvement drops below cfg.tolerance or cfg.max_cycles is reached.
TrainResult train(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const CycleCallback& on_cycle = {});

double accuracy(const Tensor& probs, const std::vector<int>& labels);

}  // namespace asxai
