#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "asxai/proto_model.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "json.hpp"

namespace asxai {

inline constexpr std::size_t kMaxDefaultComponents = 16;

/// Row-centered PCA result. Rows of the input are samples, columns features.
struct TraitSpace {
  Eigen::MatrixXd components;      // [feature_dim, k], column i is W^T u_i
  Eigen::MatrixXd sample_vectors;  // [N_s, k], the retained eigenvectors u_i of P
  Eigen::VectorXd eigenvalues;     // full spectrum of P, descending
  Eigen::VectorXd info_ratios;     // cumulative, same length as eigenvalues
  Eigen::VectorXd row_means;       // [N_s]
  Eigen::MatrixXd scores;          // [N_s, k] centered samples projected on unit PCs
  std::size_t k = 0;
  std::size_t rank = 0;
  std::vector<std::string> sample_ids;

  std::size_t sample_count() const { return static_cast<std::size_t>(row_means.size()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(components.rows()); }
  nlohmann::ordered_json to_json() const;
};

/// W_hat = W minus each row's mean, plus the means.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> row_center(const Eigen::MatrixXd& w);

/// P = W_hat W_hat^T / (feature_dim - 1).
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& w_hat);

/// Sum of the first k eigenvalues over the trace.
double information_ratio(const Eigen::VectorXd& eigenvalues, std::size_t k);

/// Smallest k with information ratio >= target, capped at `cap` and the rank.
std::size_t default_component_count(const Eigen::VectorXd& eigenvalues, std::size_t rank, double target = 0.9,
                                    std::size_t cap = kMaxDefaultComponents);

/// Decomposes P and keeps k components; k above rank(P) is clamped with a warning.
/// k = 0 selects default_component_count.
TraitSpace principal_components(const Eigen::MatrixXd& w, const Eigen::MatrixXd& p, std::size_t k);

/// row_center + sample_covariance + principal_components.
TraitSpace fit_traits(const Eigen::MatrixXd& w, std::size_t k = 0);

/// R^2 of sorted values against normal quantiles at (i - 0.5) / n.
double qq_normality_r2(std::vector<double> values);

enum class TraitMode { masked, raw };
TraitMode parse_trait_mode(const std::string& name);

struct ConceptFeatures {
  Eigen::MatrixXd w;  // [N_s, filters * H * W]
  std::vector<std::size_t> rows;
  std::vector<std::string> sample_ids;
};

/// One row per sample: the concept filters' maps, flattened. In masked mode
/// each map is weighted by the sample's concept similarity (max cosine over
/// the concept's basis vectors, floored at 0). Samples are a seeded subset
/// when more than n_s are available.
ConceptFeatures collect_concept_features(const ProtoModel& model, const Tensor& images,
                                         const std::vector<std::string>& ids, const ConceptAssignment& assignment,
                                         std::size_t concept_index, std::size_t n_s, std::uint64_t seed,
                                         TraitMode mode = TraitMode::masked);

}  // namespace asxai
