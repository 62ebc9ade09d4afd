#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asxai/proto_model.hpp"
#include "json.hpp"

namespace asxai {

inline constexpr double kDefaultRankTolerance = 1e-6;

/// Singular values of `map`, descending.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& map);

/// Number of singular values above tol * sigma_max; 0 for the zero matrix.
int feature_map_rank(const Eigen::MatrixXd& map, double tol = kDefaultRankTolerance);

/// Which layer's filter maps are ranked.
enum class RankLayer { backbone, addon };

RankLayer parse_rank_layer(const std::string& name);
std::string to_string(RankLayer layer);

/// [N, F, H, W] maps of the chosen layer for a [N, 3, 224, 224] batch.
Tensor layer_maps(const ProtoModel& model, const Tensor& images, RankLayer layer);

/// Filters and basis vectors grouped into concepts. -1 marks a redundant filter.
struct ConceptAssignment {
  std::vector<std::string> names;
  std::vector<int> filter_concept;
  std::vector<int> basis_concept;
  RankLayer layer = RankLayer::backbone;

  std::size_t concept_count() const { return names.size(); }
  std::vector<std::size_t> filters_of(std::size_t concept_index) const;
  std::vector<std::size_t> redundant_filters() const;
  /// Renames concepts through `names_by_old`; unknown keys are left as is.
  void relabel(const std::map<std::string, std::string>& names_by_old);

  nlohmann::ordered_json to_json() const;
  static ConceptAssignment from_json(const nlohmann::json& j);
};

/// Spherical k-means (k-means++ seeding) of the rows of `points` into `k`
/// groups. Cluster ids are ordered by their lowest member row.
std::vector<int> cluster_by_cosine(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed);

/// Groups rank-layer filters by the add-on patch feature at each filter's
/// strongest activation over the probe images. Filters whose maps have rank 0
/// on every probe image are redundant. Each basis vector joins the concept
/// whose centroid is closest in cosine; then, for classes with at least as
/// many vectors as concepts, an empty concept takes the class's closest vector
/// from a concept holding two or more.
ConceptAssignment assign_concepts(const ProtoModel& model, const Tensor& probe_images, std::size_t cluster_count,
                                  std::uint64_t seed, RankLayer layer = RankLayer::backbone,
                                  double tol = kDefaultRankTolerance);

/// R_s: mean rank of each concept's filters. Concepts with no filters are absent.
std::map<std::string, double> concept_average_rank(const std::vector<int>& ranks, const ConceptAssignment& assignment);

/// R_s / sum R. All-zero ranks give uniform scores and a warning.
std::map<std::string, double> sensitivity_scores(const std::map<std::string, double>& per_concept_rank);

struct RankProfile {
  std::string image_id;
  std::vector<int> per_filter_rank;
  std::map<std::string, double> per_concept_rank;
  std::map<std::string, double> scores;
  ConceptAssignment assignment;
  double rank_tolerance = kDefaultRankTolerance;

  /// score * number of present concepts; typical value near 1.
  double pcs_weight(const std::string& concept_name) const;
  nlohmann::ordered_json to_json() const;
};

/// Profile of one image given as a [3, 224, 224] or [1, 3, 224, 224] tensor.
RankProfile rank_profile(const ProtoModel& model, const Tensor& image, const ConceptAssignment& assignment,
                         const std::string& image_id, double tol = kDefaultRankTolerance);

/// Per-concept R_s averaged over several images, then normalized.
RankProfile average_profiles(const std::vector<RankProfile>& profiles);

}  // namespace asxai
