#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asxai/image.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/tensor.hpp"
#include "json.hpp"

namespace asxai {

/// Normal fit of a concept's activation over a reference population.
struct ConceptDistribution {
  double mean = 0.0;
  double std = 1.0;
  double a_min = 0.0;
  double a_max = 1.0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ConceptDistribution from_json(const nlohmann::json& j);
  bool operator==(const ConceptDistribution&) const = default;
};

/// Sample mean and (n - 1) standard deviation; needs >= 20 non-constant values.
ConceptDistribution fit_concept_distribution(const std::vector<double>& activations);

/// (cdf(a) - cdf(a_min)) / (cdf(a_max) - cdf(a_min)) clamped to [0, 1].
/// Exactly 0 at or below a_min and exactly 1 at or above a_max.
double semantic_probability(double a_s, const ConceptDistribution& dist);

double pcs(double p_s, double weight);

/// PCS per candidate class (rows) and concept (columns).
struct PcsTable {
  std::vector<std::string> classes;
  std::vector<std::string> concepts;
  std::vector<std::vector<double>> values;

  double at(std::size_t cls, std::size_t concept_index) const { return values[cls][concept_index]; }
  double class_total(std::size_t cls) const;
  void validate() const;
};

struct Deltas {
  std::size_t named = 0;      // row of the class with the largest summed PCS
  std::size_t runner_up = 1;  // row of the next class
  std::vector<double> delta_pcs;  // per concept: named - runner-up
  double delta_max_pcs = 0.0;
  double pcs_max = 0.0;
};

/// Ties in summed PCS keep the table's row order.
Deltas compute_deltas(const PcsTable& table);

/// Sentence pieces keyed by band. Placeholders: {A}, {B}, {concept},
/// {position}, {semanteme}.
struct ExplanationTemplates {
  std::vector<double> thresholds{0.1, 0.35, 0.5};
  double vivid_threshold = 0.5;
  std::vector<std::string> verdicts{
      "I am not sure whether this is a {A} or a {B}.",
      "I am not sure whether this is a {A} mainly because",
      "It is probably a {A} mainly because",
      "I am sure it is a {A} mainly because",
  };
  std::string vivid_position = "it has a vivid {concept}";
  std::string plain_position = "it has {concept}";
  std::vector<std::string> semantemes{"confusing", "something like", "perhaps", "obviously"};
  std::vector<std::string> phrases{
      "it seems to have {semanteme} {concept}",
      "{position}, which is {semanteme} a {A}'s {concept}",
      "{position}, which is {semanteme} a {A}'s {concept}",
      "{position}, which is a {A}'s {concept} {semanteme}",
  };
  std::vector<std::string> connectors{"Meanwhile,", "In addition,"};
  std::string closing = "The {A} shows a higher semantic similarity score.";
  std::size_t max_phrases = 3;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ExplanationTemplates from_json(const nlohmann::json& j);
  static ExplanationTemplates load(const std::string& path);
};

/// Number of thresholds at or below x: bands are [lo, hi) and a boundary
/// value falls into the upper band.
std::size_t band_index(double x, const std::vector<double>& thresholds);

struct Explanation {
  std::size_t band = 0;
  std::string verdict;  // assessment template filled in
  std::vector<std::string> phrases;
  std::string text;  // full sentence(s)
};

Explanation generate_explanation(const Deltas& deltas, const PcsTable& table,
                                 const ExplanationTemplates& templates = {});

/// Class logits of the pooled cosine similarities, one per class.
std::vector<double> global_similarity_histogram(const ProtoModel& model, const Tensor& image);

/// SSIM over sliding 7x7 windows on each HSV channel, combined with weights
/// H 0.2, S 0.3, V 0.5. Images smaller than the window use one window.
double hsv_similarity(const Image& a, const Image& b);

enum class ActivationMode { masked, full };
ActivationMode parse_activation_mode(const std::string& name);
std::string to_string(ActivationMode mode);

struct ExplainConfig {
  ActivationMode activation = ActivationMode::masked;
  double mask_percentile = 80.0;
  std::size_t candidates = 2;
  double rank_tolerance = kDefaultRankTolerance;

  void validate() const;
};

/// Mean activation of a concept's filters for one class. In masked mode the
/// cells are those at or above the percentile of the similarity map to the
/// class's basis vectors in that concept (all class basis vectors when the
/// concept has none); an empty mask falls back to every cell.
/// Returns one value per class, concept: result[c][s].
std::vector<std::vector<double>> concept_activations(const ProtoModel& model, const Tensor& image,
                                                     const ConceptAssignment& assignment,
                                                     const ExplainConfig& cfg);

/// Per (class, concept) activation distributions over a reference set.
/// Cells whose activations are constant stay empty and score 0.
struct Explainer {
  ConceptAssignment assignment;
  ExplainConfig config;
  std::vector<std::vector<std::optional<ConceptDistribution>>> distributions;  // [class][concept]

  nlohmann::ordered_json to_json() const;
  static Explainer from_json(const nlohmann::json& j);
};

/// Fits each class's distributions on that class's images.
Explainer fit_explainer(const ProtoModel& model, const Tensor& images, const std::vector<int>& labels,
                        const ConceptAssignment& assignment, const ExplainConfig& cfg = {});

struct ConceptEvidence {
  std::string concept_name;
  double weight = 0.0;
  std::vector<double> activation;  // per candidate class
  std::vector<double> p_s;
  std::vector<double> pcs;
  double delta_pcs = 0.0;
  bool operator==(const ConceptEvidence&) const = default;
};

struct ExplanationReport {
  std::string image_id;
  std::vector<std::string> class_labels;
  std::vector<double> probabilities;
  std::vector<double> global_similarity;
  std::vector<double> structural_similarity;  // per class; empty without references
  std::string predicted_class;
  std::vector<std::string> candidates;
  std::string named_class;
  std::string runner_up;
  std::vector<ConceptEvidence> concepts;
  double delta_max_pcs = 0.0;
  double pcs_max = 0.0;
  std::size_t band = 0;
  std::string verdict;
  std::vector<std::string> phrases;
  std::string text;

  nlohmann::ordered_json to_json() const;
  static ExplanationReport from_json(const nlohmann::json& j);
  /// concept -> PCS per candidate class
  std::map<std::string, std::map<std::string, double>> bubble_ring() const;
  bool operator==(const ExplanationReport&) const = default;
};

/// Reference images per class for the structural similarity histogram.
struct ReferenceSet {
  std::vector<Image> images;
  std::vector<int> labels;
};

/// `image` is [3, 224, 224] or [1, 3, 224, 224] normalized input; `raw` is
/// the same picture as an Image, needed only when `references` is given.
ExplanationReport explain_image(const ProtoModel& model, const Explainer& explainer, const Tensor& image,
                                const std::string& image_id, const ExplanationTemplates& templates = {},
                                const ReferenceSet* references = nullptr, const Image* raw = nullptr);

}  // namespace asxai
