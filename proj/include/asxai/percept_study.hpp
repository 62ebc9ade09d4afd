#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asxai/image.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/trainer.hpp"
#include "json.hpp"

namespace asxai {

enum class PerceptDomain { hue, brightness, contrast, saturation, texture, shape };
PerceptDomain parse_domain(const std::string& name);
std::string to_string(PerceptDomain domain);
inline const std::vector<PerceptDomain> kAllDomains{PerceptDomain::hue,        PerceptDomain::brightness,
                                                    PerceptDomain::contrast,   PerceptDomain::saturation,
                                                    PerceptDomain::texture,    PerceptDomain::shape};

/// Jitter amounts follow the usual color-jitter convention: a factor is drawn
/// from [max(0, 1 - x), 1 + x] (hue: a shift in [-x, x] of a full turn).
struct PerturbSpec {
  double contrast = 0.45;
  double brightness = 0.8;
  double saturation = 0.7;
  double hue = 0.1;
  double texture_strength = 4.0;     // non-local means filter strength h
  double shape_roll_fraction = 0.1;  // max cyclic shift as a fraction of H and W

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static PerturbSpec from_json(const nlohmann::json& j);
};

/// Changes one visual attribute of `image`; deterministic in `seed`.
Image apply_perturbation(const Image& image, PerceptDomain domain, const PerturbSpec& spec, std::uint64_t seed);
Image apply_perturbation(const Image& image, const std::string& domain, const PerturbSpec& spec, std::uint64_t seed);

/// Per-sample -max cos between the sample's patches and the basis vectors of
/// its class that `use(j)` admits. Samples with no admitted vector are skipped;
/// `kept` (when non-null) receives the indices of the samples that remain.
std::vector<double> aggregation_terms(const FeatureMap& features, const std::vector<int>& labels,
                                      const BasisBank& bank, const std::vector<bool>& use,
                                      std::vector<std::size_t>* kept = nullptr);

/// Per-sample delta = term(bank_a) - term(bank_b), restricted to the basis
/// vectors of `concept_index` (all vectors when empty).
std::vector<double> sensitivity_delta(const FeatureMap& features, const std::vector<int>& labels,
                                      const BasisBank& bank_a, const BasisBank& bank_b,
                                      const ConceptAssignment& assignment,
                                      std::optional<std::size_t> concept_index = std::nullopt);

/// Quartiles by linear interpolation between order statistics; whiskers at
/// the most extreme values within 1.5 IQR of the box.
struct BoxStats {
  std::size_t n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
  double whisker_low = 0.0, whisker_high = 0.0;
  std::vector<double> outliers;

  nlohmann::ordered_json to_json() const;
};

/// Needs at least 2 values.
BoxStats box_stats(std::vector<double> values);

struct PerceptCell {
  std::string concept_name;
  PerceptDomain domain = PerceptDomain::hue;
  std::vector<double> deltas;
  BoxStats stats;
};

struct PerceptReport {
  std::vector<std::string> concepts;
  std::vector<PerceptDomain> domains;
  std::vector<std::string> sample_ids;
  std::vector<PerceptCell> cells;  // concept-major
  PerturbSpec spec;
  bool retrained = false;
  std::uint64_t seed = 0;

  const PerceptCell& cell(const std::string& concept_name, PerceptDomain domain) const;
  nlohmann::ordered_json to_json() const;
};

/// Builds cells from per (concept, domain) deltas.
PerceptReport sensitivity_report(const std::vector<std::string>& concepts, const std::vector<PerceptDomain>& domains,
                                 const std::vector<std::vector<std::vector<double>>>& deltas);

struct PerceptConfig {
  PerturbSpec spec;
  std::vector<PerceptDomain> domains = kAllDomains;
  std::size_t samples_per_category = 500;
  /// Retrain from the given model on perturbed images instead of re-projecting.
  bool retrain = false;
  TrainConfig retrain_config;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Samples up to samples_per_category images per class, projects the model's
/// basis vectors onto the original and onto each domain's perturbed images,
/// and reports the per-sample aggregation deltas on the original features.
PerceptReport run_percept_study(const ProtoModel& model, const std::vector<Image>& images,
                                const std::vector<int>& labels, const std::vector<std::string>& ids,
                                const ConceptAssignment& assignment, const PerceptConfig& cfg);

}  // namespace asxai
