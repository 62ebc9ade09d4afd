#pragma once

#include <cstdint>
#include <string>

#include "asxai/common_traits.hpp"
#include "asxai/dataset.hpp"
#include "asxai/explanation.hpp"
#include "asxai/feature_viz.hpp"
#include "asxai/percept_study.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/trainer.hpp"
#include "json.hpp"

namespace asxai {

inline constexpr const char* kRunConfigSchema = "asxai.run_config/1";

struct DataSettings {
  std::string root;  // folder-per-class directory
  std::string csv;   // or a path,label CSV
  bool augment = false;
  AugmentConfig augment_config;
};

struct RankSettings {
  RankLayer layer = RankLayer::backbone;
  double tolerance = kDefaultRankTolerance;
  std::size_t clusters = 4;
  std::size_t probe_images = 32;
};

struct TraitSettings {
  std::size_t samples = 400;
  std::size_t components = 0;  // 0 picks the smallest k reaching 90% information
  TraitMode mode = TraitMode::masked;
};

struct ExplainSettings {
  ExplainConfig config;
  std::string templates;  // empty: built-in templates
};

/// Everything a run depends on. The single `seed` drives every random stream.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;  // class_labels and seed are filled from the data and `seed`
  TrainConfig train;
  DataSettings data;
  RankSettings rank;
  TraitSettings traits;
  InversionConfig inversion;
  ExplainSettings explain;
  PerceptConfig percept;
  std::string output;

  /// Sets `seed` and every stream that derives from it.
  void set_seed(std::uint64_t value);
  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  /// 16 hex digits of FNV-1a over the key-sorted JSON without `output`.
  std::string hash() const;
};

}  // namespace asxai
