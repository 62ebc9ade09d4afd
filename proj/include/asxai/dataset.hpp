#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asxai/image.hpp"
#include "asxai/trainer.hpp"

namespace asxai {

struct ClassEntry {
  std::string name;
  std::vector<std::string> paths;
};

struct DatasetManifest {
  std::string root;
  std::vector<ClassEntry> classes;
  std::string split = "train";
  std::size_t image_size = kInputSize;
  bool augment = false;

  std::size_t image_count() const;
  std::vector<std::string> class_names() const;
  /// Throws on an empty class or a path listed twice.
  void validate() const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  std::uint64_t hash() const;
};

/// Folder-per-class layout: every sub-directory of `root` is a class. Files
/// OpenCV cannot decode are skipped with a warning.
DatasetManifest ingest_dataset(const std::filesystem::path& root);

/// CSV with `path,label` rows (header optional); paths relative to the CSV's directory.
DatasetManifest ingest_csv(const std::filesystem::path& csv);

Image load_image(const std::string& path);
bool save_image(const Image& image, const std::string& path);

struct AugmentConfig {
  bool enabled = true;
  double max_rotation_deg = 15.0;
  double max_shear = 0.15;
  double max_skew = 0.08;
  double distortion = 0.03;
};

/// Random rotation, shear, skew and smooth elastic distortion (when enabled),
/// then a resize to 224x224. Deterministic in `seed`.
Image augment(const Image& image, std::uint64_t seed, const AugmentConfig& cfg = {});

struct LoadedImages {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

/// Decoded 224x224 images of the manifest, augmented per image as below.
LoadedImages load_images(const DatasetManifest& manifest, std::uint64_t seed, const AugmentConfig& cfg = {});

/// Decodes every manifest image, augments it with a per-image seed when
/// manifest.augment is set, and returns a normalized training set.
TrainingSet load_training_set(const DatasetManifest& manifest, std::uint64_t seed, const AugmentConfig& cfg = {});

struct ToyImage {
  Image image;
  int label = 0;
  std::string id;
};

/// Two-class synthetic set: 32x32 drawings upscaled to 224x224. Class 0 has a
/// horizontal-stripe patch and a red square, class 1 a vertical-stripe patch
/// and a blue disc, both over a noisy background.
std::vector<ToyImage> make_toy_images(std::size_t per_class, std::uint64_t seed);
inline const std::vector<std::string> kToyClasses{"striped_square", "barred_disc"};

TrainingSet toy_training_set(const std::vector<ToyImage>& images);

/// Writes the toy images as PNGs in folder-per-class layout.
void write_toy_dataset(const std::vector<ToyImage>& images, const std::filesystem::path& root);

}  // namespace asxai
