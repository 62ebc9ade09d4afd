#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "asxai/image.hpp"
#include "asxai/proto_model.hpp"
#include "asxai/trainer.hpp"
#include "json.hpp"

namespace asxai {

/// Little-endian block: u32 header values, then float32 data.
std::string encode_f32_block(const std::vector<std::uint32_t>& header, const std::vector<double>& values);
struct F32Block {
  std::vector<std::uint32_t> header;
  std::vector<double> values;
};
/// `header_size` u32 values then their product of floats; anything else is an IoError.
F32Block decode_f32_block(const std::string& bytes, std::size_t header_size);

/// Backbone and add-on parameters: "ASXW", u32 version, u32 tensor count, then
/// per tensor u32 rank, u32 dims and little-endian float64 values.
std::string encode_weights(const ProtoModel& model);
void decode_weights(const std::string& bytes, ProtoModel& model);

std::string read_file(const std::filesystem::path& path);

/// Writes files under one directory and keeps `manifest.json` there with the
/// FNV-1a digest and config hash of each file it wrote. JSON objects get a
/// "config_hash" field.
class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path root, std::string config_hash);

  const std::filesystem::path& root() const { return root_; }
  const std::string& config_hash() const { return hash_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }

  void write_json(const std::string& name, nlohmann::ordered_json j);
  void write_text(const std::string& name, const std::string& text);
  void write_bytes(const std::string& name, const std::string& bytes);
  void write_png(const std::string& name, const Image& image);

 private:
  void record(const std::string& name);
  std::filesystem::path root_;
  std::string hash_;
};

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> problems;
  std::string config_hash;
};

/// Checks digests against manifest.json, a single config hash across the
/// manifest and every JSON artifact carrying one, and no untracked files.
VerifyResult verify_artifacts(const std::filesystem::path& root);

struct Checkpoint {
  ProtoModel model;
  std::vector<PatchSource> provenance;
  std::string config_hash;
  nlohmann::json stage_log = nlohmann::json::array();
};

/// weights.bin, basis_bank.bin, head.bin, meta.json and provenance.json under
/// `subdir` of the writer's root.
void save_checkpoint(ArtifactWriter& writer, const std::string& subdir, const ProtoModel& model,
                     const std::vector<PatchSource>& provenance, const TrainingLog& log);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::string traits_file_stem(const std::string& concept_name);

}  // namespace asxai
