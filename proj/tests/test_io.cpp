#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "asxai/artifacts.hpp"
#include "asxai/dataset.hpp"
#include "asxai/errors.hpp"
#include "asxai/run_config.hpp"
#include "test_support.hpp"

using namespace asxai;
using namespace asxai::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("asxai_test_io_" + name);
  fs::remove_all(p);
  return p;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone_channels = {4, 4, 8, 8, 8};
  cfg.feature_dim = 8;
  cfg.per_class = 3;
  cfg.class_labels = kToyClasses;
  cfg.seed = 5;
  return cfg;
}

void overwrite(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace

TEST_CASE("run config round trip and hash") {
  RunConfig c;
  c.seed = 42;
  c.model.feature_dim = 32;
  c.train.learning_rate = 0.01;
  c.percept.domains = {PerceptDomain::hue, PerceptDomain::shape};
  c.output = "out/a";
  const RunConfig back = RunConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(back.train.seed == 42);
  CHECK(back.percept.seed == 42);
  CHECK(back.model.seed == 42);
  CHECK(c.hash().size() == 16);

  // output location does not change the hash; any setting does
  RunConfig moved = back;
  moved.output = "elsewhere";
  CHECK(moved.hash() == c.hash());
  RunConfig other = back;
  other.seed = 43;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("run config hash ignores key order") {
  const auto a = nlohmann::json::parse(R"({"seed": 3, "model": {"feature_dim": 16, "per_class": 4}, "train": {"max_cycles": 2}})");
  const auto b = nlohmann::json::parse(R"({"train": {"max_cycles": 2}, "model": {"per_class": 4, "feature_dim": 16}, "seed": 3})");
  CHECK(RunConfig::from_json(a).hash() == RunConfig::from_json(b).hash());
}

TEST_CASE("run config rejects bad input") {
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"sead": 1})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"train": {"lr": 1}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"seed": "one"})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"model": {"feature_dim": 0}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"percept": {"domains": ["blur"]}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.json"), IoError);

  const fs::path dir = scratch("badjson");
  fs::create_directories(dir);
  overwrite(dir / "c.json", "{ not json");
  CHECK_THROWS_AS(RunConfig::load((dir / "c.json").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("shipped example config loads") {
  const RunConfig c = RunConfig::load(ASXAI_SOURCE_DIR "/config/default.json");
  CHECK(c.to_json().contains("percept"));
}

TEST_CASE("float32 blocks") {
  const std::vector<double> v{0.5, -1.25, 3.0, 1e-3, 0.0, 7.0};
  const std::string bytes = encode_f32_block({2, 3}, v);
  CHECK(bytes.size() == 2 * 4 + 6 * 4);
  // little-endian layout read back by hand
  std::uint32_t h0 = 0;
  std::memcpy(&h0, bytes.data(), 4);
  CHECK(h0 == 2);
  float f1 = 0;
  std::memcpy(&f1, bytes.data() + 8 + 4, 4);
  CHECK(f1 == -1.25f);

  const F32Block b = decode_f32_block(bytes, 2);
  CHECK(b.header == std::vector<std::uint32_t>{2, 3});
  REQUIRE(b.values.size() == 6);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(b.values[i] == static_cast<double>(static_cast<float>(v[i])));

  CHECK_THROWS_AS(decode_f32_block(bytes.substr(0, bytes.size() - 1), 2), IoError);
  CHECK_THROWS_AS(encode_f32_block({4}, v), DimensionError);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch("ckpt");
  ProtoModel model(tiny_model());
  Rng rng(9);
  for (double& x : model.addon2.weight.values()) x = rng.uniform(-1, 1);
  TrainingLog log;
  EpochRecord rec;
  rec.stage = "warmup";
  rec.terms.ce = 0.7;
  log.records.push_back(rec);
  std::vector<PatchSource> prov;
  for (std::size_t j = 0; j < 6; ++j) prov.push_back({j % 2, "img" + std::to_string(j), j % 7, (j * 3) % 7});

  ArtifactWriter w(dir, "00000000deadbeef");
  save_checkpoint(w, "checkpoint", model, prov, log);
  const Checkpoint c = load_checkpoint(dir / "checkpoint");

  CHECK(c.config_hash == "00000000deadbeef");
  CHECK(c.model.backbone_checksum() == model.backbone_checksum());
  CHECK(c.model.addon_checksum() == model.addon_checksum());
  CHECK(c.model.bank.class_labels == model.bank.class_labels);
  // bank and head go through float32
  for (std::size_t i = 0; i < model.bank.vectors.size(); ++i) {
    CHECK(c.model.bank.vectors.values()[i] == static_cast<double>(static_cast<float>(model.bank.vectors.values()[i])));
  }
  CHECK(c.model.head.weights.values()[0] == model.head.weights.values()[0]);
  REQUIRE(c.provenance.size() == 6);
  CHECK(c.provenance[4].image_id == "img4");
  CHECK(c.provenance[4].col == 5);
  REQUIRE(c.stage_log.size() == 1);
  CHECK(c.stage_log[0]["stage"] == "warmup");

  CHECK(verify_artifacts(dir).ok);
  CHECK_THROWS_AS(load_checkpoint(dir / "nothing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("weights reject a mismatched model") {
  ProtoModel a(tiny_model());
  ModelConfig wider = tiny_model();
  wider.feature_dim = 16;
  ProtoModel b(wider);
  const std::string bytes = encode_weights(a);
  CHECK_THROWS_AS(decode_weights(bytes, b), IoError);
  CHECK_THROWS_AS(decode_weights("XXXX" + bytes.substr(4), a), IoError);
  CHECK_THROWS_AS(decode_weights(bytes + "x", a), IoError);
}

TEST_CASE("verify catches tampering and mixed provenance") {
  const fs::path dir = scratch("verify");
  {
    ArtifactWriter w(dir, "1111111111111111");
    w.write_json("a.json", {{"x", 1}});
    w.write_text("b.txt", "hello\n");
  }
  VerifyResult ok = verify_artifacts(dir);
  CHECK(ok.ok);
  CHECK(ok.config_hash == "1111111111111111");

  overwrite(dir / "b.txt", "hellO\n");
  CHECK(!verify_artifacts(dir).ok);
  overwrite(dir / "b.txt", "hello\n");
  CHECK(verify_artifacts(dir).ok);

  overwrite(dir / "stray.txt", "?");
  CHECK(!verify_artifacts(dir).ok);
  fs::remove(dir / "stray.txt");

  {
    ArtifactWriter w(dir, "2222222222222222");
    w.write_json("c.json", {{"y", 2}});
  }
  const VerifyResult mixed = verify_artifacts(dir);
  CHECK(!mixed.ok);
  bool named = false;
  for (const auto& p : mixed.problems) named = named || p.find("mixed provenance") != std::string::npos;
  CHECK(named);

  CHECK(!verify_artifacts(scratch("empty")).ok);
  fs::remove_all(dir);
}

TEST_CASE("trait file stems") {
  CHECK(traits_file_stem("petal") == "traits_petal");
  CHECK(traits_file_stem("a b/c") == "traits_a_b_c");
}
