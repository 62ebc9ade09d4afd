#include "asxai/artifacts.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "asxai/dataset.hpp"
#include "asxai/errors.hpp"

namespace fs = std::filesystem;

namespace asxai {

namespace {

static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw IoError(what_ + ": truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string digest(const std::string& bytes) { return hex64(fnv1a(bytes.data(), bytes.size())); }

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::ordered_json load_json(const fs::path& path) {
  try {
    return nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<const Tensor*> parameters(const ProtoModel& model) {
  std::vector<const Tensor*> out;
  for (const auto& conv : model.backbone) {
    out.push_back(&conv.weight);
    out.push_back(&conv.bias);
  }
  for (const auto* conv : {&model.addon1, &model.addon2}) {
    out.push_back(&conv->weight);
    out.push_back(&conv->bias);
  }
  return out;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_f32_block(const std::vector<std::uint32_t>& header, const std::vector<double>& values) {
  std::size_t expected = 1;
  for (std::uint32_t h : header) expected *= h;
  if (expected != values.size()) throw DimensionError("encode_f32_block: header does not match the value count");
  std::string out;
  out.reserve(header.size() * 4 + values.size() * 4);
  for (std::uint32_t h : header) put(out, h);
  for (double v : values) put(out, static_cast<float>(v));
  return out;
}

F32Block decode_f32_block(const std::string& bytes, std::size_t header_size) {
  Reader r(bytes, "float32 block");
  F32Block b;
  std::size_t count = 1;
  for (std::size_t i = 0; i < header_size; ++i) {
    b.header.push_back(r.get<std::uint32_t>());
    count *= b.header.back();
  }
  if (bytes.size() != header_size * 4 + count * 4) {
    throw IoError("float32 block: expected " + std::to_string(count) + " values, file has " +
                  std::to_string(bytes.size()) + " bytes");
  }
  b.values.resize(count);
  for (double& v : b.values) v = r.get<float>();
  return b;
}

std::string encode_weights(const ProtoModel& model) {
  std::string out = "ASXW";
  put<std::uint32_t>(out, 1);
  const auto params = parameters(model);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor* t : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t->values()) put(out, v);
  }
  return out;
}

void decode_weights(const std::string& bytes, ProtoModel& model) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "ASXW") != 0) throw IoError("weights.bin: bad magic");
  Reader r(bytes, "weights.bin");
  r.get<std::uint32_t>();
  if (r.get<std::uint32_t>() != 1) throw IoError("weights.bin: unsupported version");
  const auto params = parameters(model);
  if (r.get<std::uint32_t>() != params.size()) throw IoError("weights.bin: tensor count does not match the model");
  for (const Tensor* p : params) {
    Tensor& t = const_cast<Tensor&>(*p);
    const std::uint32_t rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != t.shape()) {
      throw IoError("weights.bin: tensor " + shape_string(shape) + " where the model has " + shape_string(t.shape()));
    }
    for (double& v : t.values()) v = r.get<double>();
  }
  if (!r.done()) throw IoError("weights.bin: trailing bytes");
}

ArtifactWriter::ArtifactWriter(fs::path root, std::string config_hash) : root_(std::move(root)), hash_(std::move(config_hash)) {
  fs::create_directories(root_);
}

void ArtifactWriter::write_json(const std::string& name, nlohmann::ordered_json j) {
  if (j.is_object()) j["config_hash"] = hash_;
  write_file(path(name), j.dump(2) + "\n");
  record(name);
}

void ArtifactWriter::write_text(const std::string& name, const std::string& text) {
  write_file(path(name), text);
  record(name);
}

void ArtifactWriter::write_bytes(const std::string& name, const std::string& bytes) {
  write_file(path(name), bytes);
  record(name);
}

void ArtifactWriter::write_png(const std::string& name, const Image& image) {
  const fs::path p = path(name);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!save_image(image, p.string())) throw IoError("cannot write " + p.string());
  record(name);
}

void ArtifactWriter::record(const std::string& name) {
  const fs::path manifest = root_ / "manifest.json";
  nlohmann::ordered_json m;
  if (fs::exists(manifest)) {
    m = load_json(manifest);
  } else {
    m["schema"] = "asxai.artifacts/1";
    m["files"] = nlohmann::ordered_json::object();
  }
  m["files"][name] = {{"fnv1a", digest(read_file(path(name)))}, {"config_hash", hash_}};
  nlohmann::json sorted = nlohmann::json::parse(m.dump());
  write_file(manifest, sorted.dump(2) + "\n");
}

VerifyResult verify_artifacts(const fs::path& root) {
  VerifyResult r;
  auto fail = [&](std::string p) {
    r.ok = false;
    r.problems.push_back(std::move(p));
  };
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) {
    fail("no manifest.json in " + root.string());
    return r;
  }
  const nlohmann::ordered_json manifest = load_json(manifest_path);
  std::set<std::string> hashes, tracked;
  for (const auto& [name, entry] : manifest.at("files").items()) {
    tracked.insert(name);
    hashes.insert(entry.at("config_hash").get<std::string>());
    const fs::path p = root / name;
    if (!fs::exists(p)) {
      fail("missing file " + name);
      continue;
    }
    const std::string bytes = read_file(p);
    if (digest(bytes) != entry.at("fnv1a").get<std::string>()) fail("digest mismatch for " + name);
    if (p.extension() == ".json") {
      try {
        const auto j = nlohmann::json::parse(bytes);
        if (j.is_object() && j.contains("config_hash") && j["config_hash"] != entry["config_hash"]) {
          fail(name + " embeds config hash " + j["config_hash"].get<std::string>() + " but the manifest records " +
               entry["config_hash"].get<std::string>());
          hashes.insert(j["config_hash"].get<std::string>());
        }
      } catch (const nlohmann::json::exception&) {
        fail(name + " is not valid JSON");
      }
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (rel != "manifest.json" && !tracked.count(rel)) fail("untracked file " + rel);
  }
  if (hashes.size() > 1) {
    std::string list;
    for (const auto& h : hashes) list += (list.empty() ? "" : ", ") + h;
    fail("mixed provenance: config hashes " + list);
  }
  if (hashes.size() == 1) r.config_hash = *hashes.begin();
  return r;
}

void save_checkpoint(ArtifactWriter& writer, const std::string& subdir, const ProtoModel& model,
                     const std::vector<PatchSource>& provenance, const TrainingLog& log) {
  const std::string prefix = subdir.empty() ? "" : subdir + "/";
  writer.write_bytes(prefix + "weights.bin", encode_weights(model));
  const auto& b = model.bank.vectors;
  writer.write_bytes(prefix + "basis_bank.bin",
                     encode_f32_block({static_cast<std::uint32_t>(b.dim(0)), static_cast<std::uint32_t>(b.dim(1)),
                                       static_cast<std::uint32_t>(b.dim(2))},
                                      {b.values().begin(), b.values().end()}));
  const auto& h = model.head.weights;
  writer.write_bytes(prefix + "head.bin",
                     encode_f32_block({static_cast<std::uint32_t>(h.dim(0)), static_cast<std::uint32_t>(h.dim(1))},
                                      {h.values().begin(), h.values().end()}));
  nlohmann::ordered_json meta;
  meta["schema"] = "asxai.checkpoint/1";
  meta["class_labels"] = model.bank.class_labels;
  meta["model"] = {{"backbone_channels", model.config.backbone_channels},
                   {"feature_dim", model.config.feature_dim},
                   {"per_class", model.config.per_class},
                   {"seed", model.config.seed}};
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  std::istringstream lines(log.to_jsonl());
  for (std::string line; std::getline(lines, line);) stages.push_back(nlohmann::ordered_json::parse(line));
  meta["stage_log"] = stages;
  writer.write_json(prefix + "meta.json", meta);

  nlohmann::ordered_json prov;
  prov["schema"] = "asxai.provenance/1";
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  const std::size_t m = model.bank.per_class();
  for (std::size_t j = 0; j < provenance.size(); ++j) {
    entries.push_back({{"class", model.bank.class_labels[j / m]},
                       {"index", j % m},
                       {"image", provenance[j].image},
                       {"image_id", provenance[j].image_id},
                       {"row", provenance[j].row},
                       {"col", provenance[j].col}});
  }
  prov["basis_vectors"] = entries;
  writer.write_json(prefix + "provenance.json", prov);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " does not exist");
  const nlohmann::json meta = load_json(dir / "meta.json");
  if (meta.value("schema", "") != "asxai.checkpoint/1") throw IoError("meta.json: not a checkpoint");
  Checkpoint c;
  ModelConfig cfg;
  try {
    cfg.class_labels = meta.at("class_labels").get<std::vector<std::string>>();
    const auto& m = meta.at("model");
    cfg.backbone_channels = m.at("backbone_channels").get<std::vector<std::size_t>>();
    cfg.feature_dim = m.at("feature_dim").get<std::size_t>();
    cfg.per_class = m.at("per_class").get<std::size_t>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    c.config_hash = meta.at("config_hash").get<std::string>();
    c.stage_log = meta.at("stage_log");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("meta.json: ") + e.what());
  }
  c.model = ProtoModel(cfg);
  decode_weights(read_file(dir / "weights.bin"), c.model);

  const F32Block bank = decode_f32_block(read_file(dir / "basis_bank.bin"), 3);
  const std::vector<std::size_t> bank_shape{bank.header[0], bank.header[1], bank.header[2]};
  if (bank_shape != c.model.bank.vectors.shape()) throw IoError("basis_bank.bin: shape does not match meta.json");
  std::copy(bank.values.begin(), bank.values.end(), c.model.bank.vectors.values().begin());
  const F32Block head = decode_f32_block(read_file(dir / "head.bin"), 2);
  const std::vector<std::size_t> head_shape{head.header[0], head.header[1]};
  if (head_shape != c.model.head.weights.shape()) throw IoError("head.bin: shape does not match meta.json");
  std::copy(head.values.begin(), head.values.end(), c.model.head.weights.values().begin());

  if (fs::exists(dir / "provenance.json")) {
    const nlohmann::json prov = load_json(dir / "provenance.json");
    for (const auto& e : prov.at("basis_vectors")) {
      c.provenance.push_back({e.at("image").get<std::size_t>(), e.at("image_id").get<std::string>(),
                              e.at("row").get<std::size_t>(), e.at("col").get<std::size_t>()});
    }
  }
  return c;
}

std::string traits_file_stem(const std::string& concept_name) {
  std::string out = "traits_";
  for (char ch : concept_name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '-';
    out += ok ? ch : '_';
  }
  return out;
}

}  // namespace asxai
