#include "asxai/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "asxai/artifacts.hpp"
#include "asxai/common_traits.hpp"
#include "asxai/dataset.hpp"
#include "asxai/errors.hpp"
#include "asxai/explanation.hpp"
#include "asxai/feature_viz.hpp"
#include "asxai/log.hpp"
#include "asxai/percept_study.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/render.hpp"
#include "asxai/rng.hpp"
#include "asxai/run_config.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace asxai {

namespace {

constexpr std::size_t kBatch = 16;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct Options {
  CommonOptions common;
  std::string data, csv, checkpoint, templates, references, domains;
  std::vector<std::string> images;
  std::size_t per_class = 100;
  std::optional<std::size_t> samples;
  std::string verify_dir;
};

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "run configuration (JSON)");
  sub->add_option("--out", c.out, "output directory (default: config output, then $ASXAI_OUT, then ./asxai_out)");
  sub->add_option("--seed", c.seed, "overrides the configured seed");
}

void add_data(CLI::App* sub, Options& o) {
  sub->add_option("--data", o.data, "folder-per-class dataset root");
  sub->add_option("--csv", o.csv, "path,label CSV manifest");
}

void add_checkpoint(CLI::App* sub, Options& o) {
  sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory (default: <out>/checkpoint)");
}

std::string stem_of(const std::string& path) {
  std::string s = fs::path(path).stem().string();
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  }
  return s;
}

/// Everything a subcommand needs after option parsing.
class Session {
 public:
  Session(const Options& o, bool uses_checkpoint) : opts_(o) {
    const fs::path stored = checkpoint_dir_guess(o) / "run_config.json";
    if (!o.common.config.empty()) {
      config_ = RunConfig::load(o.common.config);
    } else if (uses_checkpoint && fs::exists(stored)) {
      // the copy written by train carries the artifact hash field
      nlohmann::json j = nlohmann::json::parse(read_file(stored));
      j.erase("config_hash");
      config_ = RunConfig::from_json(j);
    }
    if (o.common.seed) config_.set_seed(*o.common.seed);
    if (!o.data.empty()) config_.data.root = o.data;
    if (!o.csv.empty()) config_.data.csv = o.csv;
    config_.validate();
  }

  RunConfig& config() { return config_; }

  fs::path out_dir() const {
    if (!opts_.common.out.empty()) return opts_.common.out;
    if (!config_.output.empty()) return config_.output;
    if (const char* env = std::getenv("ASXAI_OUT"); env && *env) return env;
    return "asxai_out";
  }

  fs::path checkpoint_dir() const { return opts_.checkpoint.empty() ? out_dir() / "checkpoint" : fs::path(opts_.checkpoint); }

  ArtifactWriter& writer() {
    if (!writer_) writer_.emplace(out_dir(), config_.hash());
    return *writer_;
  }

  DatasetManifest manifest() const {
    DatasetManifest m;
    if (!config_.data.csv.empty()) {
      m = ingest_csv(config_.data.csv);
    } else if (!config_.data.root.empty()) {
      m = ingest_dataset(config_.data.root);
    } else {
      throw ValidationError("no dataset: pass --data or --csv, or set data.root in the config");
    }
    m.augment = config_.data.augment;
    return m;
  }

  LoadedImages images() const {
    AugmentConfig aug = config_.data.augment_config;
    aug.enabled = config_.data.augment;
    return load_images(manifest(), config_.seed, aug);
  }

 private:
  static fs::path checkpoint_dir_guess(const Options& o) {
    if (!o.checkpoint.empty()) return o.checkpoint;
    if (!o.common.out.empty()) return fs::path(o.common.out) / "checkpoint";
    if (const char* env = std::getenv("ASXAI_OUT"); env && *env) return fs::path(env) / "checkpoint";
    return fs::path("asxai_out") / "checkpoint";
  }

  const Options& opts_;
  RunConfig config_;
  std::optional<ArtifactWriter> writer_;
};

struct LoadedModel {
  Checkpoint checkpoint;
  ConceptAssignment assignment;
  std::optional<Explainer> explainer;
};

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(p.string() + " is not valid JSON: " + e.what());
  }
}

LoadedModel load_model(const fs::path& dir, bool need_explainer) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(dir);
  const fs::path concepts = dir / "concepts.json";
  if (!fs::exists(concepts)) throw IoError("checkpoint has no concepts.json: " + dir.string());
  m.assignment = ConceptAssignment::from_json(read_json(concepts));
  if (need_explainer) {
    const fs::path ex = dir / "explainer.json";
    if (!fs::exists(ex)) throw IoError("checkpoint has no explainer.json: " + dir.string());
    m.explainer = Explainer::from_json(read_json(ex));
  }
  return m;
}

/// Dataset labels re-indexed to the model's class order.
std::vector<int> align_labels(const LoadedImages& data, const DatasetManifest& manifest, const ProtoModel& model) {
  const auto& names = model.bank.class_labels;
  std::vector<int> map;
  for (const auto& c : manifest.classes) {
    const auto it = std::find(names.begin(), names.end(), c.name);
    if (it == names.end()) throw ValidationError("dataset class '" + c.name + "' is not a class of the checkpoint");
    map.push_back(static_cast<int>(it - names.begin()));
  }
  std::vector<int> out;
  for (int l : data.labels) out.push_back(map[static_cast<std::size_t>(l)]);
  return out;
}

/// `count` indices spread evenly over [0, n).
std::vector<std::size_t> spread(std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx;
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) idx.push_back(i * n / count);
  return idx;
}

Tensor gather(const std::vector<Image>& images, const std::vector<std::size_t>& idx) {
  std::vector<Image> picked;
  for (std::size_t i : idx) picked.push_back(images[i]);
  return images_to_tensor(picked);
}

Tensor predict(const ProtoModel& model, const Tensor& images) {
  const std::size_t n = images.dim(0), c = model.classes();
  Tensor probs({n, c});
  for (std::size_t b = 0; b < n; b += kBatch) {
    const std::size_t e = std::min(n, b + kBatch);
    const Tensor p = classify(global_max_pool(cosine_similarity_maps(extract_features(images.slice(b, e), model), model.bank)),
                              model.head);
    std::copy(p.values().begin(), p.values().end(), probs.values().begin() + static_cast<long>(b * c));
  }
  return probs;
}

Image load_input(const std::string& path) {
  const Image raw = load_image(path);
  return resize_bilinear(raw, kInputSize, kInputSize);
}

void write_model_bundle(Session& s, const ProtoModel& model, const std::vector<PatchSource>& provenance,
                        const TrainingLog& log, const Tensor& images, const std::vector<int>& labels,
                        const ConceptAssignment& assignment) {
  ArtifactWriter& w = s.writer();
  save_checkpoint(w, "checkpoint", model, provenance, log);
  w.write_json("checkpoint/concepts.json", assignment.to_json());
  w.write_json("checkpoint/explainer.json",
               fit_explainer(model, images, labels, assignment, s.config().explain.config).to_json());
  w.write_json("checkpoint/run_config.json", s.config().to_json());
}

ConceptAssignment fit_assignment(const RunConfig& cfg, const ProtoModel& model, const std::vector<Image>& images) {
  const Tensor probe = gather(images, spread(images.size(), cfg.rank.probe_images));
  return assign_concepts(model, probe, cfg.rank.clusters, cfg.seed, cfg.rank.layer, cfg.rank.tolerance);
}

// ---- subcommands ----

int cmd_toy_data(const Options& o, std::ostream& out) {
  const std::uint64_t seed = o.common.seed.value_or(0);
  fs::path root = o.common.out;
  if (root.empty()) {
    const char* env = std::getenv("ASXAI_OUT");
    root = env && *env ? fs::path(env) / "toy_data" : fs::path("toy_data");
  }
  if (o.per_class == 0) throw ValidationError("--per-class must be >= 1");
  write_toy_dataset(make_toy_images(o.per_class, seed), root);
  out << "wrote " << 2 * o.per_class << " images to " << root.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  Session s(o, false);
  RunConfig& cfg = s.config();
  const DatasetManifest manifest = s.manifest();
  const LoadedImages data = s.images();
  TrainingSet set;
  set.images = images_to_tensor(data.images);
  set.labels = data.labels;
  set.ids = data.ids;

  ModelConfig mc = cfg.model;
  mc.class_labels = manifest.class_names();
  mc.seed = cfg.seed;
  ProtoModel model(mc);
  const double orth_before = orthogonality_loss(model.bank);
  const TrainResult result = train(model, set, cfg.train);
  const double acc = accuracy(predict(model, set.images), set.labels);
  const ConceptAssignment assignment = fit_assignment(cfg, model, data.images);

  ArtifactWriter& w = s.writer();
  w.write_json("dataset_manifest.json", ojson::parse(manifest.to_json()));
  write_model_bundle(s, model, result.provenance, result.log, set.images, set.labels, assignment);
  std::string jsonl;
  std::istringstream lines(result.log.to_jsonl());
  for (std::string line; std::getline(lines, line);) {
    ojson rec = ojson::parse(line);
    rec["config_hash"] = w.config_hash();
    jsonl += rec.dump() + "\n";
  }
  w.write_text("training_log.jsonl", jsonl);
  ojson summary;
  summary["schema"] = "asxai.train_summary/1";
  summary["class_labels"] = mc.class_labels;
  summary["images"] = set.size();
  summary["cycles"] = result.cycles;
  summary["train_accuracy"] = acc;
  summary["orthogonality_initial"] = orth_before;
  summary["orthogonality_final"] = orthogonality_loss(model.bank);
  summary["concepts"] = assignment.names;
  w.write_json("train_summary.json", summary);
  out << "trained " << result.cycles << " cycle(s) on " << set.size() << " images, accuracy " << acc << "; wrote "
      << w.root().string() << "\n";
  return kExitOk;
}

int cmd_project(const Options& o, std::ostream& out) {
  Session s(o, true);
  LoadedModel m = load_model(s.checkpoint_dir(), false);
  const DatasetManifest manifest = s.manifest();
  const LoadedImages data = s.images();
  TrainingSet set;
  set.images = images_to_tensor(data.images);
  set.labels = align_labels(data, manifest, m.checkpoint.model);
  set.ids = data.ids;
  ProtoModel& model = m.checkpoint.model;
  const std::vector<PatchSource> provenance = project_basis_vectors(model, set);

  // reconstruction error of every vector against its recorded patch
  const std::size_t per = model.bank.per_class(), dim = model.bank.dim();
  double worst = 0.0;
  ojson vectors = ojson::array();
  for (std::size_t j = 0; j < provenance.size(); ++j) {
    const PatchSource& p = provenance[j];
    const FeatureMap f = extract_features(set.images.slice(p.image, p.image + 1), model);
    double err = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      err = std::max(err, std::abs(model.bank.vectors(j / per, j % per, d) - f.values(0, d, p.row, p.col)));
    }
    worst = std::max(worst, err);
    vectors.push_back({{"class", model.bank.class_labels[j / per]},
                       {"index", j % per},
                       {"image_id", p.image_id},
                       {"row", p.row},
                       {"col", p.col},
                       {"max_abs_error", err}});
  }
  TrainingLog log;
  write_model_bundle(s, model, provenance, log, set.images, set.labels, m.assignment);
  ojson report;
  report["schema"] = "asxai.projection/1";
  report["max_abs_error"] = worst;
  report["basis_vectors"] = vectors;
  s.writer().write_json("projection.json", report);
  out << "projected " << provenance.size() << " basis vectors, max error " << worst << "\n";
  return kExitOk;
}

int cmd_rank(const Options& o, std::ostream& out) {
  Session s(o, true);
  const LoadedModel m = load_model(s.checkpoint_dir(), false);
  std::vector<Image> images;
  std::vector<std::string> ids;
  if (!o.images.empty()) {
    for (const auto& p : o.images) {
      images.push_back(load_input(p));
      ids.push_back(fs::path(p).filename().string());
    }
  } else {
    const LoadedImages data = s.images();
    for (std::size_t i : spread(data.images.size(), s.config().rank.probe_images)) {
      images.push_back(data.images[i]);
      ids.push_back(data.ids[i]);
    }
  }
  std::vector<RankProfile> profiles;
  ojson per_image = ojson::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    profiles.push_back(rank_profile(m.checkpoint.model, images_to_tensor(std::span(&images[i], 1)), m.assignment, ids[i],
                                    s.config().rank.tolerance));
    per_image.push_back(profiles.back().to_json());
  }
  const RankProfile avg = average_profiles(profiles);
  ojson j;
  j["schema"] = "asxai.rank_profiles/1";
  j["layer"] = to_string(m.assignment.layer);
  j["average"] = avg.to_json();
  j["images"] = per_image;
  s.writer().write_json("rank_profiles.json", j);
  for (const auto& [name, score] : avg.scores) out << name << "\t" << score << "\n";
  return kExitOk;
}

struct TraitFit {
  std::size_t concept_index;
  ConceptFeatures features;
  TraitSpace space;
};

std::vector<TraitFit> fit_all_traits(const RunConfig& cfg, const ProtoModel& model, const ConceptAssignment& assignment,
                                     const Tensor& images, const std::vector<std::string>& ids) {
  std::vector<TraitFit> fits;
  for (std::size_t s = 0; s < assignment.concept_count(); ++s) {
    ConceptFeatures f = collect_concept_features(model, images, ids, assignment, s, cfg.traits.samples,
                                                 derive_seed(cfg.seed, {0x747261, s}), cfg.traits.mode);
    if (f.w.rows() < 2 || f.w.cols() == 0) {
      log_warning("concept " + assignment.names[s] + " has too few samples or no filters; no traits fitted");
      continue;
    }
    TraitSpace space = fit_traits(f.w, cfg.traits.components);
    space.sample_ids = f.sample_ids;
    fits.push_back({s, std::move(f), std::move(space)});
  }
  return fits;
}

int cmd_traits(const Options& o, std::ostream& out) {
  Session s(o, true);
  const LoadedModel m = load_model(s.checkpoint_dir(), false);
  const LoadedImages data = s.images();
  const Tensor images = images_to_tensor(data.images);
  ArtifactWriter& w = s.writer();
  for (const TraitFit& t : fit_all_traits(s.config(), m.checkpoint.model, m.assignment, images, data.ids)) {
    const std::string name = m.assignment.names[t.concept_index];
    const std::string stem = traits_file_stem(name);
    const auto& pc = t.space.components;
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(pc.size()));
    for (Eigen::Index r = 0; r < pc.rows(); ++r) {
      for (Eigen::Index c = 0; c < pc.cols(); ++c) values.push_back(pc(r, c));
    }
    w.write_bytes(stem + ".bin", encode_f32_block({static_cast<std::uint32_t>(pc.rows()), static_cast<std::uint32_t>(pc.cols())},
                                                  values));
    ojson j = t.space.to_json();
    j["concept"] = name;
    j["filters"] = m.assignment.filters_of(t.concept_index);
    j["mode"] = s.config().traits.mode == TraitMode::masked ? "masked" : "raw";
    w.write_json(stem + ".json", j);
    out << name << "\tk=" << t.space.k << "\tsamples=" << t.space.sample_count() << "\n";
  }
  return kExitOk;
}

int cmd_visualize(const Options& o, std::ostream& out) {
  Session s(o, true);
  const LoadedModel m = load_model(s.checkpoint_dir(), false);
  const ProtoModel& model = m.checkpoint.model;
  ArtifactWriter& w = s.writer();

  if (!s.config().data.root.empty() || !s.config().data.csv.empty()) {
    const LoadedImages data = s.images();
    const Tensor images = images_to_tensor(data.images);
    for (const TraitFit& t : fit_all_traits(s.config(), model, m.assignment, images, data.ids)) {
      const std::string name = m.assignment.names[t.concept_index];
      const std::vector<std::size_t> filters = m.assignment.filters_of(t.concept_index);
      ModelLayerMap phi(model, m.assignment.layer, filters);
      const std::size_t side = static_cast<std::size_t>(t.features.w.cols()) / filters.size();
      const std::size_t h = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(side))));
      // first common-trait direction, scaled to the typical sample norm
      Eigen::VectorXd dir = t.space.components.col(0);
      const double typical = t.features.w.rowwise().norm().mean();
      if (dir.norm() > 0) dir *= typical / dir.norm();
      Tensor target({filters.size(), h, h});
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = dir(static_cast<Eigen::Index>(i));
      const InversionResult r = invert_features(target, phi, s.config().inversion);
      const std::string stem = "visualize/" + traits_file_stem(name);
      w.write_png(stem + ".png", visualize_input(r.image));
      std::string jsonl;
      std::istringstream lines(r.log_jsonl());
      for (std::string line; std::getline(lines, line);) {
        ojson rec = ojson::parse(line);
        rec["config_hash"] = w.config_hash();
        jsonl += rec.dump() + "\n";
      }
      w.write_text(stem + "_inversion.jsonl", jsonl);
      out << name << "\tinversion objective " << r.final_objective << (r.aborted ? " (aborted)" : "") << "\n";
    }
  }

  static const float kMaskColor[3] = {1.0f, 0.1f, 0.1f};
  for (const auto& path : o.images) {
    const Image img = load_input(path);
    const Tensor x = images_to_tensor(std::span(&img, 1));
    const Tensor sim = cosine_similarity_maps(extract_features(x, model), model.bank);
    const Tensor probs = predict(model, x);
    std::size_t cls = 0;
    for (std::size_t c = 1; c < model.classes(); ++c) {
      if (probs(0, c) > probs(0, cls)) cls = c;
    }
    const std::size_t per = model.bank.per_class(), h = sim.dim(2), wd = sim.dim(3);
    for (std::size_t k = 0; k < m.assignment.concept_count(); ++k) {
      Eigen::MatrixXd map = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(wd), -1.0);
      bool any = false;
      for (std::size_t j = cls * per; j < (cls + 1) * per; ++j) {
        if (m.assignment.basis_concept[j] != static_cast<int>(k)) continue;
        any = true;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < wd; ++c) {
            auto& v = map(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            v = std::max(v, sim(0, j, r, c));
          }
        }
      }
      if (!any) continue;
      const auto mask = salient_region_mask(map, s.config().explain.config.mask_percentile);
      w.write_png("visualize/mask_" + stem_of(path) + "_" + traits_file_stem(m.assignment.names[k]).substr(7) + ".png",
                  overlay_mask(img, mask, kMaskColor));
    }
  }
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out) {
  if (o.images.empty()) throw ValidationError("explain needs --image");
  Session s(o, true);
  const LoadedModel m = load_model(s.checkpoint_dir(), true);
  ExplanationTemplates templates;
  const std::string tpath = !o.templates.empty() ? o.templates : s.config().explain.templates;
  if (!tpath.empty()) templates = ExplanationTemplates::load(tpath);

  std::optional<ReferenceSet> refs;
  if (!o.references.empty()) {
    const DatasetManifest rm = ingest_dataset(o.references);
    LoadedImages ri = load_images(rm, s.config().seed, AugmentConfig{.enabled = false});
    refs.emplace();
    refs->labels = align_labels(ri, rm, m.checkpoint.model);
    refs->images = std::move(ri.images);
  }
  ArtifactWriter& w = s.writer();
  for (const auto& path : o.images) {
    const Image img = load_input(path);
    const std::string stem = stem_of(path);
    const ExplanationReport r = explain_image(m.checkpoint.model, *m.explainer, images_to_tensor(std::span(&img, 1)),
                                              fs::path(path).filename().string(), templates, refs ? &*refs : nullptr, &img);
    w.write_json("explanation_" + stem + ".json", r.to_json());
    w.write_png("bubble_ring_" + stem + ".png", render_bubble_ring(r));
    w.write_png("similarity_hist_" + stem + ".png", render_similarity_histogram(r));
    out << r.text << "\n";
  }
  return kExitOk;
}

int cmd_percept(const Options& o, std::ostream& out) {
  Session s(o, true);
  const LoadedModel m = load_model(s.checkpoint_dir(), false);
  const DatasetManifest manifest = s.manifest();
  const LoadedImages data = s.images();
  PerceptConfig cfg = s.config().percept;
  if (!o.domains.empty()) {
    cfg.domains.clear();
    std::stringstream ss(o.domains);
    for (std::string d; std::getline(ss, d, ',');) {
      if (!d.empty()) cfg.domains.push_back(parse_domain(d));
    }
  }
  if (o.samples) cfg.samples_per_category = *o.samples;
  cfg.validate();
  const PerceptReport r = run_percept_study(m.checkpoint.model, data.images, align_labels(data, manifest, m.checkpoint.model),
                                            data.ids, m.assignment, cfg);
  ArtifactWriter& w = s.writer();
  w.write_json("sensitivity_report.json", r.to_json());
  if (!r.cells.empty()) w.write_png("sensitivity_boxplots.png", render_boxplots(r));
  for (const auto& c : r.cells) out << c.concept_name << "\t" << to_string(c.domain) << "\tmedian " << c.stats.median << "\n";
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  Session s(o, true);
  const fs::path root = s.out_dir();
  if (!fs::is_directory(root)) throw IoError("output directory " + root.string() + " does not exist");
  ojson report;
  report["schema"] = "asxai.report/1";
  std::ostringstream md;
  md << "# Run report\n\nconfig hash `" << s.config().hash() << "`\n";

  if (fs::exists(root / "train_summary.json")) {
    const auto t = read_json(root / "train_summary.json");
    report["training"] = t;
    md << "\n## Training\n\n- classes: " << t["class_labels"].dump() << "\n- images: " << t["images"] << "\n- cycles: "
       << t["cycles"] << "\n- train accuracy: " << t["train_accuracy"] << "\n- orthogonality loss: "
       << t["orthogonality_initial"] << " -> " << t["orthogonality_final"] << "\n";
  }
  if (fs::exists(root / "rank_profiles.json")) {
    const auto r = read_json(root / "rank_profiles.json");
    report["rank_scores"] = r["average"]["scores"];
    md << "\n## Concept sensitivity\n\n";
    for (const auto& [k, v] : r["average"]["scores"].items()) md << "- " << k << ": " << v << "\n";
  }
  std::vector<fs::path> explanations, traits;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string n = e.path().filename().string();
    if (n.starts_with("explanation_") && n.ends_with(".json")) explanations.push_back(e.path());
    if (n.starts_with("traits_") && n.ends_with(".json")) traits.push_back(e.path());
  }
  std::sort(explanations.begin(), explanations.end());
  std::sort(traits.begin(), traits.end());
  if (!traits.empty()) {
    md << "\n## Common traits\n\n";
    ojson tj = ojson::array();
    for (const auto& p : traits) {
      const auto t = read_json(p);
      tj.push_back({{"concept", t["concept"]}, {"k", t["k"]}, {"rank", t["rank"]}});
      md << "- " << t["concept"].get<std::string>() << ": k = " << t["k"] << "\n";
    }
    report["traits"] = tj;
  }
  if (!explanations.empty()) {
    md << "\n## Explanations\n\n";
    ojson ej = ojson::array();
    for (const auto& p : explanations) {
      const auto e = read_json(p);
      ej.push_back({{"image_id", e["image_id"]}, {"named_class", e["named_class"]}, {"text", e["text"]}});
      md << "- " << e["image_id"].get<std::string>() << ": " << e["text"].get<std::string>() << "\n";
    }
    report["explanations"] = ej;
  }
  if (fs::exists(root / "sensitivity_report.json")) {
    const auto r = read_json(root / "sensitivity_report.json");
    md << "\n## Perception sensitivity (median delta)\n\n";
    ojson cells = ojson::array();
    for (const auto& c : r["cells"]) {
      cells.push_back({{"concept", c["concept"]}, {"domain", c["domain"]}, {"median", c["stats"]["median"]}});
      md << "- " << c["concept"].get<std::string>() << " / " << c["domain"].get<std::string>() << ": "
         << c["stats"]["median"] << "\n";
    }
    report["perception"] = cells;
  }
  ArtifactWriter& w = s.writer();
  w.write_json("report.json", report);
  w.write_text("report.md", md.str());
  out << md.str();
  return kExitOk;
}

int cmd_verify(const Options& o, std::ostream& out) {
  fs::path dir = o.verify_dir;
  if (dir.empty()) dir = o.common.out;
  if (dir.empty()) {
    const char* env = std::getenv("ASXAI_OUT");
    dir = env && *env ? fs::path(env) : fs::path("asxai_out");
  }
  const VerifyResult r = verify_artifacts(dir);
  ojson j;
  j["schema"] = "asxai.verify/1";
  j["directory"] = dir.string();
  j["ok"] = r.ok;
  j["config_hash"] = r.config_hash;
  j["problems"] = r.problems;
  out << j.dump() << "\n";
  return r.ok ? kExitOk : kExitFailure;
}

void error_record(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message) {
  ojson j;
  j["schema"] = "asxai.error/1";
  j["command"] = command;
  j["error"] = kind;
  j["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-level explanations for prototype CNNs", "asxai"};
  app.require_subcommand(1);
  Options o;

  auto* toy = app.add_subcommand("toy-data", "write the synthetic two-class dataset as PNG folders");
  toy->add_option("--out", o.common.out, "dataset root (default: $ASXAI_OUT/toy_data, then ./toy_data)");
  toy->add_option("--seed", o.common.seed, "generator seed");
  toy->add_option("--per-class", o.per_class, "images per class")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "train a model, fit concepts and write a checkpoint");
  add_common(train_cmd, o.common);
  add_data(train_cmd, o);

  auto* project = app.add_subcommand("project", "project basis vectors onto dataset patches");
  add_common(project, o.common);
  add_data(project, o);
  add_checkpoint(project, o);

  auto* rank = app.add_subcommand("rank", "per-concept rank sensitivity");
  add_common(rank, o.common);
  add_data(rank, o);
  add_checkpoint(rank, o);
  rank->add_option("--image", o.images, "images to profile (default: probe images from the dataset)");

  auto* traits = app.add_subcommand("traits", "row-centered PCA common traits per concept");
  add_common(traits, o.common);
  add_data(traits, o);
  add_checkpoint(traits, o);

  auto* viz = app.add_subcommand("visualize", "invert common traits and draw salient-region masks");
  add_common(viz, o.common);
  add_data(viz, o);
  add_checkpoint(viz, o);
  viz->add_option("--image", o.images, "images to draw concept masks for");

  auto* explain = app.add_subcommand("explain", "explain the prediction for one or more images");
  add_common(explain, o.common);
  add_checkpoint(explain, o);
  explain->add_option("--image", o.images, "image file")->required();
  explain->add_option("--templates", o.templates, "explanation templates (JSON)");
  explain->add_option("--references", o.references, "folder-per-class reference images for structural similarity");

  auto* percept = app.add_subcommand("percept-study", "perception sensitivity under six perturbation domains");
  add_common(percept, o.common);
  add_data(percept, o);
  add_checkpoint(percept, o);
  percept->add_option("--domains", o.domains, "comma-separated subset of hue,brightness,contrast,saturation,texture,shape");
  percept->add_option("--samples", o.samples, "samples per category");

  auto* report = app.add_subcommand("report", "summarize the artifacts of an output directory");
  add_common(report, o.common);
  add_checkpoint(report, o);

  auto* verify = app.add_subcommand("verify", "check digests and config hashes of an output directory");
  verify->add_option("dir", o.verify_dir, "output directory");
  verify->add_option("--out", o.common.out, "output directory");

  const std::vector<std::string> names{"toy-data", "train", "project", "rank", "traits", "visualize",
                                       "explain", "percept-study", "report", "verify"};
  if (args.empty() || (args[0].rfind("-", 0) != 0 && std::find(names.begin(), names.end(), args[0]) == names.end())) {
    if (!args.empty()) err << "unknown subcommand '" << args[0] << "'\n";
    err << app.help();
    return kExitUsage;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "toy-data") return cmd_toy_data(o, out);
    if (command == "train") return cmd_train(o, out);
    if (command == "project") return cmd_project(o, out);
    if (command == "rank") return cmd_rank(o, out);
    if (command == "traits") return cmd_traits(o, out);
    if (command == "visualize") return cmd_visualize(o, out);
    if (command == "explain") return cmd_explain(o, out);
    if (command == "percept-study") return cmd_percept(o, out);
    if (command == "report") return cmd_report(o, out);
    return cmd_verify(o, out);
  } catch (const ValidationError& e) {
    error_record(err, command, "validation", e.what());
    return kExitInvalid;
  } catch (const IoError& e) {
    error_record(err, command, "io", e.what());
    return kExitIo;
  } catch (const DivergenceError& e) {
    error_record(err, command, "divergence", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    error_record(err, command, "internal", e.what());
    return kExitFailure;
  }
}

}  // namespace asxai
