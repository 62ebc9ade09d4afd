#include "asxai/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "asxai/errors.hpp"

namespace asxai {

namespace {

using ojson = nlohmann::ordered_json;

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ValidationError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ValidationError("unknown config key '" + section + "." + key + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  model.seed = value;
  train.seed = value;
  percept.seed = value;
  percept.retrain_config = train;
}

void RunConfig::validate() const {
  if (model.backbone_channels.empty()) throw ValidationError("model.backbone_channels must not be empty");
  if (model.feature_dim == 0 || model.per_class == 0) throw ValidationError("model.feature_dim and per_class must be > 0");
  train.validate();
  inversion.validate();
  explain.config.validate();
  percept.validate();
  if (rank.clusters == 0) throw ValidationError("rank.clusters must be >= 1");
  if (rank.probe_images == 0) throw ValidationError("rank.probe_images must be >= 1");
  if (!(rank.tolerance > 0.0)) throw ValidationError("rank.tolerance must be > 0");
  if (traits.samples < 2) throw ValidationError("traits.samples must be >= 2");
}

ojson RunConfig::to_json() const {
  ojson j;
  j["schema"] = kRunConfigSchema;
  j["seed"] = seed;
  j["model"] = {{"backbone_channels", model.backbone_channels},
                {"feature_dim", model.feature_dim},
                {"per_class", model.per_class}};
  j["train"] = {{"warmup_epochs", train.warmup_epochs},
                {"joint_epochs", train.joint_epochs},
                {"fc_iterations", train.fc_iterations},
                {"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size},
                {"max_cycles", train.max_cycles},
                {"tolerance", train.tolerance},
                {"train_backbone", train.train_backbone},
                {"perturbation_sigma", train.perturbation.sigma},
                {"loss_weights",
                 {{"orthogonality", train.loss_weights.orthogonality},
                  {"subspace_separation", train.loss_weights.subspace_separation},
                  {"separation", train.loss_weights.separation},
                  {"aggregation", train.loss_weights.aggregation}}}};
  j["data"] = {{"root", data.root},
               {"csv", data.csv},
               {"augment", data.augment},
               {"augmentation",
                {{"max_rotation_deg", data.augment_config.max_rotation_deg},
                 {"max_shear", data.augment_config.max_shear},
                 {"max_skew", data.augment_config.max_skew},
                 {"distortion", data.augment_config.distortion}}}};
  j["rank"] = {{"layer", to_string(rank.layer)},
               {"tolerance", rank.tolerance},
               {"clusters", rank.clusters},
               {"probe_images", rank.probe_images}};
  j["traits"] = {{"samples", traits.samples},
                 {"components", traits.components},
                 {"mode", traits.mode == TraitMode::masked ? "masked" : "raw"}};
  j["inversion"] = {{"lambda_tv", inversion.lambda_tv},
                    {"beta", inversion.beta},
                    {"iterations", inversion.iterations},
                    {"log_every", inversion.log_every},
                    {"tv_target", inversion.tv_target == TvTarget::image ? "image" : "features"}};
  j["explain"] = {{"activation", to_string(explain.config.activation)},
                  {"mask_percentile", explain.config.mask_percentile},
                  {"candidates", explain.config.candidates},
                  {"templates", explain.templates}};
  std::vector<std::string> domains;
  for (PerceptDomain d : percept.domains) domains.push_back(to_string(d));
  j["percept"] = {{"perturbation", percept.spec.to_json()},
                  {"samples_per_category", percept.samples_per_category},
                  {"domains", domains},
                  {"retrain", percept.retrain}};
  j["output"] = output;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"schema", "seed", "model", "train", "data", "rank", "traits", "inversion", "explain", "percept", "output"},
             "root");
  if (j.contains("schema") && j["schema"] != kRunConfigSchema) {
    throw ValidationError("unsupported config schema " + j["schema"].dump());
  }
  RunConfig c;
  try {
    read(j, "seed", c.seed);
    read(j, "output", c.output);
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, {"backbone_channels", "feature_dim", "per_class"}, "model");
      read(m, "backbone_channels", c.model.backbone_channels);
      read(m, "feature_dim", c.model.feature_dim);
      read(m, "per_class", c.model.per_class);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, {"warmup_epochs", "joint_epochs", "fc_iterations", "learning_rate", "batch_size", "max_cycles",
                     "tolerance", "train_backbone", "perturbation_sigma", "loss_weights"},
                 "train");
      read(t, "warmup_epochs", c.train.warmup_epochs);
      read(t, "joint_epochs", c.train.joint_epochs);
      read(t, "fc_iterations", c.train.fc_iterations);
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "batch_size", c.train.batch_size);
      read(t, "max_cycles", c.train.max_cycles);
      read(t, "tolerance", c.train.tolerance);
      read(t, "train_backbone", c.train.train_backbone);
      read(t, "perturbation_sigma", c.train.perturbation.sigma);
      if (t.contains("loss_weights")) {
        const auto& w = t["loss_weights"];
        check_keys(w, {"orthogonality", "subspace_separation", "separation", "aggregation"}, "train.loss_weights");
        read(w, "orthogonality", c.train.loss_weights.orthogonality);
        read(w, "subspace_separation", c.train.loss_weights.subspace_separation);
        read(w, "separation", c.train.loss_weights.separation);
        read(w, "aggregation", c.train.loss_weights.aggregation);
      }
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      check_keys(d, {"root", "csv", "augment", "augmentation"}, "data");
      read(d, "root", c.data.root);
      read(d, "csv", c.data.csv);
      read(d, "augment", c.data.augment);
      if (d.contains("augmentation")) {
        const auto& a = d["augmentation"];
        check_keys(a, {"max_rotation_deg", "max_shear", "max_skew", "distortion"}, "data.augmentation");
        read(a, "max_rotation_deg", c.data.augment_config.max_rotation_deg);
        read(a, "max_shear", c.data.augment_config.max_shear);
        read(a, "max_skew", c.data.augment_config.max_skew);
        read(a, "distortion", c.data.augment_config.distortion);
      }
    }
    if (j.contains("rank")) {
      const auto& r = j["rank"];
      check_keys(r, {"layer", "tolerance", "clusters", "probe_images"}, "rank");
      if (r.contains("layer")) c.rank.layer = parse_rank_layer(r["layer"].get<std::string>());
      read(r, "tolerance", c.rank.tolerance);
      read(r, "clusters", c.rank.clusters);
      read(r, "probe_images", c.rank.probe_images);
    }
    if (j.contains("traits")) {
      const auto& t = j["traits"];
      check_keys(t, {"samples", "components", "mode"}, "traits");
      read(t, "samples", c.traits.samples);
      read(t, "components", c.traits.components);
      if (t.contains("mode")) c.traits.mode = parse_trait_mode(t["mode"].get<std::string>());
    }
    if (j.contains("inversion")) {
      const auto& v = j["inversion"];
      check_keys(v, {"lambda_tv", "beta", "iterations", "log_every", "tv_target"}, "inversion");
      read(v, "lambda_tv", c.inversion.lambda_tv);
      read(v, "beta", c.inversion.beta);
      read(v, "iterations", c.inversion.iterations);
      read(v, "log_every", c.inversion.log_every);
      if (v.contains("tv_target")) c.inversion.tv_target = parse_tv_target(v["tv_target"].get<std::string>());
    }
    if (j.contains("explain")) {
      const auto& e = j["explain"];
      check_keys(e, {"activation", "mask_percentile", "candidates", "templates"}, "explain");
      if (e.contains("activation")) c.explain.config.activation = parse_activation_mode(e["activation"].get<std::string>());
      read(e, "mask_percentile", c.explain.config.mask_percentile);
      read(e, "candidates", c.explain.config.candidates);
      read(e, "templates", c.explain.templates);
    }
    if (j.contains("percept")) {
      const auto& p = j["percept"];
      check_keys(p, {"perturbation", "samples_per_category", "domains", "retrain"}, "percept");
      if (p.contains("perturbation")) {
        check_keys(p["perturbation"], {"contrast", "brightness", "saturation", "hue", "texture_strength", "shape_roll_fraction"},
                   "percept.perturbation");
        c.percept.spec = PerturbSpec::from_json(p["perturbation"]);
      }
      read(p, "samples_per_category", c.percept.samples_per_category);
      if (p.contains("domains")) {
        c.percept.domains.clear();
        for (const auto& d : p["domains"]) c.percept.domains.push_back(parse_domain(d.get<std::string>()));
      }
      read(p, "retrain", c.percept.retrain);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config value has the wrong type: ") + e.what());
  }
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const {
  nlohmann::json j = nlohmann::json::parse(to_json().dump());  // std::map keys, so sorted
  j.erase("output");
  const std::string text = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

}  // namespace asxai
