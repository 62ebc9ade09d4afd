#include "asxai/percept_study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <opencv2/imgproc.hpp>
#include <opencv2/photo.hpp>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "asxai/rng.hpp"

namespace asxai {

PerceptDomain parse_domain(const std::string& name) {
  for (PerceptDomain d : kAllDomains) {
    if (to_string(d) == name) return d;
  }
  throw ValidationError("unknown perceptual domain '" + name +
                        "' (expected hue, brightness, contrast, saturation, texture or shape)");
}

std::string to_string(PerceptDomain domain) {
  switch (domain) {
    case PerceptDomain::hue: return "hue";
    case PerceptDomain::brightness: return "brightness";
    case PerceptDomain::contrast: return "contrast";
    case PerceptDomain::saturation: return "saturation";
    case PerceptDomain::texture: return "texture";
    case PerceptDomain::shape: return "shape";
  }
  return "unknown";
}

void PerturbSpec::validate() const {
  if (!(brightness >= 0.0) || !(contrast >= 0.0) || !(saturation >= 0.0)) {
    throw ValidationError("brightness, contrast and saturation jitter must be >= 0");
  }
  if (!(hue >= 0.0 && hue <= 0.5)) throw ValidationError("hue jitter must be in [0, 0.5]");
  if (!(texture_strength >= 0.0)) throw ValidationError("texture strength must be >= 0");
  if (!(shape_roll_fraction >= 0.0 && shape_roll_fraction < 1.0)) {
    throw ValidationError("shape roll fraction must be in [0, 1)");
  }
}

nlohmann::ordered_json PerturbSpec::to_json() const {
  return {{"contrast", contrast},   {"brightness", brightness},
          {"saturation", saturation}, {"hue", hue},
          {"texture_strength", texture_strength}, {"shape_roll_fraction", shape_roll_fraction}};
}

PerturbSpec PerturbSpec::from_json(const nlohmann::json& j) {
  PerturbSpec s;
  s.contrast = j.value("contrast", s.contrast);
  s.brightness = j.value("brightness", s.brightness);
  s.saturation = j.value("saturation", s.saturation);
  s.hue = j.value("hue", s.hue);
  s.texture_strength = j.value("texture_strength", s.texture_strength);
  s.shape_roll_fraction = j.value("shape_roll_fraction", s.shape_roll_fraction);
  s.validate();
  return s;
}

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double gray(const Image& img, std::size_t i) {
  return 0.299 * img.rgb[i * 3] + 0.587 * img.rgb[i * 3 + 1] + 0.114 * img.rgb[i * 3 + 2];
}

double jitter_factor(double amount, Rng& rng) { return rng.uniform(std::max(0.0, 1.0 - amount), 1.0 + amount); }

Image denoise(const Image& image, double strength) {
  if (strength == 0.0) return image;
  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      rgb.data[i * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(std::clamp(image.rgb[i * 3 + c], 0.0f, 1.0f) * 255.0f));
    }
  }
  cv::Mat out;
  const float h = static_cast<float>(strength);
  cv::fastNlMeansDenoisingColored(rgb, out, h, h, 7, 21);
  Image result(image.height, image.width);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) result.rgb[i * 3 + c] = out.data[i * 3 + (2 - c)] / 255.0f;
  }
  return result;
}

// Each row shifts horizontally and each column vertically by a sinusoid of
// amplitude fraction * size, wrapping around.
Image wave_roll(const Image& image, double fraction, Rng& rng) {
  const std::size_t h = image.height, w = image.width;
  const double amp_x = fraction * static_cast<double>(w), amp_y = fraction * static_cast<double>(h);
  const double phase_x = rng.uniform(0.0, 2.0 * M_PI), phase_y = rng.uniform(0.0, 2.0 * M_PI);
  const double cycles = rng.uniform(1.0, 3.0);
  auto wrap = [](long v, std::size_t n) { return static_cast<std::size_t>(((v % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n)); };
  Image rows(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const long shift = std::lround(amp_x * std::sin(2.0 * M_PI * cycles * static_cast<double>(y) / static_cast<double>(h) + phase_x));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = wrap(static_cast<long>(x) - shift, w);
      for (std::size_t c = 0; c < 3; ++c) rows.at(y, x, c) = image.at(y, sx, c);
    }
  }
  Image out(h, w);
  for (std::size_t x = 0; x < w; ++x) {
    const long shift = std::lround(amp_y * std::sin(2.0 * M_PI * cycles * static_cast<double>(x) / static_cast<double>(w) + phase_y));
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = wrap(static_cast<long>(y) - shift, h);
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = rows.at(sy, x, c);
    }
  }
  return out;
}

}  // namespace

Image apply_perturbation(const Image& image, PerceptDomain domain, const PerturbSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (image.rgb.size() != image.height * image.width * 3 || image.rgb.empty()) {
    throw ValidationError("apply_perturbation: malformed image");
  }
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(domain)}));
  const std::size_t n = image.height * image.width;
  Image out = image;
  switch (domain) {
    case PerceptDomain::brightness: {
      const double f = jitter_factor(spec.brightness, rng);
      for (float& v : out.rgb) v = clamp01(v * f);
      break;
    }
    case PerceptDomain::contrast: {
      const double f = jitter_factor(spec.contrast, rng);
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += gray(image, i);
      mean /= static_cast<double>(n);
      for (float& v : out.rgb) v = clamp01(f * v + (1.0 - f) * mean);
      break;
    }
    case PerceptDomain::saturation: {
      const double f = jitter_factor(spec.saturation, rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = gray(image, i);
        for (std::size_t c = 0; c < 3; ++c) out.rgb[i * 3 + c] = clamp01(f * image.rgb[i * 3 + c] + (1.0 - f) * g);
      }
      break;
    }
    case PerceptDomain::hue: {
      if (spec.hue == 0.0) break;
      const float shift = static_cast<float>(rng.uniform(-spec.hue, spec.hue));
      for (std::size_t i = 0; i < n; ++i) {
        float h, s, v;
        rgb_to_hsv(image.rgb[i * 3], image.rgb[i * 3 + 1], image.rgb[i * 3 + 2], h, s, v);
        h = std::fmod(h + shift + 1.0f, 1.0f);
        hsv_to_rgb(h, s, v, out.rgb[i * 3], out.rgb[i * 3 + 1], out.rgb[i * 3 + 2]);
      }
      break;
    }
    case PerceptDomain::texture:
      out = denoise(image, spec.texture_strength);
      break;
    case PerceptDomain::shape:
      if (spec.shape_roll_fraction > 0.0) out = wave_roll(image, spec.shape_roll_fraction, rng);
      break;
  }
  return out;
}

Image apply_perturbation(const Image& image, const std::string& domain, const PerturbSpec& spec, std::uint64_t seed) {
  return apply_perturbation(image, parse_domain(domain), spec, seed);
}

std::vector<double> aggregation_terms(const FeatureMap& features, const std::vector<int>& labels,
                                      const BasisBank& bank, const std::vector<bool>& use,
                                      std::vector<std::size_t>* kept) {
  if (features.batch() != labels.size()) throw DimensionError("aggregation_terms: label count mismatch");
  if (use.size() != bank.total()) throw DimensionError("aggregation_terms: vector mask size mismatch");
  const std::size_t m = bank.per_class();
  std::vector<double> out;
  if (kept) kept->clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= bank.classes()) {
      throw ValidationError("aggregation_terms: label out of range");
    }
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    Eigen::MatrixXd patches = features.patches(i);
    for (long p = 0; p < patches.rows(); ++p) {
      const double n = patches.row(p).norm();
      if (n > 0.0) patches.row(p) /= n;
    }
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t k = 0; k < m; ++k) {
      if (!use[c * m + k]) continue;
      any = true;
      const auto v = bank.vector(c, k);
      Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
      const double n = u.norm();
      if (n > 0.0) u /= n;
      best = std::max(best, (patches * u).maxCoeff());
    }
    if (!any) continue;
    out.push_back(-best);
    if (kept) kept->push_back(i);
  }
  return out;
}

std::vector<double> sensitivity_delta(const FeatureMap& features, const std::vector<int>& labels,
                                      const BasisBank& bank_a, const BasisBank& bank_b,
                                      const ConceptAssignment& assignment, std::optional<std::size_t> concept_index) {
  if (bank_a.vectors.shape() != bank_b.vectors.shape()) {
    throw ValidationError("sensitivity_delta: basis sets differ in shape (" + shape_string(bank_a.vectors.shape()) +
                          " vs " + shape_string(bank_b.vectors.shape()) + ")");
  }
  std::vector<bool> use(bank_a.total(), true);
  if (concept_index) {
    if (assignment.basis_concept.size() != bank_a.total()) {
      throw ValidationError("sensitivity_delta: assignment does not match the basis count");
    }
    for (std::size_t j = 0; j < use.size(); ++j) use[j] = assignment.basis_concept[j] == static_cast<int>(*concept_index);
  }
  const std::vector<double> a = aggregation_terms(features, labels, bank_a, use);
  const std::vector<double> b = aggregation_terms(features, labels, bank_b, use);
  std::vector<double> delta(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) delta[i] = a[i] - b[i];
  return delta;
}

namespace {

double linear_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.size() < 2) throw ValidationError("box_stats: need at least 2 values, got " + std::to_string(values.size()));
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.n = values.size();
  s.min = values.front();
  s.max = values.back();
  s.q1 = linear_quantile(values, 0.25);
  s.median = linear_quantile(values, 0.5);
  s.q3 = linear_quantile(values, 0.75);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  const double iqr = s.q3 - s.q1;
  const double lo = s.q1 - 1.5 * iqr, hi = s.q3 + 1.5 * iqr;
  s.whisker_low = s.q1;
  s.whisker_high = s.q3;
  for (double v : values) {
    if (v < lo || v > hi) {
      s.outliers.push_back(v);
      continue;
    }
    s.whisker_low = std::min(s.whisker_low, v);
    s.whisker_high = std::max(s.whisker_high, v);
  }
  return s;
}

nlohmann::ordered_json BoxStats::to_json() const {
  return {{"n", n},           {"min", min},         {"q1", q1},
          {"median", median}, {"q3", q3},           {"max", max},
          {"mean", mean},     {"whisker_low", whisker_low}, {"whisker_high", whisker_high},
          {"outliers", outliers}};
}

const PerceptCell& PerceptReport::cell(const std::string& concept_name, PerceptDomain domain) const {
  for (const auto& c : cells) {
    if (c.concept_name == concept_name && c.domain == domain) return c;
  }
  throw ValidationError("no cell for concept '" + concept_name + "', domain " + to_string(domain));
}

nlohmann::ordered_json PerceptReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "asxai.sensitivity_report/1";
  j["seed"] = seed;
  j["retrained"] = retrained;
  j["spec"] = spec.to_json();
  j["concepts"] = concepts;
  std::vector<std::string> names;
  for (PerceptDomain d : domains) names.push_back(to_string(d));
  j["domains"] = names;
  j["sample_ids"] = sample_ids;
  nlohmann::ordered_json cs = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    cs.push_back({{"concept", c.concept_name}, {"domain", to_string(c.domain)}, {"stats", c.stats.to_json()},
                  {"deltas", c.deltas}});
  }
  j["cells"] = cs;
  return j;
}

PerceptReport sensitivity_report(const std::vector<std::string>& concepts, const std::vector<PerceptDomain>& domains,
                                 const std::vector<std::vector<std::vector<double>>>& deltas) {
  if (deltas.size() != concepts.size()) throw DimensionError("sensitivity_report: concept count mismatch");
  PerceptReport r;
  r.concepts = concepts;
  r.domains = domains;
  for (std::size_t s = 0; s < concepts.size(); ++s) {
    if (deltas[s].size() != domains.size()) throw DimensionError("sensitivity_report: domain count mismatch");
    for (std::size_t d = 0; d < domains.size(); ++d) {
      PerceptCell cell;
      cell.concept_name = concepts[s];
      cell.domain = domains[d];
      cell.deltas = deltas[s][d];
      cell.stats = box_stats(cell.deltas);
      r.cells.push_back(std::move(cell));
    }
  }
  return r;
}

void PerceptConfig::validate() const {
  spec.validate();
  if (domains.empty()) throw ValidationError("percept study needs at least one domain");
  if (samples_per_category < 2) throw ValidationError("samples_per_category must be >= 2");
  if (retrain) retrain_config.validate();
}

namespace {

TrainingSet make_set(const std::vector<Image>& images, const std::vector<int>& labels,
                     const std::vector<std::string>& ids) {
  TrainingSet set;
  set.images = images_to_tensor(images);
  set.labels = labels;
  set.ids = ids;
  return set;
}

}  // namespace

PerceptReport run_percept_study(const ProtoModel& model, const std::vector<Image>& images,
                                const std::vector<int>& labels, const std::vector<std::string>& ids,
                                const ConceptAssignment& assignment, const PerceptConfig& cfg) {
  cfg.validate();
  if (images.size() != labels.size() || ids.size() != labels.size()) {
    throw DimensionError("run_percept_study: images, labels and ids differ in length");
  }
  const std::size_t classes = model.classes();
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(c)) members.push_back(i);
    }
    if (members.empty()) throw ValidationError("run_percept_study: no images of class " + model.bank.class_labels[c]);
    if (members.size() > cfg.samples_per_category) {
      Rng rng(derive_seed(cfg.seed, {0x73616d, c}));
      std::shuffle(members.begin(), members.end(), rng.engine());
      members.resize(cfg.samples_per_category);
    }
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Image> sample;
  std::vector<int> sample_labels;
  std::vector<std::string> sample_ids;
  for (std::size_t i : chosen) {
    sample.push_back(images[i]);
    sample_labels.push_back(labels[i]);
    sample_ids.push_back(ids[i]);
  }

  const TrainingSet original = make_set(sample, sample_labels, sample_ids);
  original.validate(classes);
  const FeatureMap features = dataset_features(model, original);
  ProtoModel projected = model;
  project_basis_vectors(projected, features, original);
  const BasisBank& bank_a = projected.bank;

  const std::size_t concepts = assignment.concept_count();
  std::vector<std::vector<std::vector<double>>> deltas(concepts, std::vector<std::vector<double>>(cfg.domains.size()));
  for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
    std::vector<Image> perturbed(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
      perturbed[i] = apply_perturbation(sample[i], cfg.domains[d], cfg.spec, derive_seed(cfg.seed, {0x706572, chosen[i]}));
    }
    const TrainingSet changed = make_set(perturbed, sample_labels, sample_ids);
    ProtoModel other = model;
    if (cfg.retrain) {
      train(other, changed, cfg.retrain_config);
    } else {
      project_basis_vectors(other, changed);
    }
    for (std::size_t s = 0; s < concepts; ++s) {
      deltas[s][d] = sensitivity_delta(features, sample_labels, bank_a, other.bank, assignment, s);
    }
    log_info("percept study: domain " + to_string(cfg.domains[d]) + " done");
  }

  std::vector<std::string> kept_concepts;
  std::vector<std::vector<std::vector<double>>> kept_deltas;
  for (std::size_t s = 0; s < concepts; ++s) {
    if (deltas[s].front().size() < 2) {
      log_warning("concept " + assignment.names[s] + " covers fewer than 2 samples; left out of the report");
      continue;
    }
    kept_concepts.push_back(assignment.names[s]);
    kept_deltas.push_back(deltas[s]);
  }
  PerceptReport r = sensitivity_report(kept_concepts, cfg.domains, kept_deltas);
  r.sample_ids = sample_ids;
  r.spec = cfg.spec;
  r.retrained = cfg.retrain;
  r.seed = cfg.seed;
  return r;
}

}  // namespace asxai
