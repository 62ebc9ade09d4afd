#include "asxai/explanation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "asxai/errors.hpp"
#include "asxai/feature_viz.hpp"
#include "asxai/log.hpp"

namespace asxai {

void ConceptDistribution::validate() const {
  if (!(std > 0.0) || !std::isfinite(std) || !std::isfinite(mean)) {
    throw ValidationError("concept distribution needs a finite std > 0");
  }
  if (!(a_min < a_max)) throw ValidationError("concept distribution needs a_min < a_max");
}

nlohmann::ordered_json ConceptDistribution::to_json() const {
  return {{"mean", mean}, {"std", std}, {"a_min", a_min}, {"a_max", a_max}};
}

ConceptDistribution ConceptDistribution::from_json(const nlohmann::json& j) {
  ConceptDistribution d;
  d.mean = j.at("mean").get<double>();
  d.std = j.at("std").get<double>();
  d.a_min = j.at("a_min").get<double>();
  d.a_max = j.at("a_max").get<double>();
  d.validate();
  return d;
}

ConceptDistribution fit_concept_distribution(const std::vector<double>& activations) {
  const std::size_t n = activations.size();
  if (n < 20) throw ValidationError("fit_concept_distribution: need at least 20 samples, got " + std::to_string(n));
  for (double a : activations) {
    if (!std::isfinite(a)) throw ValidationError("fit_concept_distribution: non-finite activation");
  }
  ConceptDistribution d;
  const auto [lo, hi] = std::minmax_element(activations.begin(), activations.end());
  d.a_min = *lo;
  d.a_max = *hi;
  if (d.a_min == d.a_max) throw ValidationError("fit_concept_distribution: constant activations");
  d.mean = std::accumulate(activations.begin(), activations.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double a : activations) ss += (a - d.mean) * (a - d.mean);
  d.std = std::sqrt(ss / static_cast<double>(n - 1));
  d.validate();
  return d;
}

double semantic_probability(double a_s, const ConceptDistribution& dist) {
  if (a_s <= dist.a_min) return 0.0;
  if (a_s >= dist.a_max) return 1.0;
  const boost::math::normal normal(dist.mean, dist.std);
  const double lo = boost::math::cdf(normal, dist.a_min);
  const double den = boost::math::cdf(normal, dist.a_max) - lo;
  if (!(den > 0.0)) return (a_s - dist.a_min) / (dist.a_max - dist.a_min);
  return std::clamp((boost::math::cdf(normal, a_s) - lo) / den, 0.0, 1.0);
}

double pcs(double p_s, double weight) { return p_s * weight; }

double PcsTable::class_total(std::size_t cls) const {
  return std::accumulate(values.at(cls).begin(), values.at(cls).end(), 0.0);
}

void PcsTable::validate() const {
  if (classes.size() < 2) throw ValidationError("PCS table needs at least 2 candidate classes");
  if (values.size() != classes.size()) throw DimensionError("PCS table: row count != class count");
  for (const auto& row : values) {
    if (row.size() != concepts.size()) throw DimensionError("PCS table: row length != concept count");
    for (double v : row) {
      if (!std::isfinite(v)) throw ValidationError("PCS table: non-finite value");
    }
  }
}

Deltas compute_deltas(const PcsTable& table) {
  table.validate();
  std::vector<std::size_t> order(table.classes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table.class_total(a) > table.class_total(b); });
  Deltas d;
  d.named = order[0];
  d.runner_up = order[1];
  d.delta_pcs.resize(table.concepts.size());
  for (std::size_t s = 0; s < table.concepts.size(); ++s) {
    d.delta_pcs[s] = table.at(d.named, s) - table.at(d.runner_up, s);
  }
  d.delta_max_pcs = d.delta_pcs.empty() ? 0.0 : *std::max_element(d.delta_pcs.begin(), d.delta_pcs.end());
  for (const auto& row : table.values) {
    for (double v : row) d.pcs_max = std::max(d.pcs_max, v);
  }
  return d;
}

void ExplanationTemplates::validate() const {
  if (thresholds.empty() || !std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ValidationError("templates: thresholds must be non-empty and ascending");
  }
  const std::size_t bands = thresholds.size() + 1;
  if (verdicts.size() != bands) throw ValidationError("templates: need one verdict per band");
  if (semantemes.size() != bands) throw ValidationError("templates: need one semanteme per band");
  if (phrases.size() != bands) throw ValidationError("templates: need one phrase per band");
  if (connectors.empty()) throw ValidationError("templates: need at least one connector");
}

nlohmann::ordered_json ExplanationTemplates::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "asxai.templates/1";
  j["thresholds"] = thresholds;
  j["vivid_threshold"] = vivid_threshold;
  j["verdicts"] = verdicts;
  j["positions"] = {{"vivid", vivid_position}, {"plain", plain_position}};
  j["semantemes"] = semantemes;
  j["phrases"] = phrases;
  j["connectors"] = connectors;
  j["closing"] = closing;
  j["max_phrases"] = max_phrases;
  return j;
}

ExplanationTemplates ExplanationTemplates::from_json(const nlohmann::json& j) {
  ExplanationTemplates t;
  if (j.contains("thresholds")) t.thresholds = j["thresholds"].get<std::vector<double>>();
  if (j.contains("vivid_threshold")) t.vivid_threshold = j["vivid_threshold"].get<double>();
  if (j.contains("verdicts")) t.verdicts = j["verdicts"].get<std::vector<std::string>>();
  if (j.contains("positions")) {
    t.vivid_position = j["positions"].value("vivid", t.vivid_position);
    t.plain_position = j["positions"].value("plain", t.plain_position);
  }
  if (j.contains("semantemes")) t.semantemes = j["semantemes"].get<std::vector<std::string>>();
  if (j.contains("phrases")) t.phrases = j["phrases"].get<std::vector<std::string>>();
  if (j.contains("connectors")) t.connectors = j["connectors"].get<std::vector<std::string>>();
  if (j.contains("closing")) t.closing = j["closing"].get<std::string>();
  if (j.contains("max_phrases")) t.max_phrases = j["max_phrases"].get<std::size_t>();
  t.validate();
  return t;
}

ExplanationTemplates ExplanationTemplates::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open templates file " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed templates file " + path + ": " + e.what());
  }
}

std::size_t band_index(double x, const std::vector<double>& thresholds) {
  std::size_t band = 0;
  for (double t : thresholds) {
    if (x >= t) ++band;
  }
  return band;
}

namespace {

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
    s.replace(pos, key.size(), value);
  }
}

std::string fill(std::string s, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) replace_all(s, "{" + k + "}", v);
  return s;
}

std::string capitalized(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace

Explanation generate_explanation(const Deltas& deltas, const PcsTable& table, const ExplanationTemplates& templates) {
  templates.validate();
  table.validate();
  if (deltas.delta_pcs.size() != table.concepts.size()) throw DimensionError("generate_explanation: delta count");
  const std::string& a = table.classes.at(deltas.named);
  const std::string& b = table.classes.at(deltas.runner_up);

  Explanation e;
  e.band = band_index(deltas.delta_max_pcs, templates.thresholds);
  e.verdict = fill(templates.verdicts[e.band], {{"A", a}, {"B", b}});
  const bool with_phrases = !(e.band == 0 && deltas.pcs_max < templates.vivid_threshold);
  if (!with_phrases) {
    e.text = e.verdict;
    return e;
  }

  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < table.concepts.size(); ++s) {
    if (table.at(deltas.named, s) > 0.0 || table.at(deltas.runner_up, s) > 0.0) order.push_back(s);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return table.at(deltas.named, x) > table.at(deltas.named, y);
  });
  if (templates.max_phrases > 0 && order.size() > templates.max_phrases) order.resize(templates.max_phrases);

  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t s = order[i];
    const std::string& name = table.concepts[s];
    const double strength = i == 0 ? deltas.pcs_max : table.at(deltas.named, s);
    const std::string& pos_template =
        strength >= templates.vivid_threshold ? templates.vivid_position : templates.plain_position;
    const std::size_t sb = band_index(deltas.delta_pcs[s], templates.thresholds);
    const std::string position = fill(pos_template, {{"concept", name}});
    e.phrases.push_back(fill(templates.phrases[sb], {{"position", position},
                                                     {"semanteme", templates.semantemes[sb]},
                                                     {"concept", name},
                                                     {"A", a},
                                                     {"B", b}}));
  }

  e.text = e.verdict;
  for (std::size_t i = 0; i < e.phrases.size(); ++i) {
    if (i == 0) {
      e.text += " " + (e.band == 0 ? capitalized(e.phrases[0]) : e.phrases[0]) + ".";
    } else {
      const std::string& connector = templates.connectors[std::min(i - 1, templates.connectors.size() - 1)];
      e.text += " " + connector + " " + e.phrases[i] + ".";
    }
  }
  if (!templates.closing.empty()) e.text += " " + fill(templates.closing, {{"A", a}, {"B", b}});
  return e;
}

namespace {

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw DimensionError("expected one image [3, 224, 224] or [1, 3, 224, 224], got " + shape_string(image.shape()));
}

}  // namespace

std::vector<double> global_similarity_histogram(const ProtoModel& model, const Tensor& image) {
  const FeatureMap fmap = extract_features(as_batch(image), model);
  const Tensor logits = class_logits(global_max_pool(cosine_similarity_maps(fmap, model.bank)), model.head);
  return {logits.data(), logits.data() + logits.size()};
}

namespace {

std::vector<double> hsv_channel(const Image& img, std::size_t channel) {
  std::vector<double> out(img.height * img.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float hsv[3];
    rgb_to_hsv(img.rgb[i * 3], img.rgb[i * 3 + 1], img.rgb[i * 3 + 2], hsv[0], hsv[1], hsv[2]);
    out[i] = hsv[channel];
  }
  return out;
}

double window_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t width, std::size_t y0,
                   std::size_t x0, std::size_t wh, std::size_t ww) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double ma = 0.0, mb = 0.0;
  for (std::size_t y = y0; y < y0 + wh; ++y) {
    for (std::size_t x = x0; x < x0 + ww; ++x) {
      ma += a[y * width + x];
      mb += b[y * width + x];
    }
  }
  const double n = static_cast<double>(wh * ww);
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t y = y0; y < y0 + wh; ++y) {
    for (std::size_t x = x0; x < x0 + ww; ++x) {
      const double da = a[y * width + x] - ma, db = b[y * width + x] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

double hsv_similarity(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ValidationError("hsv_similarity: regions differ in size (" + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                          std::to_string(b.width) + ")");
  }
  if (a.height == 0 || a.width == 0) throw ValidationError("hsv_similarity: empty region");
  constexpr std::size_t kWindow = 7;
  constexpr double kWeights[3] = {0.2, 0.3, 0.5};
  const std::size_t wh = std::min(kWindow, a.height), ww = std::min(kWindow, a.width);
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::vector<double> ca = hsv_channel(a, c), cb = hsv_channel(b, c);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + wh <= a.height; ++y) {
      for (std::size_t x = 0; x + ww <= a.width; ++x) {
        sum += window_ssim(ca, cb, a.width, y, x, wh, ww);
        ++count;
      }
    }
    total += kWeights[c] * sum / static_cast<double>(count);
  }
  return std::clamp(total, -1.0, 1.0);
}

ActivationMode parse_activation_mode(const std::string& name) {
  if (name == "masked") return ActivationMode::masked;
  if (name == "full") return ActivationMode::full;
  throw ValidationError("unknown activation mode '" + name + "' (expected masked or full)");
}

std::string to_string(ActivationMode mode) { return mode == ActivationMode::masked ? "masked" : "full"; }

void ExplainConfig::validate() const {
  if (!(mask_percentile >= 0.0 && mask_percentile < 100.0)) {
    throw ValidationError("explain mask_percentile must be in [0, 100)");
  }
  if (candidates < 2) throw ValidationError("explain candidates must be >= 2");
}

std::vector<std::vector<double>> concept_activations(const ProtoModel& model, const Tensor& image,
                                                     const ConceptAssignment& assignment,
                                                     const ExplainConfig& cfg) {
  cfg.validate();
  const Tensor batch = as_batch(image);
  const Tensor maps = layer_maps(model, batch, assignment.layer);
  const std::size_t h = maps.dim(2), w = maps.dim(3), hw = h * w;
  const std::size_t classes = model.classes(), per_class = model.bank.per_class();
  if (assignment.basis_concept.size() != model.bank.total()) {
    throw DimensionError("concept assignment does not match the basis bank");
  }
  Tensor sim;
  if (cfg.activation == ActivationMode::masked) {
    if (h != w) throw DimensionError("concept_activations: masked mode needs square maps");
    sim = cosine_similarity_maps(extract_features(batch, model), model.bank);
  }

  std::vector<std::vector<double>> out(classes, std::vector<double>(assignment.concept_count(), 0.0));
  for (std::size_t s = 0; s < assignment.concept_count(); ++s) {
    const std::vector<std::size_t> filters = assignment.filters_of(s);
    if (filters.empty()) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::uint8_t> mask(hw, 1);
      if (cfg.activation == ActivationMode::masked) {
        std::vector<std::size_t> basis;
        for (std::size_t m = 0; m < per_class; ++m) {
          if (assignment.basis_concept[c * per_class + m] == static_cast<int>(s)) basis.push_back(c * per_class + m);
        }
        if (basis.empty()) {
          for (std::size_t m = 0; m < per_class; ++m) basis.push_back(c * per_class + m);
        }
        Eigen::MatrixXd simmap = Eigen::MatrixXd::Constant(static_cast<long>(h), static_cast<long>(w), -1.0);
        for (std::size_t j : basis) {
          for (std::size_t p = 0; p < hw; ++p) {
            simmap(static_cast<long>(p / w), static_cast<long>(p % w)) =
                std::max(simmap(static_cast<long>(p / w), static_cast<long>(p % w)), sim(0, j, p / w, p % w));
          }
        }
        if (simmap.maxCoeff() > simmap.minCoeff()) {
          std::vector<std::uint8_t> m = salient_region_mask(simmap, cfg.mask_percentile, h);
          if (std::find(m.begin(), m.end(), 1) != m.end()) mask = std::move(m);
        }
      }
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t f : filters) {
        for (std::size_t p = 0; p < hw; ++p) {
          if (!mask[p]) continue;
          sum += maps(0, f, p / w, p % w);
          ++count;
        }
      }
      out[c][s] = sum / static_cast<double>(count);
    }
  }
  return out;
}

nlohmann::ordered_json Explainer::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "asxai.explainer/1";
  j["assignment"] = assignment.to_json();
  j["activation"] = to_string(config.activation);
  j["mask_percentile"] = config.mask_percentile;
  j["candidates"] = config.candidates;
  j["rank_tolerance"] = config.rank_tolerance;
  nlohmann::ordered_json dists = nlohmann::ordered_json::array();
  for (const auto& row : distributions) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (const auto& d : row) r.push_back(d ? d->to_json() : nlohmann::ordered_json(nullptr));
    dists.push_back(r);
  }
  j["distributions"] = dists;
  return j;
}

Explainer Explainer::from_json(const nlohmann::json& j) {
  Explainer e;
  e.assignment = ConceptAssignment::from_json(j.at("assignment"));
  e.config.activation = parse_activation_mode(j.at("activation").get<std::string>());
  e.config.mask_percentile = j.at("mask_percentile").get<double>();
  e.config.candidates = j.at("candidates").get<std::size_t>();
  e.config.rank_tolerance = j.at("rank_tolerance").get<double>();
  e.config.validate();
  for (const auto& row : j.at("distributions")) {
    std::vector<std::optional<ConceptDistribution>> r;
    for (const auto& d : row) {
      if (d.is_null()) {
        r.emplace_back();
      } else {
        r.emplace_back(ConceptDistribution::from_json(d));
      }
    }
    if (r.size() != e.assignment.concept_count()) throw ValidationError("explainer: distribution row length");
    e.distributions.push_back(std::move(r));
  }
  return e;
}

Explainer fit_explainer(const ProtoModel& model, const Tensor& images, const std::vector<int>& labels,
                        const ConceptAssignment& assignment, const ExplainConfig& cfg) {
  cfg.validate();
  if (images.rank() != 4 || images.dim(0) != labels.size()) throw DimensionError("fit_explainer: image/label count");
  const std::size_t classes = model.classes(), concepts = assignment.concept_count();
  std::vector<std::vector<std::vector<double>>> acts(classes, std::vector<std::vector<double>>(concepts));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw ValidationError("fit_explainer: bad label");
    const auto a = concept_activations(model, images.slice(i, i + 1), assignment, cfg);
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    for (std::size_t s = 0; s < concepts; ++s) acts[c][s].push_back(a[c][s]);
  }
  Explainer e;
  e.assignment = assignment;
  e.config = cfg;
  e.distributions.assign(classes, std::vector<std::optional<ConceptDistribution>>(concepts));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < concepts; ++s) {
      try {
        e.distributions[c][s] = fit_concept_distribution(acts[c][s]);
      } catch (const ValidationError& err) {
        log_warning("no activation distribution for class " + model.bank.class_labels[c] + ", concept " +
                    assignment.names[s] + ": " + err.what());
      }
    }
  }
  return e;
}

std::map<std::string, std::map<std::string, double>> ExplanationReport::bubble_ring() const {
  std::map<std::string, std::map<std::string, double>> ring;
  for (const auto& c : concepts) {
    for (std::size_t k = 0; k < candidates.size(); ++k) ring[c.concept_name][candidates[k]] = c.pcs[k];
  }
  return ring;
}

nlohmann::ordered_json ExplanationReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "asxai.explanation/1";
  j["image_id"] = image_id;
  j["class_labels"] = class_labels;
  j["probabilities"] = probabilities;
  j["global_similarity"] = global_similarity;
  j["structural_similarity"] = structural_similarity;
  j["predicted_class"] = predicted_class;
  j["candidates"] = candidates;
  j["named_class"] = named_class;
  j["runner_up"] = runner_up;
  nlohmann::ordered_json cs = nlohmann::ordered_json::array();
  for (const auto& c : concepts) {
    cs.push_back({{"concept", c.concept_name},
                  {"weight", c.weight},
                  {"activation", c.activation},
                  {"P_s", c.p_s},
                  {"PCS", c.pcs},
                  {"delta_pcs", c.delta_pcs}});
  }
  j["concepts"] = cs;
  j["delta_max_pcs"] = delta_max_pcs;
  j["pcs_max"] = pcs_max;
  j["band"] = band;
  j["verdict"] = verdict;
  j["phrases"] = phrases;
  j["text"] = text;
  return j;
}

ExplanationReport ExplanationReport::from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "asxai.explanation/1") throw IoError("not an explanation report");
  ExplanationReport r;
  r.image_id = j.at("image_id").get<std::string>();
  r.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  r.probabilities = j.at("probabilities").get<std::vector<double>>();
  r.global_similarity = j.at("global_similarity").get<std::vector<double>>();
  r.structural_similarity = j.at("structural_similarity").get<std::vector<double>>();
  r.predicted_class = j.at("predicted_class").get<std::string>();
  r.candidates = j.at("candidates").get<std::vector<std::string>>();
  r.named_class = j.at("named_class").get<std::string>();
  r.runner_up = j.at("runner_up").get<std::string>();
  for (const auto& c : j.at("concepts")) {
    ConceptEvidence e;
    e.concept_name = c.at("concept").get<std::string>();
    e.weight = c.at("weight").get<double>();
    e.activation = c.at("activation").get<std::vector<double>>();
    e.p_s = c.at("P_s").get<std::vector<double>>();
    e.pcs = c.at("PCS").get<std::vector<double>>();
    e.delta_pcs = c.at("delta_pcs").get<double>();
    r.concepts.push_back(std::move(e));
  }
  r.delta_max_pcs = j.at("delta_max_pcs").get<double>();
  r.pcs_max = j.at("pcs_max").get<double>();
  r.band = j.at("band").get<std::size_t>();
  r.verdict = j.at("verdict").get<std::string>();
  r.phrases = j.at("phrases").get<std::vector<std::string>>();
  r.text = j.at("text").get<std::string>();
  return r;
}

ExplanationReport explain_image(const ProtoModel& model, const Explainer& explainer, const Tensor& image,
                                const std::string& image_id, const ExplanationTemplates& templates,
                                const ReferenceSet* references, const Image* raw) {
  const Tensor batch = as_batch(image);
  const ConceptAssignment& assignment = explainer.assignment;
  const std::size_t classes = model.classes();
  if (explainer.distributions.size() != classes) throw DimensionError("explainer does not match the model's classes");

  ExplanationReport r;
  r.image_id = image_id;
  r.class_labels = model.bank.class_labels;
  const FeatureMap fmap = extract_features(batch, model);
  const Tensor scores = global_max_pool(cosine_similarity_maps(fmap, model.bank));
  const Tensor logits = class_logits(scores, model.head);
  const Tensor probs = softmax_rows(logits);
  r.probabilities.assign(probs.data(), probs.data() + probs.size());
  r.global_similarity.assign(logits.data(), logits.data() + logits.size());

  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.probabilities[a] > r.probabilities[b]; });
  r.predicted_class = r.class_labels[order[0]];
  order.resize(std::min(explainer.config.candidates, classes));
  if (order.size() < 2) throw ValidationError("explain_image: need at least 2 classes");
  for (std::size_t c : order) r.candidates.push_back(r.class_labels[c]);

  const auto acts = concept_activations(model, batch, assignment, explainer.config);
  const RankProfile profile = rank_profile(model, batch, assignment, image_id, explainer.config.rank_tolerance);

  PcsTable table;
  table.classes = r.candidates;
  table.concepts = assignment.names;
  table.values.assign(order.size(), std::vector<double>(assignment.concept_count(), 0.0));
  for (std::size_t s = 0; s < assignment.concept_count(); ++s) {
    ConceptEvidence e;
    e.concept_name = assignment.names[s];
    e.weight = profile.pcs_weight(e.concept_name);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t c = order[k];
      const auto& dist = explainer.distributions[c][s];
      const double p = dist ? semantic_probability(acts[c][s], *dist) : 0.0;
      e.activation.push_back(acts[c][s]);
      e.p_s.push_back(p);
      e.pcs.push_back(pcs(p, e.weight));
      table.values[k][s] = e.pcs.back();
    }
    r.concepts.push_back(std::move(e));
  }

  const Deltas d = compute_deltas(table);
  for (std::size_t s = 0; s < r.concepts.size(); ++s) r.concepts[s].delta_pcs = d.delta_pcs[s];
  r.named_class = table.classes[d.named];
  r.runner_up = table.classes[d.runner_up];
  r.delta_max_pcs = d.delta_max_pcs;
  r.pcs_max = d.pcs_max;
  const Explanation ex = generate_explanation(d, table, templates);
  r.band = ex.band;
  r.verdict = ex.verdict;
  r.phrases = ex.phrases;
  r.text = ex.text;

  if (references) {
    if (!raw) throw ValidationError("explain_image: references given without the raw image");
    if (references->images.size() != references->labels.size()) throw DimensionError("reference set: label count");
    std::vector<double> sum(classes, 0.0);
    std::vector<std::size_t> count(classes, 0);
    for (std::size_t i = 0; i < references->images.size(); ++i) {
      const int c = references->labels[i];
      if (c < 0 || static_cast<std::size_t>(c) >= classes) throw ValidationError("reference set: bad label");
      const Image& ref = references->images[i];
      const Image sized = ref.height == raw->height && ref.width == raw->width
                              ? ref
                              : resize_bilinear(ref, raw->height, raw->width);
      sum[static_cast<std::size_t>(c)] += hsv_similarity(*raw, sized);
      ++count[static_cast<std::size_t>(c)];
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (count[c] == 0) throw ValidationError("reference set has no image of class " + r.class_labels[c]);
      r.structural_similarity.push_back(sum[c] / static_cast<double>(count[c]));
    }
  }
  return r;
}

}  // namespace asxai
