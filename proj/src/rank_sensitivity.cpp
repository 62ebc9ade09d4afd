#include "asxai/rank_sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "asxai/rng.hpp"

namespace asxai {

namespace {

Eigen::MatrixXd map_matrix(const Tensor& maps, std::size_t b, std::size_t f) {
  const long h = static_cast<long>(maps.dim(2)), w = static_cast<long>(maps.dim(3));
  Eigen::MatrixXd m(h, w);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) m(y, x) = maps(b, f, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  return m;
}

Eigen::MatrixXd normalized_rows(Eigen::MatrixXd m) {
  for (long r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
  return m;
}

std::vector<int> nearest(const Eigen::MatrixXd& unit_points, const Eigen::MatrixXd& unit_centers) {
  const Eigen::MatrixXd sim = unit_points * unit_centers.transpose();
  std::vector<int> out(static_cast<std::size_t>(unit_points.rows()));
  for (long i = 0; i < sim.rows(); ++i) {
    long best = 0;
    for (long c = 1; c < sim.cols(); ++c) {
      if (sim(i, c) > sim(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw DimensionError("expected a single image [3, 224, 224], got " + shape_string(image.shape()));
}

}  // namespace

Eigen::VectorXd singular_values(const Eigen::MatrixXd& map) {
  if (!map.allFinite()) throw ValidationError("singular_values: non-finite map");
  if (map.size() == 0) return Eigen::VectorXd();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(map);
  return svd.singularValues();
}

int feature_map_rank(const Eigen::MatrixXd& map, double tol) {
  if (!(tol > 0.0)) throw ValidationError("feature_map_rank: tolerance must be > 0");
  const Eigen::VectorXd s = singular_values(map);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double cut = tol * s(0);
  int r = 0;
  for (long i = 0; i < s.size(); ++i) {
    if (s(i) > cut) ++r;
  }
  return r;
}

RankLayer parse_rank_layer(const std::string& name) {
  if (name == "backbone") return RankLayer::backbone;
  if (name == "addon") return RankLayer::addon;
  throw ValidationError("unknown rank layer '" + name + "' (expected backbone or addon)");
}

std::string to_string(RankLayer layer) { return layer == RankLayer::backbone ? "backbone" : "addon"; }

Tensor layer_maps(const ProtoModel& model, const Tensor& images, RankLayer layer) {
  if (layer == RankLayer::addon) return extract_features(images, model).values;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kInputSize || images.dim(3) != kInputSize) {
    throw DimensionError("layer_maps: expected [batch, 3, 224, 224], got " + shape_string(images.shape()));
  }
  if (!images.all_finite()) throw ValidationError("layer_maps: non-finite input");
  return model.backbone_forward(images);
}

std::vector<std::size_t> ConceptAssignment::filters_of(std::size_t concept_index) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < filter_concept.size(); ++f) {
    if (filter_concept[f] == static_cast<int>(concept_index)) out.push_back(f);
  }
  return out;
}

std::vector<std::size_t> ConceptAssignment::redundant_filters() const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < filter_concept.size(); ++f) {
    if (filter_concept[f] < 0) out.push_back(f);
  }
  return out;
}

void ConceptAssignment::relabel(const std::map<std::string, std::string>& names_by_old) {
  for (auto& n : names) {
    auto it = names_by_old.find(n);
    if (it != names_by_old.end()) n = it->second;
  }
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) throw ValidationError("relabel: concept names must stay unique");
}

nlohmann::ordered_json ConceptAssignment::to_json() const {
  nlohmann::ordered_json j;
  j["layer"] = to_string(layer);
  j["names"] = names;
  j["filter_concept"] = filter_concept;
  j["basis_concept"] = basis_concept;
  return j;
}

ConceptAssignment ConceptAssignment::from_json(const nlohmann::json& j) {
  ConceptAssignment a;
  a.layer = parse_rank_layer(j.at("layer").get<std::string>());
  a.names = j.at("names").get<std::vector<std::string>>();
  a.filter_concept = j.at("filter_concept").get<std::vector<int>>();
  a.basis_concept = j.at("basis_concept").get<std::vector<int>>();
  return a;
}

std::vector<int> cluster_by_cosine(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  if (k == 0) throw ValidationError("cluster_by_cosine: cluster count must be >= 1");
  if (k > n) {
    throw ValidationError("cluster count " + std::to_string(k) + " exceeds the " + std::to_string(n) + " filters available");
  }
  const Eigen::MatrixXd unit = normalized_rows(points);
  Rng rng(seed);

  // k-means++ seeding on the cosine distance 1 - cos
  std::vector<long> chosen{static_cast<long>(rng.index(n))};
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(static_cast<long>(n), std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const Eigen::VectorXd sim = unit * unit.row(chosen.back()).transpose();
    for (long i = 0; i < static_cast<long>(n); ++i) dist(i) = std::min(dist(i), std::max(0.0, 1.0 - sim(i)));
    const double total = dist.array().square().sum();
    long pick = -1;
    if (total > 0.0) {
      double r = rng.uniform(0.0, total);
      for (long i = 0; i < static_cast<long>(n); ++i) {
        const double w = dist(i) * dist(i);
        if (w <= 0.0) continue;
        pick = i;
        if (r < w) break;
        r -= w;
      }
    } else {
      for (long i = 0; i < static_cast<long>(n); ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  Eigen::MatrixXd centers(static_cast<long>(k), points.cols());
  for (std::size_t c = 0; c < k; ++c) centers.row(static_cast<long>(c)) = unit.row(chosen[c]);

  std::vector<int> assign = nearest(unit, centers);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<int> counts(k, 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<long>(k), points.cols());
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += unit.row(static_cast<long>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(static_cast<long>(c)) = sums.row(static_cast<long>(c));
        continue;
      }
      // empty cluster: take the point worst served by its current centre
      double worst = std::numeric_limits<double>::infinity();
      long pick = 0;
      for (long i = 0; i < static_cast<long>(n); ++i) {
        if (counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] <= 1) continue;
        const double s = unit.row(i).dot(centers.row(assign[static_cast<std::size_t>(i)]).normalized());
        if (s < worst) {
          worst = s;
          pick = i;
        }
      }
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(pick)])];
      assign[static_cast<std::size_t>(pick)] = static_cast<int>(c);
      counts[c] = 1;
      centers.row(static_cast<long>(c)) = unit.row(pick);
    }
    centers = normalized_rows(centers);
    std::vector<int> next = nearest(unit, centers);
    if (next == assign) break;
    assign = std::move(next);
  }

  // canonical ids: order clusters by their lowest member
  std::vector<int> remap(k, -1);
  int next_id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int& r = remap[static_cast<std::size_t>(assign[i])];
    if (r < 0) r = next_id++;
  }
  for (int& a : assign) a = remap[static_cast<std::size_t>(a)];
  return assign;
}

ConceptAssignment assign_concepts(const ProtoModel& model, const Tensor& probe_images, std::size_t cluster_count,
                                  std::uint64_t seed, RankLayer layer, double tol) {
  if (probe_images.rank() != 4 || probe_images.dim(0) == 0) throw ValidationError("assign_concepts: empty probe set");
  const std::size_t n = probe_images.dim(0);
  std::vector<Tensor> map_parts, feature_parts;
  for (std::size_t start = 0; start < n; start += 16) {
    const Tensor chunk = probe_images.slice(start, std::min(n, start + 16));
    feature_parts.push_back(extract_features(chunk, model).values);
    map_parts.push_back(layer == RankLayer::addon ? feature_parts.back() : layer_maps(model, chunk, layer));
  }
  const Tensor maps = concat(map_parts);
  const FeatureMap features(concat(feature_parts));
  const std::size_t filters = maps.dim(1), hh = maps.dim(2), ww = maps.dim(3);

  ConceptAssignment out;
  out.layer = layer;
  out.filter_concept.assign(filters, -1);
  std::vector<std::size_t> active;
  std::vector<std::vector<double>> descriptors;
  for (std::size_t f = 0; f < filters; ++f) {
    bool any_rank = false;
    for (std::size_t b = 0; b < n && !any_rank; ++b) any_rank = feature_map_rank(map_matrix(maps, b, f), tol) > 0;
    if (!any_rank) continue;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, by = 0, bx = 0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
          if (maps(b, f, y, x) > best) {
            best = maps(b, f, y, x);
            bi = b;
            by = y;
            bx = x;
          }
        }
      }
    }
    active.push_back(f);
    descriptors.push_back(features.patch(bi, by, bx));
  }
  if (active.empty()) throw ValidationError("assign_concepts: every filter is redundant on the probe set");
  if (cluster_count > active.size()) {
    throw ValidationError("assign_concepts: cluster count " + std::to_string(cluster_count) + " exceeds " +
                          std::to_string(active.size()) + " non-redundant filters");
  }

  const long d = static_cast<long>(descriptors[0].size());
  Eigen::MatrixXd points(static_cast<long>(active.size()), d);
  for (std::size_t i = 0; i < active.size(); ++i) {
    for (long k = 0; k < d; ++k) points(static_cast<long>(i), k) = descriptors[i][static_cast<std::size_t>(k)];
  }
  const std::vector<int> groups = cluster_by_cosine(points, cluster_count, seed);
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(static_cast<long>(cluster_count), d);
  const Eigen::MatrixXd unit = normalized_rows(points);
  for (std::size_t i = 0; i < active.size(); ++i) {
    out.filter_concept[active[i]] = groups[i];
    centroids.row(groups[i]) += unit.row(static_cast<long>(i));
  }
  for (std::size_t c = 0; c < cluster_count; ++c) out.names.push_back("concept_" + std::to_string(c));
  const Eigen::MatrixXd vectors = normalized_rows(model.bank.all_vectors());
  const Eigen::MatrixXd unit_centroids = normalized_rows(centroids);
  out.basis_concept = nearest(vectors, unit_centroids);

  // Give each concept at least one vector of every class when the class has
  // enough vectors, moving the closest vector out of a concept that keeps one.
  const std::size_t m = model.bank.per_class();
  if (m >= cluster_count) {
    const Eigen::MatrixXd cos = vectors * unit_centroids.transpose();
    for (std::size_t c = 0; c < model.bank.classes(); ++c) {
      for (std::size_t s = 0; s < cluster_count; ++s) {
        std::vector<std::size_t> count(cluster_count, 0);
        for (std::size_t k = 0; k < m; ++k) ++count[static_cast<std::size_t>(out.basis_concept[c * m + k])];
        if (count[s] > 0) continue;
        long pick = -1;
        for (std::size_t k = 0; k < m; ++k) {
          const std::size_t j = c * m + k;
          if (count[static_cast<std::size_t>(out.basis_concept[j])] < 2) continue;
          if (pick < 0 || cos(static_cast<long>(j), static_cast<long>(s)) > cos(pick, static_cast<long>(s))) {
            pick = static_cast<long>(j);
          }
        }
        if (pick >= 0) out.basis_concept[static_cast<std::size_t>(pick)] = static_cast<int>(s);
      }
    }
  }
  return out;
}

std::map<std::string, double> concept_average_rank(const std::vector<int>& ranks, const ConceptAssignment& assignment) {
  if (ranks.size() != assignment.filter_concept.size()) {
    throw DimensionError("concept_average_rank: " + std::to_string(ranks.size()) + " ranks for " +
                         std::to_string(assignment.filter_concept.size()) + " filters");
  }
  std::map<std::string, double> out;
  for (std::size_t c = 0; c < assignment.concept_count(); ++c) {
    const auto members = assignment.filters_of(c);
    if (members.empty()) continue;
    double sum = 0.0;
    for (std::size_t f : members) sum += ranks[f];
    out[assignment.names[c]] = sum / static_cast<double>(members.size());
  }
  return out;
}

std::map<std::string, double> sensitivity_scores(const std::map<std::string, double>& per_concept_rank) {
  if (per_concept_rank.empty()) throw ValidationError("sensitivity_scores: no concepts present");
  double total = 0.0;
  for (const auto& [name, r] : per_concept_rank) total += r;
  std::map<std::string, double> out;
  if (total <= 0.0) {
    log_warning("all concept ranks are zero; using uniform sensitivity scores");
    for (const auto& [name, r] : per_concept_rank) out[name] = 1.0 / static_cast<double>(per_concept_rank.size());
    return out;
  }
  for (const auto& [name, r] : per_concept_rank) out[name] = r / total;
  return out;
}

double RankProfile::pcs_weight(const std::string& concept_name) const {
  auto it = scores.find(concept_name);
  if (it == scores.end()) return 0.0;
  return it->second * static_cast<double>(scores.size());
}

nlohmann::ordered_json RankProfile::to_json() const {
  nlohmann::ordered_json j;
  j["image_id"] = image_id;
  j["rank_tolerance"] = rank_tolerance;
  j["layer"] = to_string(assignment.layer);
  j["per_filter_rank"] = per_filter_rank;
  j["redundant_filters"] = assignment.redundant_filters();
  nlohmann::ordered_json concepts = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < assignment.concept_count(); ++c) {
    const std::string& name = assignment.names[c];
    auto r = per_concept_rank.find(name);
    if (r == per_concept_rank.end()) continue;
    concepts[name] = {{"filters", assignment.filters_of(c)}, {"R_s", r->second}, {"score", scores.at(name)}};
  }
  j["concepts"] = concepts;
  return j;
}

RankProfile rank_profile(const ProtoModel& model, const Tensor& image, const ConceptAssignment& assignment,
                         const std::string& image_id, double tol) {
  const Tensor maps = layer_maps(model, as_batch(image), assignment.layer);
  RankProfile p;
  p.image_id = image_id;
  p.assignment = assignment;
  p.rank_tolerance = tol;
  for (std::size_t f = 0; f < maps.dim(1); ++f) p.per_filter_rank.push_back(feature_map_rank(map_matrix(maps, 0, f), tol));
  p.per_concept_rank = concept_average_rank(p.per_filter_rank, assignment);
  p.scores = sensitivity_scores(p.per_concept_rank);
  return p;
}

RankProfile average_profiles(const std::vector<RankProfile>& profiles) {
  if (profiles.empty()) throw ValidationError("average_profiles: no profiles");
  RankProfile out;
  out.image_id = "mean";
  out.assignment = profiles[0].assignment;
  out.rank_tolerance = profiles[0].rank_tolerance;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& p : profiles) {
    for (const auto& [name, r] : p.per_concept_rank) {
      acc[name].first += r;
      acc[name].second += 1;
    }
  }
  for (const auto& [name, s] : acc) out.per_concept_rank[name] = s.first / s.second;
  out.scores = sensitivity_scores(out.per_concept_rank);
  return out;
}

}  // namespace asxai
