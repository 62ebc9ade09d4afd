#include "asxai/common_traits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "asxai/rng.hpp"

namespace asxai {

std::pair<Eigen::MatrixXd, Eigen::VectorXd> row_center(const Eigen::MatrixXd& w) {
  if (w.rows() < 2) throw ValidationError("row_center: need at least 2 samples, got " + std::to_string(w.rows()));
  if (!w.allFinite()) throw ValidationError("row_center: non-finite input");
  const Eigen::VectorXd means = w.rowwise().mean();
  Eigen::MatrixXd centered = w.colwise() - means;
  return {centered, means};
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& w_hat) {
  if (w_hat.cols() < 2) throw ValidationError("sample_covariance: feature_dim must be >= 2");
  Eigen::MatrixXd p = w_hat * w_hat.transpose() / static_cast<double>(w_hat.cols() - 1);
  // exact symmetry
  return (p + p.transpose()) * 0.5;
}

double information_ratio(const Eigen::VectorXd& eigenvalues, std::size_t k) {
  const double trace = eigenvalues.sum();
  if (k == 0) return 0.0;
  if (trace <= 0.0) return 1.0;
  const std::size_t kk = std::min<std::size_t>(k, static_cast<std::size_t>(eigenvalues.size()));
  return std::clamp(eigenvalues.head(static_cast<long>(kk)).sum() / trace, 0.0, 1.0);
}

std::size_t default_component_count(const Eigen::VectorXd& eigenvalues, std::size_t rank, double target,
                                    std::size_t cap) {
  const std::size_t limit = std::min(rank, cap);
  for (std::size_t k = 1; k <= limit; ++k) {
    if (information_ratio(eigenvalues, k) >= target) return k;
  }
  return limit;
}

TraitSpace principal_components(const Eigen::MatrixXd& w, const Eigen::MatrixXd& p, std::size_t k) {
  if (p.rows() != w.rows() || p.cols() != w.rows()) throw DimensionError("principal_components: P must be N_s x N_s");
  TraitSpace t;
  t.row_means = w.rowwise().mean();
  const Eigen::MatrixXd w_hat = w.colwise() - t.row_means;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(p, Eigen::ComputeFullU);
  t.eigenvalues = svd.singularValues().cwiseMax(0.0);
  const Eigen::MatrixXd& u = svd.matrixU();
  const double top = t.eigenvalues.size() ? t.eigenvalues(0) : 0.0;
  t.rank = 0;
  for (long i = 0; i < t.eigenvalues.size(); ++i) {
    if (t.eigenvalues(i) > 1e-10 * top && top > 0.0) ++t.rank;
  }
  t.info_ratios.resize(t.eigenvalues.size());
  for (long i = 0; i < t.eigenvalues.size(); ++i) t.info_ratios(i) = information_ratio(t.eigenvalues, static_cast<std::size_t>(i + 1));

  if (k == 0) {
    k = default_component_count(t.eigenvalues, t.rank);
  } else if (k > t.rank) {
    log_warning("requested " + std::to_string(k) + " components but rank(P) = " + std::to_string(t.rank) +
                "; clamping");
    k = t.rank;
  }
  t.k = k;
  const long kk = static_cast<long>(k);
  t.sample_vectors = u.leftCols(kk);
  t.components = w.transpose() * t.sample_vectors;
  t.scores.resize(w.rows(), kk);
  for (long c = 0; c < kk; ++c) {
    Eigen::Index arg = 0;
    t.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (t.components(arg, c) < 0.0) {
      t.components.col(c) *= -1.0;
      t.sample_vectors.col(c) *= -1.0;
    }
    const Eigen::VectorXd dir = w_hat.transpose() * t.sample_vectors.col(c);
    const double n = dir.norm();
    t.scores.col(c) = n > 0.0 ? Eigen::VectorXd(w_hat * dir / n) : Eigen::VectorXd::Zero(w.rows());
  }
  return t;
}

TraitSpace fit_traits(const Eigen::MatrixXd& w, std::size_t k) {
  const auto [w_hat, means] = row_center(w);
  return principal_components(w, sample_covariance(w_hat), k);
}

double qq_normality_r2(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n < 20) throw ValidationError("qq_normality_r2: need at least 20 values, got " + std::to_string(n));
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("qq_normality_r2: non-finite value");
  }
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) throw ValidationError("qq_normality_r2: constant input");
  const boost::math::normal standard;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = boost::math::quantile(standard, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  }
  const double mq = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(n);
  const double mv = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double sqv = 0.0, sqq = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sqv += (q[i] - mq) * (values[i] - mv);
    sqq += (q[i] - mq) * (q[i] - mq);
    svv += (values[i] - mv) * (values[i] - mv);
  }
  return std::clamp(sqv * sqv / (sqq * svv), 0.0, 1.0);
}

TraitMode parse_trait_mode(const std::string& name) {
  if (name == "masked") return TraitMode::masked;
  if (name == "raw") return TraitMode::raw;
  throw ValidationError("unknown trait mode '" + name + "' (expected masked or raw)");
}

ConceptFeatures collect_concept_features(const ProtoModel& model, const Tensor& images,
                                         const std::vector<std::string>& ids, const ConceptAssignment& assignment,
                                         std::size_t concept_index, std::size_t n_s, std::uint64_t seed,
                                         TraitMode mode) {
  if (concept_index >= assignment.concept_count()) {
    throw ValidationError("collect_concept_features: unknown concept index " + std::to_string(concept_index));
  }
  const std::vector<std::size_t> filters = assignment.filters_of(concept_index);
  if (filters.empty()) throw ValidationError("concept '" + assignment.names[concept_index] + "' has no filters");
  const std::size_t available = images.dim(0);
  if (!ids.empty() && ids.size() != available) throw DimensionError("collect_concept_features: id count mismatch");

  ConceptFeatures out;
  out.rows.resize(available);
  std::iota(out.rows.begin(), out.rows.end(), std::size_t{0});
  if (n_s > available) {
    log_warning("only " + std::to_string(available) + " samples available for " + std::to_string(n_s) +
                " requested; using all");
  } else if (n_s < available) {
    Rng rng(derive_seed(seed, {0x747261, concept_index}));
    std::shuffle(out.rows.begin(), out.rows.end(), rng.engine());
    out.rows.resize(n_s);
    std::sort(out.rows.begin(), out.rows.end());
  }

  std::vector<std::size_t> basis;
  for (std::size_t j = 0; j < assignment.basis_concept.size(); ++j) {
    if (assignment.basis_concept[j] == static_cast<int>(concept_index)) basis.push_back(j);
  }

  std::size_t hw = 0, hh = 0, ww = 0;
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    const Tensor image = images.slice(out.rows[r], out.rows[r] + 1);
    const Tensor maps = layer_maps(model, image, assignment.layer);
    hh = maps.dim(2);
    ww = maps.dim(3);
    hw = hh * ww;
    if (r == 0) out.w.resize(static_cast<long>(out.rows.size()), static_cast<long>(filters.size() * hw));
    std::vector<double> mask(hw, 1.0);
    if (mode == TraitMode::masked && !basis.empty()) {
      const Tensor sim = cosine_similarity_maps(extract_features(image, model), model.bank);
      std::fill(mask.begin(), mask.end(), 0.0);
      for (std::size_t j : basis) {
        for (std::size_t s = 0; s < hw; ++s) mask[s] = std::max(mask[s], sim(0, j, s / ww, s % ww));
      }
    }
    for (std::size_t f = 0; f < filters.size(); ++f) {
      for (std::size_t s = 0; s < hw; ++s) {
        out.w(static_cast<long>(r), static_cast<long>(f * hw + s)) = maps(0, filters[f], s / ww, s % ww) * mask[s];
      }
    }
    out.sample_ids.push_back(ids.empty() ? std::to_string(out.rows[r]) : ids[out.rows[r]]);
  }
  return out;
}

nlohmann::ordered_json TraitSpace::to_json() const {
  nlohmann::ordered_json j;
  j["sample_count"] = sample_count();
  j["feature_dim"] = feature_dim();
  j["k"] = k;
  j["rank"] = rank;
  j["eigenvalues"] = std::vector<double>(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
  j["info_ratios"] = std::vector<double>(info_ratios.data(), info_ratios.data() + info_ratios.size());
  j["row_means"] = std::vector<double>(row_means.data(), row_means.data() + row_means.size());
  j["sample_ids"] = sample_ids;
  nlohmann::ordered_json r2 = nlohmann::ordered_json::array();
  for (long c = 0; c < scores.cols(); ++c) {
    std::vector<double> v(scores.col(c).data(), scores.col(c).data() + scores.rows());
    try {
      r2.push_back(qq_normality_r2(v));
    } catch (const ValidationError&) {
      r2.push_back(nullptr);
    }
  }
  j["qq_r2"] = r2;
  return j;
}

}  // namespace asxai
