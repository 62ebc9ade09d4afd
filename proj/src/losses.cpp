#include "asxai/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "asxai/errors.hpp"
#include "asxai/rng.hpp"

namespace asxai {

namespace {

constexpr double kLogClamp = 1e-12;

void check_labels(const FeatureMap& fmaps, std::span<const int> labels, const BasisBank& bank) {
  if (labels.size() != fmaps.batch()) {
    throw ValidationError("loss: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(fmaps.batch()));
  }
  if (fmaps.channels() != bank.dim()) throw DimensionError("loss: feature/basis dim mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= bank.classes()) {
      throw ValidationError("loss: label " + std::to_string(y) + " out of range");
    }
  }
}

// Normalized rows plus the original norms.
struct UnitRows {
  Eigen::MatrixXd unit;
  Eigen::VectorXd norm;
};

UnitRows unit_rows(Eigen::MatrixXd m) {
  UnitRows u{std::move(m), {}};
  u.norm = u.unit.rowwise().norm();
  for (long r = 0; r < u.unit.rows(); ++r) {
    if (u.norm(r) > 0.0) u.unit.row(r) /= u.norm(r);
  }
  return u;
}

// d cos(a, p) / d a = (p_hat - cos * a_hat) / |a|; zero for a zero vector.
void add_cos_grad(const UnitRows& a, long ja, const UnitRows& p, long sp, double cos, double scale,
                  double* grad_a, double* grad_p_base, std::size_t hw) {
  const long d = a.unit.cols();
  if (a.norm(ja) > 0.0 && p.norm(sp) > 0.0) {
    for (long k = 0; k < d; ++k) {
      grad_a[k] += scale * (p.unit(sp, k) - cos * a.unit(ja, k)) / a.norm(ja);
      grad_p_base[static_cast<std::size_t>(k) * hw + static_cast<std::size_t>(sp)] +=
          scale * (a.unit(ja, k) - cos * p.unit(sp, k)) / p.norm(sp);
    }
  }
}

enum class Extremum { max_same_class, min_other_class };

PatchLossGradient patch_loss(const FeatureMap& fmaps, std::span<const int> labels,
                             const BasisBank& bank, Extremum mode, bool want_grad) {
  check_labels(fmaps, labels, bank);
  if (mode == Extremum::min_other_class && bank.classes() < 2) {
    throw ValidationError("separation_loss: needs at least two classes");
  }
  const std::size_t n = fmaps.batch();
  const std::size_t hw = fmaps.height() * fmaps.width();
  const std::size_t per = bank.per_class();
  const UnitRows a = unit_rows(bank.all_vectors());

  PatchLossGradient out;
  if (want_grad) {
    out.grad_features = Tensor(fmaps.values.shape());
    out.grad_bank = Tensor(bank.vectors.shape());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const UnitRows p = unit_rows(fmaps.patches(i));
    const Eigen::MatrixXd cos = a.unit * p.unit.transpose();  // [C*M, hw]
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    double best = mode == Extremum::max_same_class ? -std::numeric_limits<double>::infinity()
                                                   : std::numeric_limits<double>::infinity();
    long best_j = -1, best_s = -1;
    for (std::size_t j = 0; j < bank.total(); ++j) {
      const bool same = j / per == y;
      if ((mode == Extremum::max_same_class) != same) continue;
      for (std::size_t s = 0; s < hw; ++s) {
        const double c = std::clamp(cos(static_cast<long>(j), static_cast<long>(s)), -1.0, 1.0);
        const bool better = mode == Extremum::max_same_class ? c > best : c < best;
        if (better) {
          best = c;
          best_j = static_cast<long>(j);
          best_s = static_cast<long>(s);
        }
      }
    }
    // same-class terms take -max cos, cross-class terms take min cos
    const double term = mode == Extremum::max_same_class ? -best : best;
    sum += term;
    if (want_grad) {
      const double scale = (mode == Extremum::max_same_class ? -1.0 : 1.0) / static_cast<double>(n);
      add_cos_grad(a, best_j, p, best_s, best, scale,
                   out.grad_bank.data() + static_cast<std::size_t>(best_j) * bank.dim(),
                   out.grad_features.data() + i * fmaps.channels() * hw, hw);
    }
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

}  // namespace

BasisBank perturb_basis(const BasisBank& bank, const PerturbationConfig& cfg, std::uint64_t seed) {
  if (!std::isfinite(cfg.sigma)) throw ValidationError("perturb_basis: sigma must be finite");
  if (cfg.sigma < 0.0) throw ValidationError("perturb_basis: sigma must be non-negative");
  BasisBank out = bank;
  if (cfg.sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.vectors.values()) v += cfg.sigma * rng.normal();
  return out;
}

double aggregation_loss(const FeatureMap& fmaps, std::span<const int> labels, const BasisBank& bank) {
  return patch_loss(fmaps, labels, bank, Extremum::max_same_class, false).value;
}

double separation_loss(const FeatureMap& fmaps, std::span<const int> labels, const BasisBank& bank) {
  return patch_loss(fmaps, labels, bank, Extremum::min_other_class, false).value;
}

PatchLossGradient aggregation_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                        const BasisBank& bank) {
  return patch_loss(fmaps, labels, bank, Extremum::max_same_class, true);
}

PatchLossGradient separation_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                       const BasisBank& bank) {
  return patch_loss(fmaps, labels, bank, Extremum::min_other_class, true);
}

double orthogonality_loss(const BasisBank& bank) {
  double loss = 0.0;
  for (std::size_t c = 0; c < bank.classes(); ++c) {
    const Eigen::MatrixXd a = bank.class_matrix(c);
    const Eigen::MatrixXd r = a * a.transpose() - Eigen::MatrixXd::Identity(a.rows(), a.rows());
    loss += r.squaredNorm();
  }
  return loss;
}

Tensor orthogonality_loss_grad(const BasisBank& bank) {
  Tensor grad(bank.vectors.shape());
  for (std::size_t c = 0; c < bank.classes(); ++c) {
    const Eigen::MatrixXd a = bank.class_matrix(c);
    const Eigen::MatrixXd r = a * a.transpose() - Eigen::MatrixXd::Identity(a.rows(), a.rows());
    const Eigen::MatrixXd g = 4.0 * r * a;
    for (std::size_t m = 0; m < bank.per_class(); ++m) {
      for (std::size_t d = 0; d < bank.dim(); ++d) {
        grad(c, m, d) = g(static_cast<long>(m), static_cast<long>(d));
      }
    }
  }
  return grad;
}

double subspace_separation_loss(const BasisBank& bank) {
  if (bank.classes() < 2) throw ValidationError("subspace_separation_loss: needs at least two classes");
  std::vector<Eigen::MatrixXd> proj;
  for (std::size_t c = 0; c < bank.classes(); ++c) {
    const Eigen::MatrixXd a = bank.class_matrix(c);
    proj.push_back(a.transpose() * a);
  }
  double sum = 0.0;
  for (std::size_t c1 = 0; c1 < proj.size(); ++c1) {
    for (std::size_t c2 = c1 + 1; c2 < proj.size(); ++c2) sum += (proj[c1] - proj[c2]).norm();
  }
  return -sum / std::sqrt(2.0);
}

Tensor subspace_separation_loss_grad(const BasisBank& bank) {
  if (bank.classes() < 2) throw ValidationError("subspace_separation_loss: needs at least two classes");
  std::vector<Eigen::MatrixXd> a;
  std::vector<Eigen::MatrixXd> proj;
  for (std::size_t c = 0; c < bank.classes(); ++c) {
    a.push_back(bank.class_matrix(c));
    proj.push_back(a.back().transpose() * a.back());
  }
  std::vector<Eigen::MatrixXd> g(a.size(), Eigen::MatrixXd::Zero(a[0].rows(), a[0].cols()));
  const double scale = -1.0 / std::sqrt(2.0);
  for (std::size_t c1 = 0; c1 < a.size(); ++c1) {
    for (std::size_t c2 = c1 + 1; c2 < a.size(); ++c2) {
      const Eigen::MatrixXd delta = proj[c1] - proj[c2];
      const double f = delta.norm();
      if (f == 0.0) continue;
      g[c1] += scale * 2.0 * a[c1] * delta / f;
      g[c2] -= scale * 2.0 * a[c2] * delta / f;
    }
  }
  Tensor grad(bank.vectors.shape());
  for (std::size_t c = 0; c < a.size(); ++c) {
    for (std::size_t m = 0; m < bank.per_class(); ++m) {
      for (std::size_t d = 0; d < bank.dim(); ++d) {
        grad(c, m, d) = g[c](static_cast<long>(m), static_cast<long>(d));
      }
    }
  }
  return grad;
}

double cross_entropy_loss(const Tensor& probs, const Tensor& one_hot_labels) {
  if (probs.shape() != one_hot_labels.shape() || probs.rank() != 2) {
    throw DimensionError("cross_entropy_loss: probs " + shape_string(probs.shape()) + " vs labels " +
                         shape_string(one_hot_labels.shape()));
  }
  const std::size_t n = probs.dim(0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < probs.dim(1); ++c) {
      if (one_hot_labels(i, c) != 0.0) {
        sum += one_hot_labels(i, c) * std::log(std::max(probs(i, c), kLogClamp));
      }
    }
  }
  return -sum / static_cast<double>(n);
}

double total_loss(const LossTerms& t, const LossWeights& w) {
  return t.ce + w.orthogonality * t.orthogonality + w.subspace_separation * t.subspace_separation +
         w.separation * t.separation + w.aggregation * t.aggregation;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor y({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("one_hot: label out of range");
    }
    y(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return y;
}

ClassificationGradient classification_loss_grad(const FeatureMap& fmaps, std::span<const int> labels,
                                                const BasisBank& bank, const ClassifierHead& head) {
  check_labels(fmaps, labels, bank);
  const std::size_t n = fmaps.batch();
  const std::size_t hw = fmaps.height() * fmaps.width();
  const std::size_t total = bank.total();
  if (head.inputs() != total || head.classes() != bank.classes()) {
    throw DimensionError("classification_loss_grad: head does not match bank");
  }
  const UnitRows a = unit_rows(bank.all_vectors());
  std::vector<UnitRows> patches;
  std::vector<std::vector<long>> argmax(n, std::vector<long>(total, 0));
  ClassificationGradient out;
  out.scores = Tensor({n, total});
  std::vector<Eigen::MatrixXd> cos_maps;
  for (std::size_t i = 0; i < n; ++i) {
    patches.push_back(unit_rows(fmaps.patches(i)));
    cos_maps.push_back(a.unit * patches.back().unit.transpose());
    for (std::size_t j = 0; j < total; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < hw; ++s) {
        const double c = std::clamp(cos_maps[i](static_cast<long>(j), static_cast<long>(s)), -1.0, 1.0);
        if (c > best) {
          best = c;
          argmax[i][j] = static_cast<long>(s);
        }
      }
      out.scores(i, j) = best;
    }
  }
  out.probs = classify(out.scores, head);
  out.ce = cross_entropy_loss(out.probs, one_hot(labels, bank.classes()));

  out.grad_features = Tensor(fmaps.values.shape());
  out.grad_bank = Tensor(bank.vectors.shape());
  out.grad_head = Tensor(head.weights.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> g_logit(head.classes());
    for (std::size_t c = 0; c < head.classes(); ++c) {
      g_logit[c] = (out.probs(i, c) - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
    for (std::size_t j = 0; j < total; ++j) {
      double g_score = 0.0;
      for (std::size_t c = 0; c < head.classes(); ++c) {
        g_score += head.weights(c, j) * g_logit[c];
        out.grad_head(c, j) += g_logit[c] * out.scores(i, j);
      }
      const long s = argmax[i][j];
      add_cos_grad(a, static_cast<long>(j), patches[i], s, out.scores(i, j), g_score,
                   out.grad_bank.data() + j * bank.dim(),
                   out.grad_features.data() + i * fmaps.channels() * hw, hw);
    }
  }
  return out;
}

}  // namespace asxai
