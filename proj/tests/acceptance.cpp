// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "asxai/artifacts.hpp"
#include "asxai/cli.hpp"
#include "asxai/common_traits.hpp"
#include "asxai/dataset.hpp"
#include "asxai/explanation.hpp"
#include "asxai/feature_viz.hpp"
#include "asxai/log.hpp"
#include "asxai/losses.hpp"
#include "asxai/percept_study.hpp"
#include "asxai/rank_sensitivity.hpp"
#include "asxai/trainer.hpp"
#include "test_support.hpp"

using namespace asxai;
using namespace asxai::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Small counters that keep the first failure message.
struct Tally {
  std::size_t checked = 0, failed = 0;
  std::string first;
  void check(bool ok, const std::string& what) {
    ++checked;
    if (!ok && failed++ == 0) first = what;
  }
  Outcome outcome(const std::string& summary) const {
    return {failed == 0, failed == 0 ? summary : std::to_string(failed) + "/" + std::to_string(checked) +
                                                     " checks failed, first: " + first};
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---- shared toy model for criteria 3, 4 and 11 ----

struct ToyRun {
  std::vector<ToyImage> images;
  TrainingSet set;
  ProtoModel model;
  double orth_before = 0.0, orth_after = 0.0, accuracy = 0.0, seconds = 0.0;
};

ModelConfig toy_model_config() {
  ModelConfig cfg;
  cfg.feature_dim = 32;
  cfg.per_class = 8;
  cfg.class_labels = kToyClasses;
  cfg.seed = 7;
  return cfg;
}

ToyRun& toy_run() {
  static ToyRun run = [] {
    ToyRun r;
    r.images = make_toy_images(100, 7);
    r.set = toy_training_set(r.images);
    r.model = ProtoModel(toy_model_config());
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.max_cycles = 1;
    cfg.seed = 7;
    r.orth_before = brute_orthogonality(r.model.bank.vectors) / 2.0;
    const auto t0 = std::chrono::steady_clock::now();
    train(r.model, r.set, cfg);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.orth_after = brute_orthogonality(r.model.bank.vectors) / 2.0;
    const FeatureMap f = dataset_features(r.model, r.set);
    const Tensor probs = classify(global_max_pool(cosine_similarity_maps(f, r.model.bank)), r.model.head);
    std::size_t right = 0;
    for (std::size_t i = 0; i < r.set.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < probs.dim(1); ++c) {
        if (probs(i, c) > probs(i, best)) best = c;
      }
      right += static_cast<int>(best) == r.set.labels[i];
    }
    r.accuracy = static_cast<double>(right) / static_cast<double>(r.set.size());
    return r;
  }();
  return run;
}

// ---- brute-force oracles local to this binary ----

// Softmax cross-entropy of the clamped head applied to max-pooled cosines, all by loops.
double brute_classification_ce(const Tensor& f, const std::vector<int>& labels, const Tensor& bank, const Tensor& head) {
  const std::size_t n = f.dim(0), classes = bank.dim(0), per = bank.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> score(classes * per, -2.0);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t m = 0; m < per; ++m) {
        for (std::size_t h = 0; h < f.dim(2); ++h) {
          for (std::size_t w = 0; w < f.dim(3); ++w) {
            score[c * per + m] = std::max(score[c * per + m], naive_cosine(bank_vector(bank, c, m), fmap_patch(f, i, h, w)));
          }
        }
      }
    }
    std::vector<double> logit(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t j = 0; j < classes * per; ++j) logit[c] += head(c, j) * score[j];
    }
    double z = 0.0;
    for (double l : logit) z += std::exp(l);
    total += -(logit[static_cast<std::size_t>(labels[i])] - std::log(z));
  }
  return total / static_cast<double>(n);
}

struct LossInstance {
  Tensor features;
  std::vector<int> labels;
  BasisBank bank;
};

LossInstance loss_instance(Rng& rng) {
  const std::size_t n = 1 + rng.index(4), c = 2 + rng.index(2), m = 1 + rng.index(4), d = 2 + rng.index(5);
  LossInstance inst{random_tensor({n, d, 3, 3}, rng), {}, random_bank(c, m, d, rng)};
  for (std::size_t i = 0; i < n; ++i) inst.labels.push_back(static_cast<int>(rng.index(c)));
  return inst;
}

Outcome criterion_1() {
  Rng rng(101);
  Tally t;
  for (int trial = 0; trial < 200; ++trial) {
    const LossInstance inst = loss_instance(rng);
    const FeatureMap f(inst.features);
    const std::string tag = " (instance " + std::to_string(trial) + ")";
    t.check(std::abs(aggregation_loss(f, inst.labels, inst.bank) -
                     brute_patch_loss(inst.features, inst.labels, inst.bank.vectors, true)) < 1e-6,
            "aggregation" + tag);
    t.check(std::abs(separation_loss(f, inst.labels, inst.bank) -
                     brute_patch_loss(inst.features, inst.labels, inst.bank.vectors, false)) < 1e-6,
            "separation" + tag);
    t.check(std::abs(orthogonality_loss(inst.bank) - brute_orthogonality(inst.bank.vectors)) < 1e-6, "orthogonality" + tag);
    t.check(std::abs(subspace_separation_loss(inst.bank) - brute_subspace_separation(inst.bank.vectors)) < 1e-6,
            "subspace separation" + tag);
    const ClassifierHead head = init_classifier(inst.bank.classes(), inst.bank.per_class());
    t.check(std::abs(classification_loss_grad(f, inst.labels, inst.bank, head).ce -
                     brute_classification_ce(inst.features, inst.labels, inst.bank.vectors, head.weights)) < 1e-6,
            "cross-entropy" + tag);
  }
  return t.outcome("200 instances x 5 losses within 1e-6");
}

Outcome criterion_2() {
  Rng rng(202);
  Tally t;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const LossInstance inst = loss_instance(rng);
    const FeatureMap f(inst.features);
    auto with_bank = [&](const Tensor& v) { return BasisBank(v, inst.bank.class_labels); };
    const ClassifierHead head = init_classifier(inst.bank.classes(), inst.bank.per_class());
    const std::string tag = " (instance " + std::to_string(trial) + ")";
    const std::vector<std::pair<std::string, double>> errors{
        {"aggregation", relative_error(aggregation_loss_grad(f, inst.labels, inst.bank).grad_bank,
                                       finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                                         return aggregation_loss(f, inst.labels, with_bank(v));
                                       }))},
        {"separation", relative_error(separation_loss_grad(f, inst.labels, inst.bank).grad_bank,
                                      finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                                        return separation_loss(f, inst.labels, with_bank(v));
                                      }))},
        {"orthogonality", relative_error(orthogonality_loss_grad(inst.bank), finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                                           return orthogonality_loss(with_bank(v));
                                         }))},
        {"subspace separation",
         relative_error(subspace_separation_loss_grad(inst.bank), finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                          return subspace_separation_loss(with_bank(v));
                        }))},
        {"cross-entropy", relative_error(classification_loss_grad(f, inst.labels, inst.bank, head).grad_bank,
                                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                                           return classification_loss_grad(f, inst.labels, with_bank(v), head).ce;
                                         }))},
    };
    for (const auto& [name, err] : errors) {
      worst = std::max(worst, err);
      t.check(err < 1e-3, name + " relative error " + num(err) + tag);
    }
  }
  return t.outcome("50 instances x 5 losses, worst relative error " + num(worst));
}

Outcome criterion_3() {
  const ToyRun& r = toy_run();
  const double reduction = 1.0 - r.orth_after / r.orth_before;
  const bool pass = reduction >= 0.5 && r.accuracy > 0.9 && r.seconds < 600.0;
  return {pass, "orthogonality " + num(r.orth_before) + " -> " + num(r.orth_after) + " (reduction " + num(reduction) +
                    "), train accuracy " + num(r.accuracy) + ", " + num(r.seconds) + " s"};
}

Outcome criterion_4() {
  const ToyRun& r = toy_run();
  ProtoModel model(toy_model_config());  // fresh random bank so the projection moves every vector
  const Tensor before = model.bank.vectors;
  const FeatureMap f = dataset_features(model, r.set);
  const auto sources = project_basis_vectors(model, r.set);
  Tally t;
  for (std::size_t c = 0; c < model.classes(); ++c) {
    for (std::size_t m = 0; m < model.bank.per_class(); ++m) {
      const PatchSource& s = sources[c * model.bank.per_class() + m];
      const std::string tag = " (class " + std::to_string(c) + ", vector " + std::to_string(m) + ")";
      const auto a = bank_vector(before, c, m);
      double best = -2.0;
      std::size_t bi = 0, bh = 0, bw = 0;
      for (std::size_t i = 0; i < r.set.size(); ++i) {
        if (r.set.labels[i] != static_cast<int>(c)) continue;
        for (std::size_t h = 0; h < f.height(); ++h) {
          for (std::size_t w = 0; w < f.width(); ++w) {
            const double cs = naive_cosine(a, fmap_patch(f.values, i, h, w));
            if (cs > best) {
              best = cs;
              bi = i;
              bh = h;
              bw = w;
            }
          }
        }
      }
      t.check(s.image == bi && s.row == bh && s.col == bw, "argmax position differs" + tag);
      t.check(r.set.labels[s.image] == static_cast<int>(c), "patch from another class" + tag);
      const auto patch = fmap_patch(f.values, s.image, s.row, s.col);
      double err = 0.0;
      for (std::size_t d = 0; d < patch.size(); ++d) err = std::max(err, std::abs(model.bank.vectors(c, m, d) - patch[d]));
      t.check(err < 1e-6, "reconstruction error " + num(err) + tag);
    }
  }
  return t.outcome(std::to_string(model.bank.total()) + " vectors equal their exhaustive-argmax patch");
}

std::vector<std::vector<double>> loop_covariance(const Eigen::MatrixXd& w) {
  const long n = w.rows(), m = w.cols();
  std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < m; ++j) mean[static_cast<std::size_t>(i)] += w(i, j) / static_cast<double>(m);
  }
  std::vector<std::vector<double>> p(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (long a = 0; a < n; ++a) {
    for (long b = 0; b < n; ++b) {
      double s = 0.0;
      for (long j = 0; j < m; ++j) s += (w(a, j) - mean[static_cast<std::size_t>(a)]) * (w(b, j) - mean[static_cast<std::size_t>(b)]);
      p[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s / static_cast<double>(m - 1);
    }
  }
  return p;
}

Outcome criterion_5() {
  Rng rng(505);
  Tally t;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd w(6, 10);
    for (long i = 0; i < 6; ++i) {
      for (long j = 0; j < 10; ++j) w(i, j) = rng.uniform(-1, 1);
    }
    const TraitSpace s = fit_traits(w, 6);
    std::vector<double> ev;
    std::vector<std::vector<double>> vec;
    jacobi_eigen(loop_covariance(w), ev, vec);
    const std::string tag = " (matrix " + std::to_string(trial) + ")";
    for (std::size_t i = 0; i < 6; ++i) {
      t.check(std::abs(s.eigenvalues(static_cast<long>(i)) - ev[5 - i]) < 1e-8, "eigenvalue " + std::to_string(i) + tag);
    }
    // PC subspaces: the span of the retained eigenvectors must match (projector difference)
    const std::size_t k = s.k;
    double proj_diff = 0.0;
    for (std::size_t a = 0; a < 6; ++a) {
      for (std::size_t b = 0; b < 6; ++b) {
        double pa = 0.0, pb = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          pa += s.sample_vectors(static_cast<long>(a), static_cast<long>(i)) * s.sample_vectors(static_cast<long>(b), static_cast<long>(i));
          pb += vec[a][5 - i] * vec[b][5 - i];
        }
        proj_diff = std::max(proj_diff, std::abs(pa - pb));
      }
    }
    t.check(proj_diff < 1e-8, "subspace mismatch " + num(proj_diff) + tag);
    t.check(std::abs(information_ratio(s.eigenvalues, s.rank) - 1.0) < 1e-9, "information ratio at full rank" + tag);
  }
  return t.outcome("100 matrices: eigenvalues, subspaces within 1e-8, info ratio 1 +- 1e-9");
}

Outcome criterion_6() {
  Rng rng(606);
  std::vector<double> normal(10000), uniform(10000);
  for (auto& x : normal) x = rng.normal();
  for (auto& x : uniform) x = rng.uniform();
  const double rn = qq_normality_r2(normal), ru = qq_normality_r2(uniform);
  return {rn > 0.99 && ru < rn, "normal R2 " + num(rn) + ", uniform R2 " + num(ru)};
}

Outcome criterion_7() {
  Rng rng(707);
  Tally t;
  for (int trial = 0; trial < 500; ++trial) {
    const int r = trial % 8;
    std::vector<std::vector<long long>> prod(7, std::vector<long long>(7, 0));
    std::vector<std::vector<long long>> left(7, std::vector<long long>(static_cast<std::size_t>(r)));
    std::vector<std::vector<long long>> right(static_cast<std::size_t>(r), std::vector<long long>(7));
    for (auto& row : left) {
      for (auto& v : row) v = static_cast<long long>(rng.index(11)) - 5;
    }
    for (auto& row : right) {
      for (auto& v : row) v = static_cast<long long>(rng.index(11)) - 5;
    }
    Eigen::MatrixXd m(7, 7);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        for (std::size_t k = 0; k < static_cast<std::size_t>(r); ++k) prod[i][j] += left[i][k] * right[k][j];
        m(static_cast<long>(i), static_cast<long>(j)) = static_cast<double>(prod[i][j]);
      }
    }
    const int rank = feature_map_rank(m);
    const std::string tag = " (matrix " + std::to_string(trial) + ")";
    t.check(rank == bareiss_rank(prod), "rank differs from elimination" + tag);
    for (double s : {1e-6, -2.5, 1e5}) t.check(feature_map_rank(s * m) == rank, "rank changes under scaling" + tag);
  }
  // concept means against direct arithmetic
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t filters = 1 + rng.index(16), concepts = 1 + rng.index(4);
    ConceptAssignment a;
    for (std::size_t s = 0; s < concepts; ++s) a.names.push_back("c" + std::to_string(s));
    std::vector<int> ranks;
    std::vector<double> sum(concepts, 0.0), count(concepts, 0.0);
    for (std::size_t f = 0; f < filters; ++f) {
      const int concept_id = static_cast<int>(rng.index(concepts + 1)) - 1;
      a.filter_concept.push_back(concept_id);
      ranks.push_back(static_cast<int>(rng.index(8)));
      if (concept_id >= 0) {
        sum[static_cast<std::size_t>(concept_id)] += ranks.back();
        count[static_cast<std::size_t>(concept_id)] += 1.0;
      }
    }
    const auto means = concept_average_rank(ranks, a);
    for (std::size_t s = 0; s < concepts; ++s) {
      if (count[s] == 0.0) {
        t.check(means.count(a.names[s]) == 0, "concept without filters reported");
      } else {
        t.check(means.count(a.names[s]) && means.at(a.names[s]) == sum[s] / count[s], "concept mean differs");
      }
    }
  }
  return t.outcome("500 matrices match elimination, scale invariant; concept means exact");
}

// Normal cdf by composite Simpson integration of the density.
double simpson_cdf(double x, double mean, double sd) {
  const double a = mean - 12.0 * sd;
  if (x <= a) return 0.0;
  const int n = 20000;
  const double h = (x - a) / n;
  auto pdf = [&](double v) {
    const double z = (v - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
  };
  double s = pdf(a) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(a + i * h);
  return s * h / 3.0;
}

Outcome criterion_8() {
  Tally t;
  Rng rng(808);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double mean = rng.uniform(-3, 3), sd = rng.uniform(0.05, 2.0), half = rng.uniform(0.1, 4.0) * sd;
    const ConceptDistribution d{mean, sd, mean - half, mean + half};
    t.check(semantic_probability(d.a_min, d) == 0.0, "P_s(A_min) is not exactly 0");
    t.check(semantic_probability(d.a_max, d) == 1.0, "P_s(A_max) is not exactly 1");
    const double lo = simpson_cdf(d.a_min, mean, sd), hi = simpson_cdf(d.a_max, mean, sd);
    const double oracle = (simpson_cdf(mean, mean, sd) - lo) / (hi - lo);
    const double p = semantic_probability(mean, d);
    worst = std::max(worst, std::abs(p - 0.5));
    t.check(std::abs(p - 0.5) < 1e-6 && std::abs(oracle - 0.5) < 1e-6, "midpoint " + num(p) + " vs oracle " + num(oracle));
  }
  return t.outcome("endpoints exact, midpoint within " + num(worst) + " of 0.5");
}

std::size_t expected_band(double x) {
  if (x < 0.1) return 0;
  if (x < 0.35) return 1;
  if (x < 0.5) return 2;
  return 3;
}

PcsTable two_class(const std::string& a, const std::string& b, std::vector<std::string> concepts, std::vector<double> pa,
                   std::vector<double> pb) {
  PcsTable t;
  t.classes = {a, b};
  t.concepts = std::move(concepts);
  t.values = {std::move(pa), std::move(pb)};
  return t;
}

Outcome criterion_9() {
  Tally t;
  const std::vector<std::string> verdicts{
      "I am not sure whether this is a dog or a cat.",
      "I am not sure whether this is a dog mainly because",
      "It is probably a dog mainly because",
      "I am sure it is a dog mainly because",
  };
  const std::vector<std::string> words{"confusing", "something like", "perhaps", "obviously"};
  std::vector<double> grid;
  for (double b : {0.0, 0.1, 0.35, 0.5, 0.8}) {
    for (double e : {-1e-6, 0.0, 1e-6}) grid.push_back(b + e);
  }
  std::size_t cases = 0;
  // one concept: the overall margin and the concept margin coincide
  for (double delta : grid) {
    for (double top : grid) {
      const double dog = std::max(top, 0.0) + std::max(delta, 0.0), cat = dog - delta;
      if (cat < 0.0) continue;
      const PcsTable table = two_class("dog", "cat", {"nose"}, {dog}, {cat});
      const Deltas d = compute_deltas(table);
      if (d.named != 0) continue;
      const Explanation e = generate_explanation(d, table);
      const std::size_t band = expected_band(d.delta_max_pcs);
      ++cases;
      const std::string tag = " (delta " + num(delta) + ", top " + num(top) + ")";
      t.check(e.band == band && e.verdict == verdicts[band] && e.text.rfind(verdicts[band], 0) == 0, "verdict" + tag);
      const bool phrases = !(band == 0 && d.pcs_max < 0.5) && (dog > 0.0 || cat > 0.0);
      t.check(e.phrases.size() == (phrases ? 1u : 0u), "phrase count" + tag);
      if (!e.phrases.empty()) {
        const std::size_t sb = expected_band(d.delta_pcs[0]);
        t.check(e.phrases[0].find(words[sb]) != std::string::npos, "semanteme" + tag);
        t.check((e.phrases[0].find("vivid") != std::string::npos) == (d.pcs_max >= 0.5 && sb != 0), "position word" + tag);
      }
    }
  }
  // two concepts: a fixed clear leader, the second concept's margin sweeps every boundary
  for (double margin : grid) {
    if (margin < 0.0) continue;
    const PcsTable table = two_class("dog", "cat", {"nose", "ears"}, {0.9, 0.2 + margin}, {0.1, 0.2});
    const Deltas d = compute_deltas(table);
    const Explanation e = generate_explanation(d, table);
    ++cases;
    const std::string tag = " (second margin " + num(margin) + ")";
    t.check(e.band == 3 && e.verdict == verdicts[3], "verdict" + tag);
    const std::size_t sb = expected_band(d.delta_pcs[1]);
    if (d.delta_pcs[1] > 0.0 || table.values[0][1] > 0.0) {
      t.check(e.phrases.size() == 2, "phrase count" + tag);
      if (e.phrases.size() == 2) t.check(e.phrases[1].find(words[sb]) != std::string::npos, "second semanteme" + tag);
    }
  }

  const PcsTable a = two_class("cat", "dog", {"body"}, {0.09}, {0.07});
  const Explanation ea = generate_explanation(compute_deltas(a), a);
  t.check(ea.text.find("not sure whether this is a cat or a dog") != std::string::npos, "PCS 0.09 vs 0.07 fixture: " + ea.text);
  const PcsTable c = two_class("dog", "cat", {"ears", "eyes", "nose"}, {0.30, 0.45, 0.90}, {0.28, 0.25, 0.20});
  const Explanation ec = generate_explanation(compute_deltas(c), c);
  t.check(ec.text.rfind("I am sure it is a dog", 0) == 0, "confident dog fixture: " + ec.text);
  return t.outcome(std::to_string(cases) + " boundary cases and both fixtures match");
}

Outcome criterion_10() {
  Rng rng(1010);
  const Tensor target = random_tensor({3, 16, 16}, rng, -2, 2);
  IdentityMap phi(target.shape());
  InversionConfig cfg;
  cfg.lambda_tv = 0.0;
  cfg.beta = 0.05;
  cfg.iterations = 4000;
  const InversionResult r = invert_features(target, phi, cfg);
  double err = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) err = std::max(err, std::abs(r.image[i] - target[i]));
  return {err < 1e-3 && r.iterations_run <= 4000 && !r.aborted,
          "max-abs error " + num(err) + " after " + std::to_string(r.iterations_run) + " steps"};
}

Outcome criterion_11() {
  const ToyRun& r = toy_run();
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (const auto& t : r.images) {
    images.push_back(t.image);
    labels.push_back(t.label);
    ids.push_back(t.id);
  }
  std::vector<Image> probe_images(images.begin(), images.begin() + 4);
  probe_images.insert(probe_images.end(), images.begin() + 100, images.begin() + 104);
  const ConceptAssignment assignment = assign_concepts(r.model, images_to_tensor(probe_images), 3, 7);

  Tally t;
  PerceptConfig identity;
  identity.spec = PerturbSpec{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  identity.seed = 11;
  identity.samples_per_category = 20;
  const PerceptReport z = run_percept_study(r.model, images, labels, ids, assignment, identity);
  t.check(!z.cells.empty(), "identity study produced no cells");
  for (const auto& c : z.cells) {
    for (double v : c.deltas) t.check(v == 0.0, "identity delta " + num(v) + " in " + c.concept_name + "/" + to_string(c.domain));
  }

  PerceptConfig cfg;
  cfg.seed = 11;
  const auto t0 = std::chrono::steady_clock::now();
  const PerceptReport a = run_percept_study(r.model, images, labels, ids, assignment, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const PerceptReport b = run_percept_study(r.model, images, labels, ids, assignment, cfg);
  t.check(a.concepts.size() == 3 && a.domains.size() == 6 && a.cells.size() == 18,
          std::to_string(a.cells.size()) + " cells instead of 18");
  t.check(a.to_json().dump() == b.to_json().dump(), "box-plot data differs between runs");
  t.check(seconds < 300.0, "study took " + num(seconds) + " s");
  return t.outcome("identity delta 0 exactly; 3 x 6 report deterministic, " + num(seconds) + " s per run");
}

Outcome criterion_12() {
  WarningCapture quiet;
  const fs::path root = fs::temp_directory_path() / "asxai_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  write_toy_dataset(make_toy_images(25, 12), root / "toy");
  {
    std::ofstream(root / "cfg.json") << R"({"seed": 12,
      "model": {"backbone_channels": [8, 16, 16, 32, 32], "feature_dim": 16, "per_class": 4},
      "train": {"learning_rate": 0.01, "max_cycles": 1, "joint_epochs": 4, "fc_iterations": 20},
      "rank": {"clusters": 3, "probe_images": 10}})";
  }
  const std::string image = (root / "toy" / "striped_square" / "0003.png").string();
  Tally t;
  for (const char* run : {"run_a", "run_b"}) {
    std::ostringstream out, err;
    const std::string dir = (root / run).string();
    t.check(run_cli({"train", "--config", (root / "cfg.json").string(), "--data", (root / "toy").string(), "--out", dir}, out,
                    err) == 0,
            std::string("train failed: ") + err.str());
    t.check(run_cli({"explain", "--out", dir, "--image", image}, out, err) == 0, std::string("explain failed: ") + err.str());
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "run_a")) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext != ".json" && ext != ".jsonl") continue;
    const fs::path rel = fs::relative(e.path(), root / "run_a");
    ++compared;
    t.check(fs::exists(root / "run_b" / rel) && read_file(e.path()) == read_file(root / "run_b" / rel),
            rel.string() + " differs");
  }
  t.check(compared >= 8, "only " + std::to_string(compared) + " JSON files written");
  fs::remove_all(root);
  return t.outcome(std::to_string(compared) + " JSON artifacts byte-identical across two runs");
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3},   {4, criterion_4},   {5, criterion_5},   {6, criterion_6},
      {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}, {11, criterion_11}, {12, criterion_12},
  };
  WarningCapture quiet;
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " [" << num(s) << " s]"
              << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
