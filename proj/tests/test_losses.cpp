#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "asxai/errors.hpp"
#include "asxai/losses.hpp"
#include "test_support.hpp"

using namespace asxai;
using namespace asxai::testing;

namespace {

struct Instance {
  Tensor features;
  std::vector<int> labels;
  BasisBank bank;
};

Instance random_instance(Rng& rng, std::size_t min_classes = 2) {
  const std::size_t n = 1 + rng.index(4);
  const std::size_t c = min_classes + rng.index(4 - min_classes);
  const std::size_t m = 1 + rng.index(4);
  const std::size_t hw = 1 + rng.index(3);
  const std::size_t d = 2 + rng.index(4);
  Instance inst{random_tensor({n, d, hw, hw}, rng), {}, random_bank(c, m, d, rng)};
  for (std::size_t i = 0; i < n; ++i) inst.labels.push_back(static_cast<int>(rng.index(c)));
  return inst;
}

}  // namespace

TEST_CASE("perturb_basis") {
  Rng rng(1);
  BasisBank bank = random_bank(3, 4, 5, rng);
  CHECK(perturb_basis(bank, {0.0}, 7).vectors == bank.vectors);
  CHECK(perturb_basis(bank, {0.01}, 7).vectors == perturb_basis(bank, {0.01}, 7).vectors);
  CHECK(perturb_basis(bank, {0.01}, 7).vectors != perturb_basis(bank, {0.01}, 8).vectors);
  CHECK_THROWS_AS(perturb_basis(bank, {-1.0}, 1), ValidationError);

  // Monte Carlo: 2 * 100 * 64 = 12800 entries
  BasisBank big(Tensor({2, 100, 64}, 0.25), labels_for(2));
  BasisBank noisy = perturb_basis(big, {0.01}, 99);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < big.vectors.size(); ++i) {
    const double d = noisy.vectors[i] - big.vectors[i];
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(big.vectors.size());
  const double stddev = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(stddev - 0.01) < 0.001);
}

TEST_CASE("aggregation loss examples") {
  BasisBank bank(Tensor({2, 1, 2}), {"a", "b"});
  bank.vector(0, 0)[0] = 1.0;
  bank.vector(1, 0)[1] = 1.0;
  Tensor f({1, 2, 1, 1});
  f(0, 0, 0, 0) = 3.0;
  std::vector<int> y{0};
  CHECK(aggregation_loss(FeatureMap(f), y, bank) == doctest::Approx(-1.0));
  std::vector<int> y1{1};
  CHECK(aggregation_loss(FeatureMap(f), y1, bank) == doctest::Approx(0.0));
  std::vector<int> bad{2};
  CHECK_THROWS_AS(aggregation_loss(FeatureMap(f), bad, bank), ValidationError);
}

TEST_CASE("separation loss examples") {
  // class 1 vector equals patch 0; patch 1 is orthogonal to it
  BasisBank bank(Tensor({2, 1, 2}), {"a", "b"});
  bank.vector(0, 0)[0] = 1.0;
  bank.vector(1, 0)[1] = 1.0;
  Tensor f({1, 2, 1, 2});
  f(0, 1, 0, 0) = 1.0;
  f(0, 0, 0, 1) = 1.0;
  std::vector<int> y{0};
  CHECK(separation_loss(FeatureMap(f), y, bank) == doctest::Approx(0.0));

  Tensor g({1, 2, 1, 1});
  g(0, 0, 0, 0) = 2.0;
  CHECK(separation_loss(FeatureMap(g), y, bank) == doctest::Approx(0.0));

  BasisBank single(Tensor({1, 2, 2}, 1.0), {"only"});
  CHECK_THROWS_AS(separation_loss(FeatureMap(g), y, single), ValidationError);
}

TEST_CASE("patch losses match exhaustive enumeration") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Instance inst = random_instance(rng);
    FeatureMap f(inst.features);
    CHECK(std::abs(aggregation_loss(f, inst.labels, inst.bank) -
                   brute_patch_loss(inst.features, inst.labels, inst.bank.vectors, true)) < 1e-6);
    CHECK(std::abs(separation_loss(f, inst.labels, inst.bank) -
                   brute_patch_loss(inst.features, inst.labels, inst.bank.vectors, false)) < 1e-6);
  }
}

TEST_CASE("patch losses are invariant to positive patch rescaling") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Instance inst = random_instance(rng);
    const double agg = aggregation_loss(FeatureMap(inst.features), inst.labels, inst.bank);
    const double sep = separation_loss(FeatureMap(inst.features), inst.labels, inst.bank);
    Tensor scaled = inst.features;
    const std::size_t hw = scaled.dim(2) * scaled.dim(3);
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 1.0 + static_cast<double>((i % hw) * 3);
    CHECK(std::abs(aggregation_loss(FeatureMap(scaled), inst.labels, inst.bank) - agg) < 1e-6);
    CHECK(std::abs(separation_loss(FeatureMap(scaled), inst.labels, inst.bank) - sep) < 1e-6);
  }
}

TEST_CASE("orthogonality loss") {
  BasisBank identity(Tensor({2, 3, 3}), {"a", "b"});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t m = 0; m < 3; ++m) identity.vector(c, m)[m] = 1.0;
  }
  CHECK(orthogonality_loss(identity) == 0.0);

  BasisBank twins(Tensor({1, 2, 2}), {"a"});
  twins.vector(0, 0)[0] = 1.0;
  twins.vector(0, 1)[0] = 1.0;
  CHECK(orthogonality_loss(twins) == doctest::Approx(2.0));

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    BasisBank b = random_bank(1 + rng.index(3), 1 + rng.index(4), 2 + rng.index(5), rng);
    CHECK(orthogonality_loss(b) == doctest::Approx(brute_orthogonality(b.vectors)).epsilon(1e-12));
  }
}

TEST_CASE("orthogonality loss vanishes exactly on orthonormal rows") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.index(4), d = m + rng.index(3);
    BasisBank b(Tensor({2, m, d}), labels_for(2));
    for (std::size_t c = 0; c < 2; ++c) {
      Eigen::MatrixXd q = Eigen::MatrixXd::Random(static_cast<long>(d), static_cast<long>(d));
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
      Eigen::MatrixXd basis = qr.householderQ();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < d; ++k) b.vector(c, i)[k] = basis(static_cast<long>(k), static_cast<long>(i));
      }
    }
    CHECK(orthogonality_loss(b) < 1e-20);
    b.vector(1, 0)[0] += 1e-3;
    CHECK(orthogonality_loss(b) > 0.0);
  }
}

TEST_CASE("subspace separation loss") {
  BasisBank same(Tensor({2, 2, 3}, 0.7), {"a", "b"});
  CHECK(subspace_separation_loss(same) == 0.0);

  BasisBank axes(Tensor({2, 1, 2}), {"a", "b"});
  axes.vector(0, 0)[0] = 1.0;
  axes.vector(1, 0)[1] = 1.0;
  CHECK(subspace_separation_loss(axes) == doctest::Approx(-1.0));

  BasisBank single(Tensor({1, 1, 2}, 1.0), {"a"});
  CHECK_THROWS_AS(subspace_separation_loss(single), ValidationError);

  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    BasisBank b = random_bank(3, 1 + rng.index(3), 2 + rng.index(4), rng);
    const double v = subspace_separation_loss(b);
    CHECK(v <= 0.0);
    CHECK(v == doctest::Approx(brute_subspace_separation(b.vectors)).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy") {
  Tensor perfect({2, 2});
  perfect(0, 0) = 1.0;
  perfect(1, 1) = 1.0;
  std::vector<int> y{0, 1};
  CHECK(cross_entropy_loss(perfect, one_hot(y, 2)) == 0.0);
  Tensor uniform({1, 2}, 0.5);
  std::vector<int> y0{0};
  CHECK(cross_entropy_loss(uniform, one_hot(y0, 2)) == doctest::Approx(0.693147180559945));
  // degenerate row is clamped instead of producing infinity
  Tensor wrong({1, 2});
  wrong(0, 1) = 1.0;
  CHECK(cross_entropy_loss(wrong, one_hot(y0, 2)) == doctest::Approx(-std::log(1e-12)));

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({3, 4}, rng, -3, 3);
    Tensor p = softmax_rows(logits);
    std::vector<int> labels{static_cast<int>(rng.index(4)), static_cast<int>(rng.index(4)),
                            static_cast<int>(rng.index(4))};
    CHECK(cross_entropy_loss(p, one_hot(labels, 4)) ==
          doctest::Approx(brute_cross_entropy(p, labels)).epsilon(1e-12));
  }
}

TEST_CASE("total loss is the literal weighted sum") {
  LossWeights w;
  CHECK(total_loss({}, w) == 0.0);
  CHECK(total_loss({1.0, 0, 0, 0, 0}, w) == 1.0);
  LossTerms t{0.5, 2.0, -1.0, -0.3, -0.8};
  CHECK(std::abs(total_loss(t, w) - 1.8840001) < 1e-12);
}

TEST_CASE("analytic bank gradients match central finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    Instance inst = random_instance(rng);
    const FeatureMap f(inst.features);
    auto with_bank = [&](const Tensor& v) { return BasisBank(v, inst.bank.class_labels); };

    CHECK(relative_error(aggregation_loss_grad(f, inst.labels, inst.bank).grad_bank,
                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                           return aggregation_loss(f, inst.labels, with_bank(v));
                         })) < 1e-3);
    CHECK(relative_error(separation_loss_grad(f, inst.labels, inst.bank).grad_bank,
                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                           return separation_loss(f, inst.labels, with_bank(v));
                         })) < 1e-3);
    CHECK(relative_error(orthogonality_loss_grad(inst.bank),
                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                           return orthogonality_loss(with_bank(v));
                         })) < 1e-3);
    CHECK(relative_error(subspace_separation_loss_grad(inst.bank),
                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                           return subspace_separation_loss(with_bank(v));
                         })) < 1e-3);
    // max pooling has kinks, so a small step keeps the argmax fixed
    const ClassifierHead head = init_classifier(inst.bank.classes(), inst.bank.per_class());
    CHECK(relative_error(classification_loss_grad(f, inst.labels, inst.bank, head).grad_bank,
                         finite_difference(inst.bank.vectors, [&](const Tensor& v) {
                           return classification_loss_grad(f, inst.labels, with_bank(v), head).ce;
                         }, 1e-6)) < 1e-3);
  }
}

TEST_CASE("analytic feature gradients match central finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Instance inst = random_instance(rng);
    const ClassifierHead head = init_classifier(inst.bank.classes(), inst.bank.per_class());
    CHECK(relative_error(aggregation_loss_grad(FeatureMap(inst.features), inst.labels, inst.bank).grad_features,
                         finite_difference(inst.features, [&](const Tensor& t) {
                           return aggregation_loss(FeatureMap(t), inst.labels, inst.bank);
                         })) < 1e-3);
    CHECK(relative_error(separation_loss_grad(FeatureMap(inst.features), inst.labels, inst.bank).grad_features,
                         finite_difference(inst.features, [&](const Tensor& t) {
                           return separation_loss(FeatureMap(t), inst.labels, inst.bank);
                         })) < 1e-3);
    auto cg = classification_loss_grad(FeatureMap(inst.features), inst.labels, inst.bank, head);
    CHECK(relative_error(cg.grad_features, finite_difference(inst.features, [&](const Tensor& t) {
                           return classification_loss_grad(FeatureMap(t), inst.labels, inst.bank, head).ce;
                         })) < 1e-3);
    CHECK(relative_error(cg.grad_head, finite_difference(head.weights, [&](const Tensor& w) {
                           ClassifierHead h{w};
                           return classification_loss_grad(FeatureMap(inst.features), inst.labels, inst.bank, h).ce;
                         })) < 1e-3);
  }
}
