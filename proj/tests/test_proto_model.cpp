#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <numeric>

#include "asxai/errors.hpp"
#include "asxai/proto_model.hpp"
#include "test_support.hpp"

using namespace asxai;
using asxai::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t feature_dim = 128) {
  ModelConfig cfg;
  cfg.backbone_channels = {4, 8, 8, 8, 8};
  cfg.feature_dim = feature_dim;
  cfg.per_class = 2;
  cfg.class_labels = {"cat", "dog"};
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("extract_features maps a zero image to a sigmoid-bounded 7x7 grid") {
  ProtoModel model(small_config());
  FeatureMap f = extract_features(Tensor({1, 3, 224, 224}), model);
  CHECK(f.values.shape() == std::vector<std::size_t>{1, 128, 7, 7});
  for (double v : f.values.values()) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("extract_features preserves the batch dimension") {
  ProtoModel model(small_config(16));
  Rng rng(1);
  FeatureMap f = extract_features(random_tensor({32, 3, 224, 224}, rng), model);
  CHECK(f.batch() == 32);
}

TEST_CASE("extract_features is deterministic across batch rows") {
  ProtoModel model(small_config(16));
  Rng rng(2);
  Tensor one = random_tensor({1, 3, 224, 224}, rng);
  std::vector<Tensor> parts{one.at(0), one.at(0)};
  FeatureMap f = extract_features(stack(parts), model);
  const std::size_t row = f.values.size() / 2;
  for (std::size_t i = 0; i < row; ++i) CHECK(f.values[i] == f.values[row + i]);
}

TEST_CASE("extract_features rejects bad input") {
  ProtoModel model(small_config(16));
  CHECK_THROWS_AS(extract_features(Tensor({1, 3, 112, 112}), model), DimensionError);
  Tensor bad({1, 3, 224, 224});
  bad[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(extract_features(bad, model), ValidationError);
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(3);
  nn::Conv2d conv(2, 3, 3, 2, 1);
  conv.init_he(rng);
  Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tensor w_out = random_tensor({2, 3, 3, 3}, rng);
  auto loss = [&](const nn::Conv2d& c, const Tensor& in) {
    Tensor y = c.forward(in);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w_out[i];
    return s;
  };
  Tensor gw(conv.weight.shape()), gb(conv.bias.shape());
  Tensor gx = conv.backward(x, w_out, &gw, &gb);
  Tensor fd_x = testing::finite_difference(x, [&](const Tensor& t) { return loss(conv, t); });
  CHECK(testing::relative_error(gx, fd_x) < 1e-6);
  Tensor fd_w = testing::finite_difference(conv.weight, [&](const Tensor& t) {
    nn::Conv2d c = conv;
    c.weight = t;
    return loss(c, x);
  });
  CHECK(testing::relative_error(gw, fd_w) < 1e-6);
}

TEST_CASE("cosine similarity maps on constructed patches") {
  BasisBank bank(Tensor({2, 1, 3}), {"a", "b"});
  bank.vector(0, 0)[0] = 1.0;
  bank.vector(0, 0)[1] = 2.0;
  bank.vector(1, 0)[2] = 1.0;
  Tensor f({1, 3, 1, 3});
  // patch 0 equals a_0, patch 1 is orthogonal to a_0, patch 2 is -a_0
  f(0, 0, 0, 0) = 1.0; f(0, 1, 0, 0) = 2.0;
  f(0, 0, 0, 1) = -2.0; f(0, 1, 0, 1) = 1.0;
  f(0, 0, 0, 2) = -1.0; f(0, 1, 0, 2) = -2.0;
  Tensor s = cosine_similarity_maps(FeatureMap(f), bank);
  CHECK(s(0, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s(0, 0, 0, 1) == doctest::Approx(0.0));
  CHECK(s(0, 0, 0, 2) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(s(0, 1, 0, 0) == 0.0);
}

TEST_CASE("zero vectors have zero cosine") {
  std::vector<double> z(3, 0.0), v{1, 2, 3};
  CHECK(cosine(z, v) == 0.0);
  CHECK(cosine(v, z) == 0.0);
  BasisBank bank(Tensor({2, 1, 3}, 1.0), {"a", "b"});
  Tensor s = cosine_similarity_maps(FeatureMap(Tensor({1, 3, 2, 2})), bank);
  for (double x : s.values()) CHECK(x == 0.0);
}

TEST_CASE("cosine maps are invariant to positive patch rescaling") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    BasisBank bank = testing::random_bank(3, 2, 5, rng);
    Tensor f = random_tensor({2, 5, 3, 3}, rng);
    Tensor base = cosine_similarity_maps(FeatureMap(f), bank);
    const std::size_t b = rng.index(2), h = rng.index(3), w = rng.index(3);
    const double scale = rng.uniform(0.01, 100.0);
    for (std::size_t d = 0; d < 5; ++d) f(b, d, h, w) *= scale;
    Tensor scaled = cosine_similarity_maps(FeatureMap(f), bank);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(base[i] - scaled[i]) < 1e-6);
    for (double x : scaled.values()) {
      CHECK(x >= -1.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("global max pool") {
  Tensor constant({1, 1, 7, 7}, 0.3);
  CHECK(global_max_pool(constant)(0, 0) == 0.3);
  Tensor spike({1, 1, 7, 7}, 0.0);
  spike(0, 0, 4, 2) = 0.9;
  CHECK(global_max_pool(spike)(0, 0) == 0.9);
  Rng rng(5);
  Tensor r = random_tensor({3, 4, 5, 6}, rng);
  Tensor pooled = global_max_pool(r);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t j = 0; j < 4; ++j) {
      double mx = -1e300;
      for (std::size_t h = 0; h < 5; ++h) {
        for (std::size_t w = 0; w < 6; ++w) mx = std::max(mx, r(b, j, h, w));
      }
      CHECK(pooled(b, j) == mx);
    }
  }
}

TEST_CASE("classify produces normalized probabilities") {
  ClassifierHead head{Tensor({2, 2})};
  head.weights(0, 0) = 1.0;
  head.weights(1, 1) = 1.0;
  Tensor equal({1, 2}, 0.4);
  Tensor p = classify(equal, head);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 1) == doctest::Approx(0.5));

  Tensor skewed({1, 2});
  skewed(0, 0) = 800.0;
  skewed(0, 1) = -800.0;
  p = classify(skewed, head);
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(std::isfinite(p(0, 1)));

  Rng rng(6);
  ClassifierHead wide = init_classifier(4, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor scores = random_tensor({5, 12}, rng, -50, 50);
    Tensor q = classify(scores, wide);
    for (std::size_t b = 0; b < 5; ++b) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(q(b, c) >= 0.0);
        s += q(b, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("init_classifier uses own-class +1 and cross-class -0.5") {
  ClassifierHead head = init_classifier(2, 1);
  CHECK(head.weights(0, 0) == 1.0);
  CHECK(head.weights(0, 1) == -0.5);
  CHECK(head.weights(1, 0) == -0.5);
  CHECK(head.weights(1, 1) == 1.0);
  ClassifierHead big = init_classifier(5, 4);
  CHECK(big.within_range());
  big.weights(2, 3) = 1.3;
  big.weights(1, 0) = -0.9;
  big.clamp();
  CHECK(big.weights(2, 3) == 1.0);
  CHECK(big.weights(1, 0) == -0.5);
  CHECK_THROWS_AS(init_classifier(1, 3), ValidationError);
  CHECK_THROWS_AS(init_classifier(2, 0), ValidationError);
}

TEST_CASE("basis bank validation") {
  BasisBank bank(Tensor({2, 2, 3}, 0.5), {"a", "b"});
  CHECK_NOTHROW(bank.validate());
  for (double& v : bank.vector(1, 0)) v = 0.0;
  CHECK_THROWS_AS(bank.validate(), ValidationError);
  CHECK_THROWS_AS(BasisBank(Tensor({2, 2, 3}), {"only"}), ValidationError);
}
