#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "asxai/common_traits.hpp"
#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "test_support.hpp"

using namespace asxai;
using namespace asxai::testing;

namespace {

Eigen::MatrixXd random_matrix(long h, long w, Rng& rng) {
  Eigen::MatrixXd m(h, w);
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) m(i, j) = rng.uniform(-1, 1);
  }
  return m;
}

// Covariance straight from the definition with explicit loops.
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
      for (long j = 0; j < m; ++j) {
        s += (w(a, j) - mean[static_cast<std::size_t>(a)]) * (w(b, j) - mean[static_cast<std::size_t>(b)]);
      }
      p[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s / static_cast<double>(m - 1);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("row_center") {
  Eigen::MatrixXd w(2, 2);
  w << 1, 2, 3, 4;
  const auto [c, means] = row_center(w);
  CHECK(means(0) == 1.5);
  CHECK(means(1) == 3.5);
  CHECK(c(0, 0) == -0.5);
  CHECK(c(0, 1) == 0.5);
  CHECK(c(1, 0) == -0.5);
  CHECK(c(1, 1) == 0.5);

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(3, 4, 2.5);
  CHECK(row_center(constant).first.isZero(0.0));

  Rng rng(1);
  const Eigen::MatrixXd r = random_matrix(5, 8, rng);
  const Eigen::MatrixXd rc = row_center(r).first;
  for (long i = 0; i < 5; ++i) CHECK(std::abs(rc.row(i).sum()) < 1e-9);
  CHECK_THROWS_AS(row_center(Eigen::MatrixXd::Ones(1, 4)), ValidationError);
}

TEST_CASE("sample covariance") {
  Eigen::MatrixXd c(2, 2);
  c << -0.5, 0.5, -0.5, 0.5;
  const Eigen::MatrixXd p = sample_covariance(c);
  CHECK(p(0, 0) == 0.5);
  CHECK(p(0, 1) == 0.5);
  CHECK(p(1, 0) == 0.5);
  CHECK(p(1, 1) == 0.5);
  CHECK(sample_covariance(Eigen::MatrixXd::Zero(3, 5)).isZero(0.0));
  Rng rng(2);
  const Eigen::MatrixXd q = sample_covariance(row_center(random_matrix(6, 9, rng)).first);
  CHECK((q - q.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(sample_covariance(Eigen::MatrixXd::Zero(3, 1)), ValidationError);
}

TEST_CASE("information ratio") {
  CHECK(information_ratio(Eigen::Vector2d(4, 0), 1) == 1.0);
  CHECK(information_ratio(Eigen::Vector2d(3, 1), 1) == 0.75);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TraitSpace t = fit_traits(random_matrix(6, 10, rng));
    CHECK(std::abs(information_ratio(t.eigenvalues, t.rank) - 1.0) < 1e-9);
    for (long i = 1; i < t.info_ratios.size(); ++i) CHECK(t.info_ratios(i) >= t.info_ratios(i - 1));
    CHECK(t.info_ratios(t.info_ratios.size() - 1) <= 1.0 + 1e-9);
  }
  Eigen::VectorXd spectrum(5);
  spectrum << 50, 30, 15, 4, 1;
  CHECK(default_component_count(spectrum, 5) == 3);
  CHECK(default_component_count(spectrum, 5, 0.9, 2) == 2);
}

TEST_CASE("PCA matches an independent Jacobi eigendecomposition on 6x10 matrices") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd w = random_matrix(6, 10, rng);
    const TraitSpace t = fit_traits(w, 6);
    std::vector<double> ev;
    std::vector<std::vector<double>> vec;
    jacobi_eigen(loop_covariance(w), ev, vec);
    REQUIRE(t.eigenvalues.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(t.eigenvalues(static_cast<long>(i)) - ev[5 - i]) < 1e-8);
    REQUIRE(t.k == t.rank);
    for (std::size_t i = 0; i < t.k; ++i) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 6; ++r) dot += t.sample_vectors(static_cast<long>(r), static_cast<long>(i)) * vec[r][5 - i];
      CHECK(1.0 - std::abs(dot) < 1e-8);
    }
    CHECK(std::abs(information_ratio(t.eigenvalues, t.rank) - 1.0) < 1e-9);
  }
}

TEST_CASE("degenerate inputs clamp k") {
  WarningCapture capture;
  const TraitSpace flat = fit_traits(Eigen::MatrixXd::Constant(4, 6, 1.0), 2);
  CHECK(flat.rank == 0);
  CHECK(flat.k == 0);
  CHECK(capture.count() == 1);

  Eigen::MatrixXd same(4, 6);
  for (long i = 0; i < 4; ++i) same.row(i) << 1, 2, 3, 4, 5, 7;
  const TraitSpace one = fit_traits(same, 3);
  CHECK(one.rank == 1);
  CHECK(one.k == 1);
}

TEST_CASE("planted one-dimensional structure is recovered") {
  Rng rng(5);
  Eigen::VectorXd v(30);
  for (long j = 0; j < 30; ++j) v(j) = rng.uniform(-1, 1);
  Eigen::MatrixXd w(40, 30);
  for (long i = 0; i < 40; ++i) {
    const double s = rng.normal(0, 3);
    for (long j = 0; j < 30; ++j) w(i, j) = s * v(j) + rng.normal(0, 0.05);
  }
  const TraitSpace t = fit_traits(w, 1);
  const Eigen::VectorXd pc = t.components.col(0);
  CHECK(std::abs(pc.dot(v)) / (pc.norm() * v.norm()) > 0.99);
}

TEST_CASE("first PC is stable under row permutation and scores order by energy") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd w = random_matrix(8, 12, rng);
    Eigen::MatrixXd flipped = w.colwise().reverse();
    const TraitSpace a = fit_traits(w, 4), b = fit_traits(flipped, 4);
    CHECK((a.components.col(0) - b.components.col(0)).cwiseAbs().maxCoeff() < 1e-9);
    for (long c = 1; c < a.scores.cols(); ++c) {
      CHECK(a.scores.col(c).squaredNorm() <= a.scores.col(c - 1).squaredNorm() + 1e-9);
    }
    for (long c = 0; c < a.components.cols(); ++c) {
      Eigen::Index arg = 0;
      a.components.col(c).cwiseAbs().maxCoeff(&arg);
      CHECK(a.components(arg, c) > 0.0);
    }
  }
}

TEST_CASE("q-q normality diagnostic") {
  Rng rng(7);
  std::vector<double> normal(10000), uniform(10000);
  for (auto& x : normal) x = rng.normal();
  for (auto& x : uniform) x = rng.uniform();
  const double rn = qq_normality_r2(normal), ru = qq_normality_r2(uniform);
  CHECK(rn > 0.99);
  CHECK(ru < rn);
  std::vector<double> affine = normal;
  for (auto& x : affine) x = 3.0 * x - 7.0;
  CHECK(std::abs(qq_normality_r2(affine) - rn) < 1e-9);
  CHECK_THROWS_AS(qq_normality_r2(std::vector<double>(10, 1.0)), ValidationError);
  CHECK_THROWS_AS(qq_normality_r2(std::vector<double>(30, 1.0)), ValidationError);
}

TEST_CASE("collect_concept_features") {
  ModelConfig cfg;
  cfg.backbone_channels = {4, 8, 8, 8, 8};
  cfg.feature_dim = 16;
  cfg.per_class = 3;
  cfg.class_labels = {"a", "b"};
  cfg.seed = 9;
  ProtoModel model(cfg);
  Rng rng(8);
  Tensor images = random_tensor({5, 3, 224, 224}, rng);
  std::vector<Tensor> rows{images.at(0), images.at(1), images.at(2), images.at(3), images.at(0)};
  images = stack(rows);
  const ConceptAssignment a = assign_concepts(model, images, 2, 1);

  const ConceptFeatures all = collect_concept_features(model, images, {}, a, 0, 5, 3);
  CHECK(all.w.rows() == 5);
  CHECK(all.w.cols() == static_cast<long>(a.filters_of(0).size() * 49));
  CHECK(all.w.row(0) == all.w.row(4));

  const ConceptFeatures three = collect_concept_features(model, images, {}, a, 0, 3, 3);
  CHECK(three.w.rows() == 3);
  const ConceptFeatures again = collect_concept_features(model, images, {}, a, 0, 3, 3);
  CHECK(three.w == again.w);
  CHECK(three.rows == again.rows);

  const ConceptFeatures raw = collect_concept_features(model, images, {}, a, 0, 5, 3, TraitMode::raw);
  CHECK(raw.w.cols() == all.w.cols());

  WarningCapture capture;
  CHECK(collect_concept_features(model, images, {}, a, 0, 400, 3).w.rows() == 5);
  CHECK(capture.count() == 1);
}
