#include <doctest.h>

#include <cmath>

#include "tcd/eval.hpp"

using namespace tcd;

TEST_CASE("wasserstein_1d basics") {
  const Vec a = (Vec(3) << 0.4, -1.0, 2.0).finished();
  CHECK(wasserstein_1d(a, a) == 0.0);
  CHECK(wasserstein_1d((Vec(2) << 0.0, 2.0).finished(), (Vec(2) << 3.0, 1.0).finished()) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(wasserstein_1d(Vec(), a), argument_error);
  // {0} vs {0, 2}: half the mass moves by 2, so W2 = sqrt(0.5 * 4).
  CHECK(wasserstein_1d(Vec::Zero(1), (Vec(2) << 0.0, 2.0).finished()) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("wasserstein_1d between translated normals is the shift") {
  Rng rng(1);
  const Eigen::Index n = 100000;
  const Vec a = rng.normal_matrix(n, 1).col(0);
  const Vec b = rng.normal_matrix(n, 1).col(0).array() + 1.0;
  CHECK(std::abs(wasserstein_1d(a, b) - 1.0) <= 0.02);
}

TEST_CASE("identical samples give zero discrepancy") {
  Rng rng(2);
  const PointSet a = rng.normal_matrix(2, 500);
  Rng p(3);
  CHECK(sliced_w2(a, a, 64, p) < 1e-3);
  // The unbiased estimator on a = b sits at -O(1/n) below zero.
  const PointSet big = rng.normal_matrix(2, 5000);
  CHECK(std::abs(mmd_rbf(big, big, median_bandwidth(big, big))) < 1e-3);
  CHECK_THROWS_AS(sliced_w2(a, PointSet::Zero(3, 10), 64, p), argument_error);
  CHECK_THROWS_AS(sliced_w2(a, a, 0, p), argument_error);
  CHECK_THROWS_AS(mmd_rbf(a, a, 0.0), argument_error);
  CHECK_THROWS_AS(mmd_rbf(a.leftCols(1), a, 1.0), argument_error);
}

TEST_CASE("sliced_w2 sees a shift and is seed-deterministic") {
  Rng rng(4);
  const PointSet a = rng.normal_matrix(2, 2000);
  const PointSet b = (rng.normal_matrix(2, 2000).array() + 1.0).matrix();
  Rng p1(5), p2(5);
  const double d1 = sliced_w2(a, b, 128, p1);
  CHECK(d1 == sliced_w2(a, b, 128, p2));
  // Projection of the (1, 1) shift on a uniform direction has mean |cos| * sqrt(2) = 2 sqrt(2) / pi.
  CHECK(d1 > 0.7);
  CHECK(d1 < 1.2);
  CHECK(mmd_rbf(a, b, median_bandwidth(a, b)) > 0.05);
}

TEST_CASE("mode recall") {
  const auto gmm = GaussianMixture::ring(8, 2.0, 0.1);
  PointSet all(2, 8), half(2, 4);
  for (int k = 0; k < 8; ++k) all.col(k) = gmm.component(static_cast<std::size_t>(k)).mean;
  for (int k = 0; k < 4; ++k) half.col(k) = gmm.component(static_cast<std::size_t>(2 * k)).mean;
  CHECK(mode_recall(all, gmm, 0.5) == 1.0);
  CHECK(mode_recall(half, gmm, 0.5) == 0.5);
  CHECK(mode_recall(PointSet::Constant(2, 3, 50.0), gmm, 0.5) == 0.0);
  CHECK_THROWS_AS(mode_recall(all, gmm, 0.0), argument_error);
}

TEST_CASE("nearest mode accuracy") {
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.1, true);
  PointSet x(2, 4);
  for (int k = 0; k < 4; ++k) x.col(k) = 0.9 * gmm.component(static_cast<std::size_t>(k)).mean;
  const std::vector<Label> right{0, 1, 2, 3};
  const std::vector<Label> half{0, 1, 3, 2};
  CHECK(nearest_mode_accuracy(x, right, gmm) == 1.0);
  CHECK(nearest_mode_accuracy(x, half, gmm) == 0.5);
  CHECK_THROWS_AS(nearest_mode_accuracy(x, std::vector<Label>{0}, gmm), argument_error);
}

TEST_CASE("order_fit recovers power laws") {
  Vec h(5);
  for (int i = 0; i < 5; ++i) h(i) = 0.4 / std::pow(2.0, i);
  CHECK(std::abs(order_fit(h, h.array().square().matrix()) - 2.0) < 1e-9);
  CHECK(std::abs(order_fit(h, (7.5 * h.array().cube()).matrix()) - 3.0) < 1e-9);
  Vec bad = h;
  bad(2) = 0.0;
  CHECK_THROWS_AS(order_fit(h, bad), argument_error);
  CHECK_THROWS_AS(order_fit(h.head(3), h.head(3)), argument_error);
}

TEST_CASE("metrics CSV layout") {
  const std::vector<MetricReport> rows{{"sliced_w2", 0.25, 10, 20, 128, 7}, {"mmd_rbf", NAN, 10, 20, 0.5, 7}};
  const std::string csv = metrics_to_csv(rows);
  CHECK(csv.rfind("metric,value,n_a,n_b,param,seed\n", 0) == 0);
  CHECK(csv.find("sliced_w2,0.25,10,20,128,7\n") != std::string::npos);
  CHECK(csv.find("mmd_rbf,nan,") != std::string::npos);
  CHECK(csv.find('\r') == std::string::npos);
}
