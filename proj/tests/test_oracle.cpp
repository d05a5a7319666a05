#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tcd/oracle.hpp"

using namespace tcd;

namespace {

GaussianMixture two_mode_1d() {
  return GaussianMixture({{0.3, Vec::Constant(1, -1.0), Vec::Constant(1, 0.04), std::nullopt},
                          {0.7, Vec::Constant(1, 1.5), Vec::Constant(1, 0.25), std::nullopt}});
}

GaussianMixture two_mode_2d() {
  return GaussianMixture({{0.5, Vec::Constant(2, 1.0), Vec::Constant(2, 0.09), std::nullopt},
                          {0.5, Vec::Constant(2, -1.0), Vec::Constant(2, 0.09), std::nullopt}});
}

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

TEST_CASE("mixture validation") {
  CHECK_THROWS_AS(GaussianMixture({{0.5, Vec::Zero(1), Vec::Ones(1), std::nullopt}}), argument_error);
  CHECK_THROWS_AS(GaussianMixture({{1.0, Vec::Zero(1), Vec::Zero(1), std::nullopt}}), argument_error);
  CHECK_THROWS_AS(GaussianMixture({{0.5, Vec::Zero(1), Vec::Ones(1), 0}, {0.5, Vec::Ones(1), Vec::Ones(1), std::nullopt}}),
                  argument_error);
  CHECK_THROWS_AS(GaussianMixture(std::vector<MixtureComponent>{}), argument_error);
  const auto ring = GaussianMixture::ring(8, 2.0, 0.1, true);
  CHECK(ring.size() == 8);
  CHECK(ring.num_classes() == 8);
  CHECK(std::abs(ring.component(2).mean.norm() - 2.0) < 1e-12);
}

TEST_CASE("score of the standard normal is -x at every t") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::standard_normal(3);
  Rng rng(1);
  for (double t : {0.01, 0.3, 0.9}) {
    const Vec x = rng.normal_matrix(3, 1).col(0);
    CHECK((score(gmm, sch, x, t) + x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("score of a point mass") {
  const NoiseSchedule sch;
  const Vec mu = Vec::Constant(2, 0.8);
  const auto gmm = GaussianMixture::point_mass(mu);
  const Vec x = Vec::Constant(2, -0.4);
  for (double t : {0.2, 0.6}) {
    const double a = sch.alpha(t), s = sch.sigma(t);
    const Vec expect = -(x - a * mu) / (s * s);
    CHECK((score(gmm, sch, x, t) - expect).cwiseAbs().maxCoeff() < 1e-9 * expect.norm());
  }
}

TEST_CASE("score matches finite differences of the log density") {
  const NoiseSchedule sch;
  const auto gmm = two_mode_2d();
  Rng rng(2);
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double t = rng.uniform(0.05, 0.95);
    const Vec x = 1.5 * rng.normal_matrix(2, 1).col(0);
    const Vec g = score(gmm, sch, x, t);
    for (Eigen::Index k = 0; k < 2; ++k) {
      Vec xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const double fd = (marginal_logpdf(gmm, sch, xp, t) - marginal_logpdf(gmm, sch, xm, t)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(k)) / std::max(1.0, std::abs(g(k))));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("posterior mean closed forms") {
  const NoiseSchedule sch;
  SUBCASE("standard normal data gives alpha_t x") {
    const auto gmm = GaussianMixture::standard_normal(2);
    const Vec x = Vec::Constant(2, 0.9);
    const auto post = denoise_oracle(gmm, sch, x, 0.4);
    CHECK((post.x0_hat - sch.alpha(0.4) * x).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("point mass gives the atom") {
    const Vec mu = Vec::Constant(2, -1.3);
    const auto gmm = GaussianMixture::point_mass(mu);
    const auto post = denoise_oracle(gmm, sch, Vec::Constant(2, 4.0), 0.7);
    CHECK((post.x0_hat - mu).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("eps and x0 are tied by the perturbation identity") {
    const auto gmm = two_mode_2d();
    const Vec x = Vec::Constant(2, 0.2);
    const auto post = denoise_oracle(gmm, sch, x, 0.5);
    const Vec back = sch.alpha(0.5) * post.x0_hat + sch.sigma(0.5) * post.eps_hat;
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("posterior mean agrees with quadrature on a 1-D mixture") {
  const NoiseSchedule sch;
  const auto gmm = two_mode_1d();
  const double x = 0.3, t = 0.6;
  const double a = sch.alpha(t), s = sch.sigma(t);
  // Riemann sum of x0 p(x0) p(x | x0) over a 10^4-point grid.
  const int n = 10000;
  const double lo = -4.0, hi = 5.0, dx = (hi - lo) / (n - 1);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x0 = lo + dx * i;
    const double prior = 0.3 * normal_pdf(x0, -1.0, 0.04) + 0.7 * normal_pdf(x0, 1.5, 0.25);
    const double w = prior * normal_pdf(x, a * x0, s * s);
    num += x0 * w;
    den += w;
  }
  const auto post = denoise_oracle(gmm, sch, Vec::Constant(1, x), t);
  CHECK(std::abs(post.x0_hat(0) - num / den) < 1e-5);
}

TEST_CASE("Tweedie identity on random points") {
  const NoiseSchedule sch;
  const auto gmm = two_mode_2d();
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double t = rng.uniform(0.02, 0.98);
    const Vec x = 2.0 * rng.normal_matrix(2, 1).col(0);
    const double a = sch.alpha(t), s = sch.sigma(t);
    const Vec via_score = (x + s * s * score(gmm, sch, x, t)) / a;
    const Vec direct = denoise_oracle(gmm, sch, x, t).x0_hat;
    CHECK((via_score - direct).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, direct.norm()));
  }
}

TEST_CASE("label conditioning restricts the posterior") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.1, true);
  const Vec x = Vec::Zero(2);
  // A single Gaussian remains: x0_hat = mu + alpha v / (alpha^2 v + sigma^2) (x - alpha mu).
  const double t = 0.3, a = sch.alpha(t), s = sch.sigma(t), v = 0.01;
  const Vec mu = gmm.component(2).mean;
  const Vec expect = mu + a * v / (a * a * v + s * s) * (x - a * mu);
  const auto post = denoise_oracle(gmm, sch, x, t, 2);
  CHECK((post.x0_hat - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(denoise_oracle(gmm, sch, x, 0.5, 7), argument_error);
  const auto unlabeled = GaussianMixture::ring(4, 2.0, 0.1, false);
  CHECK_THROWS_AS(denoise_oracle(unlabeled, sch, x, 0.5, 0), argument_error);
}

TEST_CASE("exact flow special cases") {
  const NoiseSchedule sch;
  Rng rng(4);
  const PointSet x = rng.normal_matrix(2, 20);
  SUBCASE("identity on standard normal data") {
    const auto gmm = GaussianMixture::standard_normal(2);
    CHECK((exact_flow(gmm, sch, x, 0.9, 0.1) - x).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("point mass keeps the z coordinate") {
    const Vec mu = Vec::Constant(2, 0.5);
    const auto gmm = GaussianMixture::point_mass(mu);
    const double t = 0.8, s = 0.2;
    const PointSet z = (x.colwise() - sch.alpha(t) * mu) / sch.sigma(t);
    const PointSet expect = (sch.sigma(s) * z).colwise() + sch.alpha(s) * mu;
    CHECK((exact_flow(gmm, sch, x, t, s) - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("zero length returns the input exactly") {
    CHECK(exact_flow(two_mode_2d(), sch, x, 0.4, 0.4) == x);
  }
  SUBCASE("flow composition") {
    const auto gmm = two_mode_2d();
    const PointSet direct = exact_flow(gmm, sch, x, 0.9, 0.1);
    const PointSet composed = exact_flow(gmm, sch, exact_flow(gmm, sch, x, 0.9, 0.5), 0.5, 0.1);
    CHECK((direct - composed).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("self-convergence of the reference integrator") {
    const auto gmm = two_mode_2d();
    const PointSet a = exact_flow(gmm, sch, x, 0.9, 0.1, {10000});
    const PointSet b = exact_flow(gmm, sch, x, 0.9, 0.1, {20000});
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("too few steps is rejected") {
    CHECK_THROWS_AS(exact_flow(two_mode_2d(), sch, x, 0.9, 0.1, {50}), argument_error);
  }
}

TEST_CASE("sample_data moments and determinism") {
  Rng rng(5);
  const auto gmm = GaussianMixture::standard_normal(2);
  const PointSet x = sample_data(gmm, 100000, rng).points;
  const Vec mean = x.rowwise().mean();
  const Vec var = (x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(x.cols() - 1);
  CHECK(mean.cwiseAbs().maxCoeff() < 0.02);
  CHECK((var.array() - 1.0).abs().maxCoeff() < 0.02);

  const Vec mu = Vec::Constant(2, 3.0);
  Rng r2(6);
  const PointSet atoms = sample_data(GaussianMixture::point_mass(mu), 50, r2).points;
  CHECK((atoms.colwise() - mu).cwiseAbs().maxCoeff() < 1e-6);

  Rng a(7), b(7);
  const auto ring = GaussianMixture::ring(8, 2.0, 0.1, true);
  const auto da = sample_data(ring, 100, a);
  const auto db = sample_data(ring, 100, b);
  CHECK(da.points == db.points);
  CHECK(da.labels == db.labels);
  Rng c(8);
  CHECK(sample_data(ring, 0, c).points.cols() == 0);
}
