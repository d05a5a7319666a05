#pragma once

#include <cmath>
#include <numbers>

#include "tcd/core.hpp"

namespace tcd {

// Closed forms of the cosine variance-preserving schedule. Templated so the
// same expressions serve double evaluation and any Eigen scalar type.

template <typename Scalar>
Scalar cosine_alpha(Scalar t) {
  using std::cos;
  return cos(Scalar(std::numbers::pi / 2) * t);
}

template <typename Scalar>
Scalar cosine_sigma(Scalar t) {
  using std::sin;
  return sin(Scalar(std::numbers::pi / 2) * t);
}

/// log-SNR, log(alpha / sigma) = -log(tan(pi t / 2)).
template <typename Scalar>
Scalar cosine_lambda(Scalar t) {
  using std::log;
  using std::tan;
  return -log(tan(Scalar(std::numbers::pi / 2) * t));
}

template <typename Scalar>
Scalar cosine_t_of_lambda(Scalar lam) {
  using std::atan;
  using std::exp;
  return Scalar(2 / std::numbers::pi) * atan(exp(-lam));
}

/// Under VP, alpha and sigma are functions of lambda alone.
template <typename Scalar>
Scalar alpha_of_lambda(Scalar lam) {
  using std::exp;
  using std::sqrt;
  return Scalar(1) / sqrt(Scalar(1) + exp(-2 * lam));
}

template <typename Scalar>
Scalar sigma_of_lambda(Scalar lam) {
  using std::exp;
  using std::sqrt;
  return Scalar(1) / sqrt(Scalar(1) + exp(2 * lam));
}

struct ScheduleValues {
  double alpha;
  double sigma;
  double lambda;
};

/// Cosine-VP schedule clamped to [t_min, t_max].
class NoiseSchedule {
 public:
  static constexpr double default_t_min = 1e-3;
  static constexpr double default_t_max = 1.0 - 1e-3;

  NoiseSchedule(double t_min = default_t_min, double t_max = default_t_max);

  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

  /// Band of representable log-SNR values, [lambda(t_max), lambda(t_min)].
  double lambda_min() const { return cosine_lambda(t_max_); }
  double lambda_max() const { return cosine_lambda(t_min_); }

  ScheduleValues evaluate(double t) const;
  double alpha(double t) const { return cosine_alpha(checked(t)); }
  double sigma(double t) const { return cosine_sigma(checked(t)); }
  double lambda(double t) const { return cosine_lambda(checked(t)); }

  /// d alpha / dt.
  double alpha_dot(double t) const { return -std::numbers::pi / 2 * cosine_sigma(checked(t)); }

  double t_of_lambda(double lam) const;

  Vec alpha(const Vec& t) const;
  Vec sigma(const Vec& t) const;
  Vec lambda(const Vec& t) const;

  /// Throws range_error unless t lies in [t_min, t_max]; returns t clamped
  /// against rounding at the endpoints.
  double checked(double t) const;

 private:
  double t_min_;
  double t_max_;
};

/// Forward perturbation alpha_t x0 + sigma_t z with fresh standard normal z.
PointSet perturb(const NoiseSchedule& schedule, const PointSet& x0, double t, Rng& rng);

/// Per-column times.
PointSet perturb(const NoiseSchedule& schedule, const PointSet& x0, const Vec& t, Rng& rng);

/// Ordered time points, strictly decreasing from t_max toward t_min.
struct TimeGrid {
  Vec points;
  Eigen::Index count() const { return points.size(); }
};

/// Training discretisation t_1 = t_min < t_2 < ... < t_N = t_max (ascending, so that
/// index n in the distillation loop maps to `at(n)` with 1-based n).
struct TrainGrid {
  Vec points;
  Eigen::Index count() const { return points.size(); }
  double at(Eigen::Index n) const { return points(n - 1); }
};

struct Grids {
  TrainGrid train;
  TimeGrid sample;
};

Grids make_grids(const NoiseSchedule& schedule, Eigen::Index n_train, Eigen::Index nfe);

/// Sampling grid of `nfe` points taken uniformly (in t) from the descending training grid.
TimeGrid make_sample_grid(const NoiseSchedule& schedule, Eigen::Index n_train, Eigen::Index nfe);

}  // namespace tcd
