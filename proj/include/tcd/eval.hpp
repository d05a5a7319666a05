#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tcd/core.hpp"
#include "tcd/oracle.hpp"

namespace tcd {

struct MetricReport {
  std::string metric;
  double value = 0.0;
  Eigen::Index n_a = 0;
  Eigen::Index n_b = 0;
  double param = 0.0;  ///< projections, bandwidth or radius, depending on the metric
  std::uint64_t seed = 0;
};

/// Exact empirical W2 between two 1-D samples. Unequal sizes are coupled
/// through their empirical quantile functions (the exact W2 of the two
/// empirical measures), which coincides with sorted matching for equal sizes.
double wasserstein_1d(const Vec& a, const Vec& b);

inline constexpr int default_projections = 128;

/// Mean of 1-D W2 over random unit directions drawn from `rng`.
double sliced_w2(const PointSet& a, const PointSet& b, int projections, Rng& rng);

/// Median of pairwise distances over the pooled sample (at most 1000 points per side).
double median_bandwidth(const PointSet& a, const PointSet& b);

/// Unbiased MMD^2 estimate with kernel exp(-||x - y||^2 / (2 bandwidth^2)).
double mmd_rbf(const PointSet& a, const PointSet& b, double bandwidth);

/// Fraction of mixture means with at least one sample within `radius`.
double mode_recall(const PointSet& samples, const GaussianMixture& gmm, double radius);

/// Fraction of samples whose nearest component mean carries `labels[j]`.
double nearest_mode_accuracy(const PointSet& samples, const std::vector<Label>& labels, const GaussianMixture& gmm);

/// Least-squares slope of log(error) against log(h).
double order_fit(const Vec& h_values, const Vec& errors);

/// Rows of `metric,value,n_a,n_b,param,seed`, with header.
std::string metrics_to_csv(const std::vector<MetricReport>& rows);

}  // namespace tcd
