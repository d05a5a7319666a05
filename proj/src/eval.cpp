#include "tcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "tcd/io.hpp"

namespace tcd {

double wasserstein_1d(const Vec& a, const Vec& b) {
  if (a.size() == 0 || b.size() == 0) throw argument_error("wasserstein_1d: empty sample");
  if (!a.allFinite() || !b.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sa(a.data(), a.data() + a.size());
  std::vector<double> sb(b.data(), b.data() + b.size());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const std::size_t na = sa.size();
  const std::size_t nb = sb.size();
  double acc = 0.0;
  if (na == nb) {
    for (std::size_t i = 0; i < na; ++i) acc += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    return std::sqrt(acc / static_cast<double>(na));
  }
  // Walk the merged quantile breakpoints i/na and j/nb in integer units of 1/(na nb).
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t pos = 0;
  const std::size_t total = na * nb;
  while (pos < total) {
    const std::size_t next = std::min((i + 1) * nb, (j + 1) * na);
    const double d = sa[i] - sb[j];
    acc += d * d * static_cast<double>(next - pos);
    pos = next;
    if (pos == (i + 1) * nb) ++i;
    if (pos == (j + 1) * na) ++j;
  }
  return std::sqrt(acc / static_cast<double>(total));
}

double sliced_w2(const PointSet& a, const PointSet& b, int projections, Rng& rng) {
  if (a.cols() == 0 || b.cols() == 0) throw argument_error("sliced_w2: empty sample");
  if (a.rows() != b.rows()) throw argument_error("sliced_w2: dimension mismatch");
  if (projections < 1) throw argument_error("sliced_w2: projections must be positive");
  double sum = 0.0;
  for (int p = 0; p < projections; ++p) {
    Vec dir = rng.normal_matrix(a.rows(), 1).col(0);
    dir /= dir.norm();
    sum += wasserstein_1d(a.transpose() * dir, b.transpose() * dir);
  }
  return sum / projections;
}

double median_bandwidth(const PointSet& a, const PointSet& b) {
  if (a.cols() == 0 || b.cols() == 0) throw argument_error("median_bandwidth: empty sample");
  if (!a.allFinite() || !b.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::Index cap = 1000;
  const Eigen::Index na = std::min(a.cols(), cap);
  const Eigen::Index nb = std::min(b.cols(), cap);
  PointSet pooled(a.rows(), na + nb);
  pooled << a.leftCols(na), b.leftCols(nb);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.cols() * (pooled.cols() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.cols(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.cols(); ++j) d.push_back((pooled.col(i) - pooled.col(j)).norm());
  if (d.empty()) throw argument_error("median_bandwidth: need at least two points");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (!(*mid > 0.0)) throw argument_error("median_bandwidth: all points coincide");
  return *mid;
}

namespace {

double kernel_sum(const PointSet& x, const PointSet& y, double inv2h2, bool skip_diagonal) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (skip_diagonal && i == j) continue;
      sum += std::exp(-(x.col(i) - y.col(j)).squaredNorm() * inv2h2);
    }
  return sum;
}

}  // namespace

double mmd_rbf(const PointSet& a, const PointSet& b, double bandwidth) {
  if (std::isnan(bandwidth) || !a.allFinite() || !b.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  if (!(bandwidth > 0.0)) throw argument_error("mmd_rbf: bandwidth must be positive");
  if (a.cols() < 2 || b.cols() < 2) throw argument_error("mmd_rbf: need at least two points per sample");
  if (a.rows() != b.rows()) throw argument_error("mmd_rbf: dimension mismatch");
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  const double m = static_cast<double>(a.cols());
  const double n = static_cast<double>(b.cols());
  const double kaa = kernel_sum(a, a, inv2h2, true) / (m * (m - 1));
  const double kbb = kernel_sum(b, b, inv2h2, true) / (n * (n - 1));
  const double kab = kernel_sum(a, b, inv2h2, false) / (m * n);
  return kaa + kbb - 2.0 * kab;
}

double mode_recall(const PointSet& samples, const GaussianMixture& gmm, double radius) {
  if (!(radius > 0.0)) throw argument_error("mode_recall: radius must be positive");
  if (samples.cols() == 0) throw argument_error("mode_recall: empty sample");
  if (samples.rows() != gmm.dim()) throw argument_error("mode_recall: dimension mismatch");
  std::size_t hit = 0;
  for (const auto& c : gmm.components()) {
    const double best = (samples.colwise() - c.mean).colwise().norm().minCoeff();
    if (best <= radius) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(gmm.size());
}

double nearest_mode_accuracy(const PointSet& samples, const std::vector<Label>& labels, const GaussianMixture& gmm) {
  if (!gmm.has_labels()) throw argument_error("nearest_mode_accuracy: mixture carries no labels");
  if (samples.cols() == 0) throw argument_error("nearest_mode_accuracy: empty sample");
  if (static_cast<Eigen::Index>(labels.size()) != samples.cols())
    throw argument_error("nearest_mode_accuracy: one label per sample required");
  const auto nearest = nearest_component(gmm, samples);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < nearest.size(); ++j)
    if (gmm.component(nearest[j]).label == labels[j]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(nearest.size());
}

double order_fit(const Vec& h_values, const Vec& errors) {
  if (h_values.size() != errors.size()) throw argument_error("order_fit: size mismatch");
  if (h_values.size() < 4) throw argument_error("order_fit: need at least 4 points");
  if ((h_values.array() <= 0.0).any()) throw argument_error("order_fit: step sizes must be positive");
  if (!(errors.array() > 0.0).all()) throw argument_error("order_fit: errors must be positive");
  const Eigen::ArrayXd lx = h_values.array().log();
  const Eigen::ArrayXd ly = errors.array().log();
  const Eigen::ArrayXd cx = lx - lx.mean();
  const double sxx = cx.square().sum();
  if (!(sxx > 0.0)) throw argument_error("order_fit: step sizes must not all be equal");
  return (cx * (ly - ly.mean())).sum() / sxx;
}

std::string metrics_to_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream out;
  out << "metric,value,n_a,n_b,param,seed\n";
  for (const auto& r : rows)
    out << r.metric << ',' << format_double(r.value) << ',' << r.n_a << ',' << r.n_b << ','
        << format_double(r.param) << ',' << r.seed << '\n';
  return out.str();
}

}  // namespace tcd
