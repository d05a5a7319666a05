#include "tcd/schedule.hpp"

#include <algorithm>
#include <sstream>

namespace tcd {

namespace {

constexpr double endpoint_slack = 1e-12;

}  // namespace

NoiseSchedule::NoiseSchedule(double t_min, double t_max) : t_min_(t_min), t_max_(t_max) {
  if (!(t_min > 0.0 && t_min < 0.5))
    throw argument_error("schedule t_min must lie in (0, 0.5), got " + std::to_string(t_min));
  if (!(t_max > 0.5 && t_max <= 1.0))
    throw argument_error("schedule t_max must lie in (0.5, 1], got " + std::to_string(t_max));
  // At t = 1 sigma = 1, alpha = 0 and lambda = -inf; keep the clamp strict.
  if (t_max >= 1.0) throw argument_error("schedule t_max = 1 makes log-SNR unbounded");
}

double NoiseSchedule::checked(double t) const {
  if (!(t >= t_min_ - endpoint_slack && t <= t_max_ + endpoint_slack)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "time " << t << " outside schedule range [" << t_min_ << ", " << t_max_ << "]";
    throw range_error(msg.str());
  }
  return std::clamp(t, t_min_, t_max_);
}

ScheduleValues NoiseSchedule::evaluate(double t) const {
  t = checked(t);
  return {cosine_alpha(t), cosine_sigma(t), cosine_lambda(t)};
}

double NoiseSchedule::t_of_lambda(double lam) const {
  const double lo = lambda_min();
  const double hi = lambda_max();
  const double slack = 1e-10 * (1.0 + std::abs(lam));
  if (!(lam >= lo - slack && lam <= hi + slack)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "log-SNR " << lam << " outside representable band [" << lo << ", " << hi << "]";
    throw range_error(msg.str());
  }
  return std::clamp(cosine_t_of_lambda(lam), t_min_, t_max_);
}

Vec NoiseSchedule::alpha(const Vec& t) const {
  return t.unaryExpr([this](double v) { return alpha(v); });
}

Vec NoiseSchedule::sigma(const Vec& t) const {
  return t.unaryExpr([this](double v) { return sigma(v); });
}

Vec NoiseSchedule::lambda(const Vec& t) const {
  return t.unaryExpr([this](double v) { return lambda(v); });
}

PointSet perturb(const NoiseSchedule& schedule, const PointSet& x0, double t, Rng& rng) {
  const auto v = schedule.evaluate(t);
  return v.alpha * x0 + v.sigma * rng.normal_matrix(x0.rows(), x0.cols());
}

PointSet perturb(const NoiseSchedule& schedule, const PointSet& x0, const Vec& t, Rng& rng) {
  if (t.size() != x0.cols()) throw argument_error("perturb: one time per point required");
  const Mat z = rng.normal_matrix(x0.rows(), x0.cols());
  return scale_columns(x0, schedule.alpha(t)) + scale_columns(z, schedule.sigma(t));
}

namespace {

// Point `desc` steps below t_max on the N-point training grid; the last one is t_min exactly.
double grid_time(const NoiseSchedule& schedule, Eigen::Index desc, Eigen::Index n_train) {
  if (desc == n_train - 1) return schedule.t_min();
  const double span = schedule.t_max() - schedule.t_min();
  return schedule.t_max() - span * static_cast<double>(desc) / static_cast<double>(n_train - 1);
}

}  // namespace

TimeGrid make_sample_grid(const NoiseSchedule& schedule, Eigen::Index n_train, Eigen::Index nfe) {
  if (nfe < 1) throw argument_error("NFE must be at least 1");
  if (n_train < 2) throw argument_error("training grid needs at least 2 points");
  if (nfe > n_train)
    throw argument_error("NFE (" + std::to_string(nfe) + ") exceeds training grid size (" +
                         std::to_string(n_train) + ")");
  TimeGrid grid{Vec(nfe)};
  for (Eigen::Index i = 0; i < nfe; ++i) grid.points(i) = grid_time(schedule, (i * n_train) / nfe, n_train);
  return grid;
}

Grids make_grids(const NoiseSchedule& schedule, Eigen::Index n_train, Eigen::Index nfe) {
  Grids grids;
  grids.sample = make_sample_grid(schedule, n_train, nfe);
  grids.train.points.resize(n_train);
  // Same arithmetic as the sample grid so that NFE = N_train reproduces it exactly.
  for (Eigen::Index i = 0; i < n_train; ++i) grids.train.points(i) = grid_time(schedule, n_train - 1 - i, n_train);
  return grids;
}

}  // namespace tcd
