#include "tcd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tcd {

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw argument_error("mixture needs at least one component");
  dim_ = components_.front().mean.size();
  if (dim_ < 1) throw argument_error("mixture dimension must be positive");
  double total = 0.0;
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    const std::string where = "mixture component " + std::to_string(i);
    if (c.mean.size() != dim_ || c.var.size() != dim_)
      throw argument_error(where + ": mean/var dimension differs from " + std::to_string(dim_));
    if (!(c.weight > 0.0)) throw argument_error(where + ": weight must be positive");
    if (!(c.var.array() > 0.0).all()) throw argument_error(where + ": variances must be strictly positive");
    total += c.weight;
    if (c.label) {
      if (*c.label < 0) throw argument_error(where + ": labels must be non-negative");
      num_classes_ = std::max(num_classes_, *c.label + 1);
      ++labeled;
    }
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw argument_error("mixture weights sum to " + std::to_string(total) + ", expected 1");
  if (labeled != 0 && labeled != components_.size())
    throw argument_error("either every mixture component carries a label or none does");
  has_labels_ = labeled != 0;
}

GaussianMixture GaussianMixture::standard_normal(Eigen::Index dim) {
  return GaussianMixture({{1.0, Vec::Zero(dim), Vec::Ones(dim), std::nullopt}});
}

GaussianMixture GaussianMixture::point_mass(const Vec& mean) {
  return GaussianMixture({{1.0, mean, Vec::Constant(mean.size(), point_mass_variance), std::nullopt}});
}

GaussianMixture GaussianMixture::ring(int modes, double radius, double stddev, bool labeled) {
  if (modes < 1) throw argument_error("ring needs at least one mode");
  std::vector<MixtureComponent> comps;
  for (int i = 0; i < modes; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / modes;
    Vec mean(2);
    mean << radius * std::cos(angle), radius * std::sin(angle);
    comps.push_back({1.0 / modes, mean, Vec::Constant(2, stddev * stddev),
                     labeled ? std::optional<Label>(i) : std::nullopt});
  }
  // Renormalise so the 1e-12 sum check holds for any mode count.
  double total = 0.0;
  for (const auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;
  return GaussianMixture(std::move(comps));
}

bool GaussianMixture::has_label(Label label) const {
  if (label == null_label) return true;
  return std::any_of(components_.begin(), components_.end(),
                     [label](const MixtureComponent& c) { return c.label && *c.label == label; });
}

namespace {

void require_label(const GaussianMixture& gmm, Label label) {
  if (label == null_label) return;
  if (!gmm.has_labels()) throw argument_error("label " + std::to_string(label) + " given for an unlabeled mixture");
  if (!gmm.has_label(label)) throw argument_error("unknown class label " + std::to_string(label));
}

bool component_active(const MixtureComponent& c, Label label) {
  return label == null_label || (c.label && *c.label == label);
}

/// Log joint weights log(w_i N(x; alpha mu_i, alpha^2 var_i + sigma^2)) for active components.
struct Responsibilities {
  std::vector<double> log_joint;  // -inf for inactive components
  double log_norm;
};

Responsibilities responsibilities(const GaussianMixture& gmm, double alpha, double sigma,
                                  const Eigen::Ref<const Vec>& x, Label label) {
  Responsibilities r;
  r.log_joint.resize(gmm.size(), -std::numeric_limits<double>::infinity());
  const double s2 = sigma * sigma;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gmm.size(); ++i) {
    const auto& c = gmm.component(i);
    if (!component_active(c, label)) continue;
    const Eigen::ArrayXd tv = alpha * alpha * c.var.array() + s2;
    const Eigen::ArrayXd diff = x.array() - alpha * c.mean.array();
    const double quad = (diff.square() / tv).sum();
    const double logdet = (2.0 * std::numbers::pi * tv).log().sum();
    r.log_joint[i] = std::log(c.weight) - 0.5 * (quad + logdet);
    best = std::max(best, r.log_joint[i]);
  }
  double acc = 0.0;
  for (double lj : r.log_joint)
    if (std::isfinite(lj)) acc += std::exp(lj - best);
  r.log_norm = best + std::log(acc);
  return r;
}

Vec posterior_mean_column(const GaussianMixture& gmm, double alpha, double sigma,
                          const Eigen::Ref<const Vec>& x, Label label) {
  const auto r = responsibilities(gmm, alpha, sigma, x, label);
  const double s2 = sigma * sigma;
  Vec mean = Vec::Zero(x.size());
  for (std::size_t i = 0; i < gmm.size(); ++i) {
    if (!std::isfinite(r.log_joint[i])) continue;
    const double resp = std::exp(r.log_joint[i] - r.log_norm);
    const auto& c = gmm.component(i);
    const Eigen::ArrayXd gain = alpha * c.var.array() / (alpha * alpha * c.var.array() + s2);
    mean.array() += resp * (c.mean.array() + gain * (x.array() - alpha * c.mean.array()));
  }
  return mean;
}

}  // namespace

double marginal_logpdf(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t,
                       Label label) {
  require_label(gmm, label);
  const auto v = schedule.evaluate(t);
  return responsibilities(gmm, v.alpha, v.sigma, x, label).log_norm;
}

Vec score(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t, Label label) {
  require_label(gmm, label);
  const auto v = schedule.evaluate(t);
  const auto r = responsibilities(gmm, v.alpha, v.sigma, x, label);
  Vec g = Vec::Zero(x.size());
  for (std::size_t i = 0; i < gmm.size(); ++i) {
    if (!std::isfinite(r.log_joint[i])) continue;
    const double resp = std::exp(r.log_joint[i] - r.log_norm);
    const auto& c = gmm.component(i);
    const Eigen::ArrayXd tv = v.alpha * v.alpha * c.var.array() + v.sigma * v.sigma;
    g.array() -= resp * (x.array() - v.alpha * c.mean.array()) / tv;
  }
  return g;
}

Posterior denoise_oracle(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t,
                         Label label) {
  require_label(gmm, label);
  if (x.size() != gmm.dim()) throw argument_error("point dimension differs from mixture dimension");
  const auto v = schedule.evaluate(t);
  Posterior p;
  p.x0_hat = posterior_mean_column(gmm, v.alpha, v.sigma, x, label);
  p.eps_hat = (x - v.alpha * p.x0_hat) / v.sigma;
  return p;
}

PointSet posterior_mean(const GaussianMixture& gmm, double alpha, double sigma, const PointSet& x,
                        std::span<const Label> labels) {
  if (x.rows() != gmm.dim()) throw argument_error("point dimension differs from mixture dimension");
  PointSet out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Label label = labels.empty() ? null_label : labels[static_cast<std::size_t>(j)];
    require_label(gmm, label);
    out.col(j) = posterior_mean_column(gmm, alpha, sigma, x.col(j), label);
  }
  return out;
}

PointSet exact_flow(const GaussianMixture& gmm, const NoiseSchedule& schedule, const PointSet& x,
                    double t_from, double t_to, const ReferenceFlowConfig& cfg, Label label) {
  if (cfg.steps < 100) throw argument_error("reference flow needs at least 100 steps");
  require_label(gmm, label);
  const double lam_from = schedule.lambda(t_from);
  const double lam_to = schedule.lambda(t_to);
  if (t_from == t_to) return x;
  const std::vector<Label> labels(static_cast<std::size_t>(x.cols()), label);

  // dx/dlambda = alpha (x0_hat - alpha x): the VP probability-flow ODE
  // dx/dt = f(t) x - g(t)^2 score / 2 rewritten in log-SNR via Tweedie.
  auto velocity = [&](double lam, const PointSet& y) -> PointSet {
    const double a = alpha_of_lambda(lam);
    const double s = sigma_of_lambda(lam);
    return a * (posterior_mean(gmm, a, s, y, labels) - a * y);
  };

  const double h = (lam_to - lam_from) / cfg.steps;
  PointSet y = x;
  for (int i = 0; i < cfg.steps; ++i) {
    const double lam = lam_from + i * h;
    const PointSet k1 = velocity(lam, y);
    const PointSet k2 = velocity(lam + 0.5 * h, y + 0.5 * h * k1);
    const PointSet k3 = velocity(lam + 0.5 * h, y + 0.5 * h * k2);
    const PointSet k4 = velocity(lam + h, y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

LabeledPoints sample_data(const GaussianMixture& gmm, Eigen::Index n, Rng& rng) {
  LabeledPoints out;
  out.points.resize(gmm.dim(), n);
  if (gmm.has_labels()) out.labels.resize(static_cast<std::size_t>(n));
  std::vector<double> weights;
  for (const auto& c : gmm.components()) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& c = gmm.component(pick(rng.engine()));
    for (Eigen::Index d = 0; d < gmm.dim(); ++d) out.points(d, j) = c.mean(d) + std::sqrt(c.var(d)) * rng.normal();
    if (c.label) out.labels[static_cast<std::size_t>(j)] = *c.label;
  }
  return out;
}

std::vector<std::size_t> nearest_component(const GaussianMixture& gmm, const PointSet& x) {
  std::vector<std::size_t> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < gmm.size(); ++i) {
      const double d = (x.col(j) - gmm.component(i).mean).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(j)] = i;
      }
    }
  }
  return out;
}

PointSet OracleDenoiser::predict_x0(const PointSet& x, const Vec& t, const Vec& /*end_time*/,
                                    std::span<const Label> labels) const {
  if (x.rows() != gmm_.dim()) throw argument_error("point dimension differs from mixture dimension");
  if (t.size() != x.cols()) throw argument_error("one time per point required");
  PointSet out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto v = schedule().evaluate(t(j));
    const Label label = labels.empty() ? null_label : labels[static_cast<std::size_t>(j)];
    require_label(gmm_, label);
    out.col(j) = posterior_mean_column(gmm_, v.alpha, v.sigma, x.col(j), label);
  }
  return out;
}

PointSet OracleDenoiser::predict_eps(const PointSet& x, const Vec& t, const Vec& end_time,
                                     std::span<const Label> labels) const {
  return eps_from_x0(schedule(), x, t, predict_x0(x, t, end_time, labels));
}

}  // namespace tcd
