#include "tcd/denoiser.hpp"

namespace tcd {

std::vector<Label> Conditioning::expanded(Eigen::Index n) const {
  if (labels.empty()) return std::vector<Label>(static_cast<std::size_t>(n), null_label);
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw argument_error("conditioning carries " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " points");
  return labels;
}

Conditioning Conditioning::slice(Eigen::Index begin, Eigen::Index n) const {
  Conditioning out;
  if (!labels.empty())
    out.labels.assign(labels.begin() + begin, labels.begin() + begin + n);
  if (guided()) out.guidance = guidance.segment(begin, n);
  return out;
}

PointSet Denoiser::predict_x0(const PointSet& x, const Vec& t, const Vec& end_time,
                              std::span<const Label> labels) const {
  return x0_from_eps(schedule_, x, t, predict_eps(x, t, end_time, labels));
}

Vec cfg_combine(const Vec& eps_cond, const Vec& eps_uncond, double w) {
  if (eps_cond.size() != eps_uncond.size())
    throw argument_error("cfg_combine: prediction lengths differ (" + std::to_string(eps_cond.size()) +
                         " vs " + std::to_string(eps_uncond.size()) + ")");
  return (1.0 + w) * eps_cond - w * eps_uncond;
}

PointSet cfg_combine(const PointSet& eps_cond, const PointSet& eps_uncond, const Vec& w) {
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols())
    throw argument_error("cfg_combine: prediction shapes differ");
  if (w.size() != eps_cond.cols()) throw argument_error("cfg_combine: one guidance weight per point required");
  const Vec one_plus_w = w.array() + 1.0;
  return scale_columns(eps_cond, one_plus_w) - scale_columns(eps_uncond, w);
}

PointSet x0_from_eps(const NoiseSchedule& schedule, const PointSet& x, const Vec& t, const PointSet& eps) {
  const Vec inv_alpha = schedule.alpha(t).cwiseInverse();
  return scale_columns(x - scale_columns(eps, schedule.sigma(t)), inv_alpha);
}

PointSet eps_from_x0(const NoiseSchedule& schedule, const PointSet& x, const Vec& t, const PointSet& x0) {
  const Vec inv_sigma = schedule.sigma(t).cwiseInverse();
  return scale_columns(x - scale_columns(x0, schedule.alpha(t)), inv_sigma);
}

PointSet guided_eps(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& end_time,
                    const Conditioning& cond) {
  const auto labels = cond.expanded(x.cols());
  if (!cond.guided()) return denoiser.predict_eps(x, t, end_time, labels);
  const std::vector<Label> null_labels(labels.size(), null_label);
  const PointSet eps_cond = denoiser.predict_eps(x, t, end_time, labels);
  const PointSet eps_uncond = denoiser.predict_eps(x, t, end_time, null_labels);
  return cfg_combine(eps_cond, eps_uncond, cond.guidance);
}

PointSet guided_x0(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& end_time,
                   const Conditioning& cond) {
  if (!cond.guided()) return denoiser.predict_x0(x, t, end_time, cond.expanded(x.cols()));
  return x0_from_eps(denoiser.schedule(), x, t, guided_eps(denoiser, x, t, end_time, cond));
}

}  // namespace tcd
