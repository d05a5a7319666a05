#include "tcd/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace tcd {

SamplerMode parse_sampler_mode(const std::string& name) {
  if (name == "multistep_consistency") return SamplerMode::multistep_consistency;
  if (name == "sss") return SamplerMode::sss;
  if (name == "ode_solver") return SamplerMode::ode_solver;
  throw argument_error("unknown sampler mode '" + name + "' (expected multistep_consistency, sss or ode_solver)");
}

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::multistep_consistency: return "multistep_consistency";
    case SamplerMode::sss: return "sss";
    case SamplerMode::ode_solver: return "ode_solver";
  }
  return "?";
}

void SamplerConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw config_error("gamma: must lie in [0, 1], got " + std::to_string(gamma));
  if (grid.count() < 1) throw config_error("grid: must contain at least one time");
  for (Eigen::Index i = 1; i < grid.count(); ++i)
    if (!(grid.points(i) < grid.points(i - 1))) throw config_error("grid: times must be strictly decreasing");
  if (n_samples < 0) throw config_error("n_samples: must be non-negative");
}

double gamma_to_endpoint(double gamma, double tau_next, double t_min) {
  return std::max(t_min, (1.0 - gamma) * tau_next);
}

PointSet diffuse(const NoiseSchedule& schedule, const PointSet& x, double s_prime, double s, Rng& rng) {
  const double a_prime = schedule.alpha(s_prime);
  const double a_s = schedule.alpha(s);
  if (a_prime < a_s)
    throw config_error("sampler: alpha at the denoise endpoint (" + std::to_string(a_prime) +
                       ") is below alpha at the next grid time (" + std::to_string(a_s) + "), grid is ill-ordered");
  const double ratio = a_s / a_prime;
  const double noise = std::sqrt(1.0 - ratio * ratio);
  return ratio * x + noise * rng.normal_matrix(x.rows(), x.cols());
}

namespace {

PointSet prior_draw(Eigen::Index dim, const SamplerConfig& cfg, Rng& rng) {
  return rng.normal_matrix(dim, cfg.n_samples);
}

Conditioning sampler_condition(const SamplerConfig& cfg, Eigen::Index n) {
  if (cfg.label == null_label) return {};
  return Conditioning::uniform(cfg.label, n);
}

// Denoise from t to s; an endpoint at t_min is read as the origin itself.
PointSet denoise_step(const TcfParameterization& tcf, const PointSet& x, double t, double s,
                      const Conditioning& cond) {
  if (s <= tcf.schedule().t_min()) return denoise_to_origin(tcf, x, t, cond);
  return apply(tcf, x, t, s, cond);
}

// Transition kernel from s_prime to s, taken from the origin (alpha = 1) when s_prime is t_min.
PointSet renoise(const NoiseSchedule& sch, const PointSet& x, double s_prime, double s, Rng& rng) {
  if (s_prime > sch.t_min()) return diffuse(sch, x, s_prime, s, rng);
  const double ratio = sch.alpha(s);
  const double noise = sch.sigma(s);
  return ratio * x + noise * rng.normal_matrix(x.rows(), x.cols());
}

}  // namespace

PointSet sss_sample_from(const TcfParameterization& tcf, const SamplerConfig& cfg, const PointSet& x_start, Rng& rng) {
  cfg.validate();
  const auto& sch = tcf.schedule();
  const Conditioning cond = sampler_condition(cfg, x_start.cols());
  const Vec& tau = cfg.grid.points;
  PointSet x = x_start;
  for (Eigen::Index n = 0; n + 1 < tau.size(); ++n) {
    const double s_prime = gamma_to_endpoint(cfg.gamma, tau(n + 1), sch.t_min());
    x = denoise_step(tcf, x, tau(n), s_prime, cond);
    x = renoise(sch, x, s_prime, tau(n + 1), rng);
  }
  return denoise_to_origin(tcf, x, tau(tau.size() - 1), cond);
}

PointSet sss_sample(const TcfParameterization& tcf, const SamplerConfig& cfg, Rng& rng) {
  const PointSet x_start = prior_draw(tcf.denoiser().dim(), cfg, rng);
  return sss_sample_from(tcf, cfg, x_start, rng);
}

PointSet multistep_consistency_sample_from(const TcfParameterization& tcf, const SamplerConfig& cfg,
                                           const PointSet& x_start, Rng& rng) {
  cfg.validate();
  const auto& sch = tcf.schedule();
  const Conditioning cond = sampler_condition(cfg, x_start.cols());
  const Vec& tau = cfg.grid.points;
  PointSet x = x_start;
  for (Eigen::Index n = 0; n + 1 < tau.size(); ++n) {
    const PointSet x0 = denoise_to_origin(tcf, x, tau(n), cond);
    x = renoise(sch, x0, sch.t_min(), tau(n + 1), rng);
  }
  return denoise_to_origin(tcf, x, tau(tau.size() - 1), cond);
}

PointSet multistep_consistency_sample(const TcfParameterization& tcf, const SamplerConfig& cfg, Rng& rng) {
  const PointSet x_start = prior_draw(tcf.denoiser().dim(), cfg, rng);
  return multistep_consistency_sample_from(tcf, cfg, x_start, rng);
}

PointSet ode_solver_sample_from(const Denoiser& denoiser, SolverKind kind, const SamplerConfig& cfg,
                                const PointSet& x_start) {
  cfg.validate();
  const Conditioning cond = sampler_condition(cfg, x_start.cols());
  const Vec& tau = cfg.grid.points;
  PointSet x = x_start;
  for (Eigen::Index n = 0; n + 1 < tau.size(); ++n)
    x = solver_step(kind, denoiser, x, constant_times(tau(n), x.cols()), constant_times(tau(n + 1), x.cols()), cond);
  // Final step to the origin: every solver's limit there is the data prediction.
  return guided_x0(denoiser, x, constant_times(tau(tau.size() - 1), x.cols()), Vec(), cond);
}

PointSet ode_solver_sample(const Denoiser& denoiser, SolverKind kind, const SamplerConfig& cfg, Rng& rng) {
  const PointSet x_start = prior_draw(denoiser.dim(), cfg, rng);
  return ode_solver_sample_from(denoiser, kind, cfg, x_start);
}

}  // namespace tcd
