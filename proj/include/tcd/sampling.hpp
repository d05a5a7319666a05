#pragma once

#include <string>

#include "tcd/core.hpp"
#include "tcd/denoiser.hpp"
#include "tcd/schedule.hpp"
#include "tcd/solvers.hpp"
#include "tcd/tcf.hpp"

namespace tcd {

enum class SamplerMode { multistep_consistency, sss, ode_solver };

SamplerMode parse_sampler_mode(const std::string& name);
std::string to_string(SamplerMode mode);

struct SamplerConfig {
  TimeGrid grid;  ///< tau_1 > ... > tau_N
  double gamma = 0.2;
  SamplerMode mode = SamplerMode::sss;
  SolverKind solver = SolverKind::ddim;  ///< used by ode_solver mode
  Eigen::Index n_samples = 1000;
  Label label = null_label;
  std::uint64_t seed = 0;

  /// Throws config_error naming the offending field.
  void validate() const;
};

/// Denoise endpoint s' = max(t_min, (1 - gamma) tau_next).
double gamma_to_endpoint(double gamma, double tau_next, double t_min);

/// VP transition kernel from s' to s (s >= s'): (alpha_s / alpha_s') x + sqrt(1 - alpha_s^2 / alpha_s'^2) z.
PointSet diffuse(const NoiseSchedule& schedule, const PointSet& x, double s_prime, double s, Rng& rng);

/// Strategic stochastic sampling from prior noise drawn from `rng`. An endpoint
/// s' at t_min is treated as the origin (denoise_to_origin, kernel with alpha = 1),
/// and the last step always reads out the data prediction.
PointSet sss_sample(const TcfParameterization& tcf, const SamplerConfig& cfg, Rng& rng);
/// Same, starting from the given x_{tau_1}; `rng` then only feeds the diffuse sub-steps.
PointSet sss_sample_from(const TcfParameterization& tcf, const SamplerConfig& cfg, const PointSet& x_start, Rng& rng);

/// Multistep consistency sampling: denoise to the origin, re-diffuse to tau_{n+1}.
PointSet multistep_consistency_sample(const TcfParameterization& tcf, const SamplerConfig& cfg, Rng& rng);
PointSet multistep_consistency_sample_from(const TcfParameterization& tcf, const SamplerConfig& cfg,
                                           const PointSet& x_start, Rng& rng);

/// Deterministic PF-ODE integration along the grid, then the data prediction at the last grid time.
PointSet ode_solver_sample(const Denoiser& denoiser, SolverKind kind, const SamplerConfig& cfg, Rng& rng);
PointSet ode_solver_sample_from(const Denoiser& denoiser, SolverKind kind, const SamplerConfig& cfg,
                                const PointSet& x_start);

}  // namespace tcd
