#pragma once

#include <string>

#include "tcd/core.hpp"
#include "tcd/denoiser.hpp"

namespace tcd {

enum class SolverKind { euler, ddim, dpmpp_2s };

SolverKind parse_solver_kind(const std::string& name);
std::string to_string(SolverKind kind);

/// Denoiser evaluations spent by one step of `kind`.
int evaluations_per_step(SolverKind kind);

// One-step PF-ODE updates from t down to s (per point). Columns with s == t
// are returned unchanged; s > t is an argument error. With `cond.guided()`,
// the epsilon prediction is the classifier-free-guidance combination.

/// x_s = alpha_s x0_hat + sigma_s eps_hat.
PointSet ddim_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                   const Conditioning& cond = {});

/// Second-order single-step data-prediction update through the log-SNR midpoint.
PointSet dpmpp_2s_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                       const Conditioning& cond = {});

/// Explicit Euler in t on dx/dt = alpha'(t) (x0_hat - alpha_t x) / sigma_t^2.
PointSet euler_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                    const Conditioning& cond = {});

PointSet solver_step(SolverKind kind, const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                     const Conditioning& cond = {});

/// k equal sub-steps (uniform in t) of `kind` from t_from to t_to.
PointSet solve_k_steps(SolverKind kind, const Denoiser& denoiser, const PointSet& x, const Vec& t_from,
                       const Vec& t_to, int k, const Conditioning& cond = {});

// Shared-time conveniences.
inline PointSet ddim_step(const Denoiser& d, const PointSet& x, double t, double s, const Conditioning& c = {}) {
  return ddim_step(d, x, constant_times(t, x.cols()), constant_times(s, x.cols()), c);
}
inline PointSet dpmpp_2s_step(const Denoiser& d, const PointSet& x, double t, double s,
                              const Conditioning& c = {}) {
  return dpmpp_2s_step(d, x, constant_times(t, x.cols()), constant_times(s, x.cols()), c);
}
inline PointSet euler_step(const Denoiser& d, const PointSet& x, double t, double s, const Conditioning& c = {}) {
  return euler_step(d, x, constant_times(t, x.cols()), constant_times(s, x.cols()), c);
}
inline PointSet solver_step(SolverKind kind, const Denoiser& d, const PointSet& x, double t, double s,
                            const Conditioning& c = {}) {
  return solver_step(kind, d, x, constant_times(t, x.cols()), constant_times(s, x.cols()), c);
}
inline PointSet solve_k_steps(SolverKind kind, const Denoiser& d, const PointSet& x, double t_from, double t_to,
                              int k, const Conditioning& c = {}) {
  return solve_k_steps(kind, d, x, constant_times(t_from, x.cols()), constant_times(t_to, x.cols()), k, c);
}

}  // namespace tcd
