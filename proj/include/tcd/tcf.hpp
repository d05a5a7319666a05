#pragma once

#include <string>

#include "tcd/core.hpp"
#include "tcd/denoiser.hpp"
#include "tcd/oracle.hpp"

namespace tcd {

enum class TcfOrder { tcf1, tcf2, tcfsplus };

TcfOrder parse_tcf_order(const std::string& name);
std::string to_string(TcfOrder order);

/// Trajectory consistency function f^{->s}(x_t, t): a denoiser wrapped in the
/// semi-linear exponential-integrator map from time t to any earlier time s.
///
///   tcf1:     (sigma_s/sigma_t) x - alpha_s (e^{-h} - 1) x0_hat(x, t)
///   tcf2:     (sigma_s/sigma_t) x - alpha_s (e^{-h} - 1)
///               [(1 - 1/(2r)) x0_hat(x, t) + 1/(2r) x0_hat(x_u, u)]
///   tcfsplus: (sigma_s/sigma_t) x - alpha_s (e^{-h} - 1) F(x, t, s)
///
/// with h = lambda_s - lambda_t, u the log-SNR midpoint, r = (lambda_u - lambda_t)/h
/// and x_u the tcf1 jump from t to u. Every order maps (x, s, s) to x.
class TcfParameterization {
 public:
  TcfParameterization(TcfOrder order, const Denoiser& denoiser);

  TcfOrder order() const { return order_; }
  const Denoiser& denoiser() const { return *denoiser_; }
  const NoiseSchedule& schedule() const { return denoiser_->schedule(); }

 private:
  TcfOrder order_;
  const Denoiser* denoiser_;
};

/// Per-point coefficients of the TCF map. For tcf1/tcfsplus only `ratio` and
/// `weight_t` are used (f = ratio x + weight_t x0_hat); tcf2 adds the midpoint
/// jump x_u = ratio_u x + coef_u x0_hat(x, t) and f gains weight_u x0_hat(x_u, u).
struct TcfCoefficients {
  Vec ratio;     ///< sigma_s / sigma_t
  Vec weight_t;  ///< multiplier of x0_hat(x, t)
  Vec u;
  Vec ratio_u;
  Vec coef_u;
  Vec weight_u;  ///< multiplier of x0_hat(x_u, u)
  std::vector<bool> identity;  ///< s == t: output is x exactly
};

TcfCoefficients tcf_coefficients(TcfOrder order, const NoiseSchedule& schedule, const Vec& t, const Vec& s);

/// f^{->s}(x, t) per point. Guidance-free: `cond` may carry labels only.
PointSet apply(const TcfParameterization& tcf, const PointSet& x, const Vec& t, const Vec& s,
               const Conditioning& cond = {});

inline PointSet apply(const TcfParameterization& tcf, const PointSet& x, double t, double s,
                      const Conditioning& cond = {}) {
  return apply(tcf, x, constant_times(t, x.cols()), constant_times(s, x.cols()), cond);
}

/// The map's limit as s reaches the data end (alpha_s = 1, sigma_s = 0): the
/// data prediction it carries. tcf1/tcfsplus give x0_hat(x, t) (the end time
/// fed to tcfsplus is t_min); tcf2 gives the normalised pair weighting with
/// the midpoint taken between t and t_min.
PointSet denoise_to_origin(const TcfParameterization& tcf, const PointSet& x, const Vec& t,
                           const Conditioning& cond = {});
inline PointSet denoise_to_origin(const TcfParameterization& tcf, const PointSet& x, double t,
                                  const Conditioning& cond = {}) {
  return denoise_to_origin(tcf, x, constant_times(t, x.cols()), cond);
}

/// ||apply(x, t, s) - exact_flow(x, t, s)||_2 over all points, for an oracle-backed TCF.
double local_error(const TcfParameterization& tcf, const GaussianMixture& gmm, const PointSet& x, double t,
                   double s, const ReferenceFlowConfig& flow = {});

}  // namespace tcd
