#pragma once

#include <optional>
#include <vector>

#include "tcd/core.hpp"
#include "tcd/denoiser.hpp"
#include "tcd/schedule.hpp"

namespace tcd {

/// Variance used to stand in for a point mass. Small enough that the
/// posterior mean differs from the atom by far less than 1e-12 at t_min.
inline constexpr double point_mass_variance = 1e-20;

struct MixtureComponent {
  double weight;
  Vec mean;
  Vec var;  ///< per-coordinate variance (diagonal covariance)
  std::optional<Label> label;
};

/// Diagonal-covariance Gaussian mixture with closed-form perturbed marginals.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<MixtureComponent> components);

  static GaussianMixture standard_normal(Eigen::Index dim);
  static GaussianMixture point_mass(const Vec& mean);
  /// `modes` isotropic components evenly spaced on a circle in the plane.
  static GaussianMixture ring(int modes, double radius, double stddev, bool labeled = false);

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<MixtureComponent>& components() const { return components_; }
  const MixtureComponent& component(std::size_t i) const { return components_[i]; }

  bool has_labels() const { return has_labels_; }
  /// One past the largest component label (0 when unlabeled).
  int num_classes() const { return num_classes_; }
  bool has_label(Label label) const;

 private:
  std::vector<MixtureComponent> components_;
  Eigen::Index dim_ = 0;
  bool has_labels_ = false;
  int num_classes_ = 0;
};

struct ReferenceFlowConfig {
  int steps = 1000;  ///< fourth-order Runge-Kutta sub-steps, at least 100
};

/// log p_t(x) of the perturbed mixture N(alpha mu_i, alpha^2 var_i + sigma^2).
double marginal_logpdf(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t,
                       Label label = null_label);

/// grad_x log p_t(x).
Vec score(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t,
          Label label = null_label);

struct Posterior {
  Vec x0_hat;
  Vec eps_hat;
};

/// E[x0 | x_t = x] and the matching noise estimate; a label restricts the
/// prior to that class's components.
Posterior denoise_oracle(const GaussianMixture& gmm, const NoiseSchedule& schedule, const Vec& x, double t,
                         Label label = null_label);

/// Batched posterior mean expressed through (alpha, sigma) directly.
PointSet posterior_mean(const GaussianMixture& gmm, double alpha, double sigma, const PointSet& x,
                        std::span<const Label> labels);

/// Reference PF-ODE solution from t_from to t_to. The ODE is integrated in
/// log-SNR, dx/dlambda = alpha (x0_hat - alpha x), with RK4 at cfg.steps
/// uniform sub-steps. A label conditions the flow on that class.
PointSet exact_flow(const GaussianMixture& gmm, const NoiseSchedule& schedule, const PointSet& x,
                    double t_from, double t_to, const ReferenceFlowConfig& cfg = {},
                    Label label = null_label);

struct LabeledPoints {
  PointSet points;
  std::vector<Label> labels;  ///< empty when the mixture is unlabeled
};

LabeledPoints sample_data(const GaussianMixture& gmm, Eigen::Index n, Rng& rng);

/// Component index whose mean is closest (Euclidean) to each point.
std::vector<std::size_t> nearest_component(const GaussianMixture& gmm, const PointSet& x);

/// The exact posterior-mean denoiser as a Denoiser.
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(GaussianMixture gmm, NoiseSchedule schedule)
      : Denoiser(schedule), gmm_(std::move(gmm)) {}

  Eigen::Index dim() const override { return gmm_.dim(); }
  bool takes_label() const override { return gmm_.has_labels(); }

  PointSet predict_eps(const PointSet& x, const Vec& t, const Vec& end_time,
                       std::span<const Label> labels) const override;
  PointSet predict_x0(const PointSet& x, const Vec& t, const Vec& end_time,
                      std::span<const Label> labels) const override;

  const GaussianMixture& mixture() const { return gmm_; }

 private:
  GaussianMixture gmm_;
};

}  // namespace tcd
