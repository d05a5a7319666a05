#pragma once

#include <span>
#include <vector>

#include "tcd/core.hpp"
#include "tcd/schedule.hpp"

namespace tcd {

/// Per-point class labels and classifier-free-guidance weights for a batch.
struct Conditioning {
  std::vector<Label> labels;  ///< empty: null label for every point
  Vec guidance;               ///< empty: unguided; otherwise one weight per point

  static Conditioning none() { return {}; }
  static Conditioning uniform(Label label, Eigen::Index n) {
    return {std::vector<Label>(static_cast<std::size_t>(n), label), Vec()};
  }

  bool guided() const { return guidance.size() > 0; }
  Label label(Eigen::Index j) const {
    return labels.empty() ? null_label : labels[static_cast<std::size_t>(j)];
  }
  /// Labels expanded to `n` entries.
  std::vector<Label> expanded(Eigen::Index n) const;
  /// Columns `[begin, begin + n)` of this conditioning.
  Conditioning slice(Eigen::Index begin, Eigen::Index n) const;
};

/// An epsilon-prediction model over a fixed schedule: the oracle adapter, a
/// trained network, or anything else that maps (x_t, t[, s][, c]) to noise.
class Denoiser {
 public:
  explicit Denoiser(NoiseSchedule schedule) : schedule_(schedule) {}
  virtual ~Denoiser() = default;

  virtual Eigen::Index dim() const = 0;
  virtual bool takes_end_time() const { return false; }
  virtual bool takes_label() const { return false; }

  /// `end_time` is ignored (and may be empty) unless takes_end_time().
  virtual PointSet predict_eps(const PointSet& x, const Vec& t, const Vec& end_time,
                               std::span<const Label> labels) const = 0;

  /// Data prediction (x - sigma_t eps) / alpha_t; overridden where a closed form exists.
  virtual PointSet predict_x0(const PointSet& x, const Vec& t, const Vec& end_time,
                              std::span<const Label> labels) const;

  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  NoiseSchedule schedule_;
};

/// (1 + w) eps_cond - w eps_uncond.
Vec cfg_combine(const Vec& eps_cond, const Vec& eps_uncond, double w);

/// Column-wise guidance with one weight per point.
PointSet cfg_combine(const PointSet& eps_cond, const PointSet& eps_uncond, const Vec& w);

PointSet x0_from_eps(const NoiseSchedule& schedule, const PointSet& x, const Vec& t, const PointSet& eps);
PointSet eps_from_x0(const NoiseSchedule& schedule, const PointSet& x, const Vec& t, const PointSet& x0);

/// Epsilon prediction with classifier-free guidance applied when `cond.guided()`.
PointSet guided_eps(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& end_time,
                    const Conditioning& cond);

/// Data prediction matching guided_eps; unguided calls use the denoiser's own x0 path.
PointSet guided_x0(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& end_time,
                   const Conditioning& cond);

inline Vec constant_times(double t, Eigen::Index n) { return Vec::Constant(n, t); }

}  // namespace tcd
