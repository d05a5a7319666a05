#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tcd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Point sets are stored column-wise: one column per point, one row per coordinate.
using PointSet = Mat;

/// Class id attached to a point; `null_label` selects the unconditional (full mixture) case.
using Label = int;
inline constexpr Label null_label = -1;

struct range_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct argument_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Random source shared by every stochastic routine. Normal draws go through one
/// distribution object so that a copied Rng replays the identical stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  Mat normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat z(rows, cols);
    // Column-major fill keeps the draw order equal to point order.
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = normal();
    return z;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Scales column j of `m` by `coef[j]`.
template <typename Derived, typename CoefDerived>
auto scale_columns(const Eigen::MatrixBase<Derived>& m, const Eigen::MatrixBase<CoefDerived>& coef) {
  return (m.array().rowwise() * coef.transpose().array()).matrix();
}

}  // namespace tcd
