#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcd/core.hpp"
#include "tcd/denoiser.hpp"
#include "tcd/schedule.hpp"

namespace tcd {

struct ModelConfig {
  Eigen::Index data_dim = 2;
  Eigen::Index hidden_width = 128;
  Eigen::Index depth = 3;  ///< number of hidden SiLU layers
  Eigen::Index embed_dim = 64;
  bool takes_end_time = false;
  bool takes_label = false;
  int num_classes = 0;  ///< class ids 0..num_classes-1; one extra slot holds the null label
  /// Output eps = sigma_t x + alpha_t F(x, t, ...) instead of eps = F(x, t, ...).
  bool velocity_head = false;

  bool operator==(const ModelConfig&) const = default;
};

/// One named slice of the flat parameter vector.
struct ParameterBlock {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index offset;
  Eigen::Index size() const { return rows * cols; }
};

/// Intermediate values kept by a forward pass for the reverse sweep.
struct ForwardCache {
  PointSet input;
  Mat embed_t;
  Mat embed_s;
  Mat pre_s;  // hidden pre-activation of the end-time projection
  std::vector<Eigen::Index> label_slots;
  std::vector<Mat> pre;
  std::vector<Mat> act;
  Vec head_scale;  // velocity head: alpha_t per point
  Vec skip_scale;  // velocity head: sigma_t per point
};

/// Epsilon-prediction MLP. Sinusoidal embeddings of t (and s) are projected to
/// the hidden width, summed with an optional label embedding, and added to
/// every hidden pre-activation. All parameters live in one flat vector in
/// declaration order, which is also the checkpoint order.
class DenoiserModel {
 public:
  explicit DenoiserModel(ModelConfig cfg);

  /// Random initialisation from `seed`; `zero_head` zeroes the output layer so
  /// the untrained model predicts eps = 0.
  static DenoiserModel initialize(const ModelConfig& cfg, std::uint64_t seed, bool zero_head);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }

  Eigen::Map<Mat> block(std::size_t i) { return {params_.data() + blocks_[i].offset, blocks_[i].rows, blocks_[i].cols}; }
  Eigen::Map<const Mat> block(std::size_t i) const {
    return {params_.data() + blocks_[i].offset, blocks_[i].rows, blocks_[i].cols};
  }
  std::size_t block_index(const std::string& name) const;

  PointSet forward(const PointSet& x, const Vec& t, const Vec& end_time, std::span<const Label> labels) const;
  PointSet forward(const PointSet& x, const Vec& t, const Vec& end_time, std::span<const Label> labels,
                   ForwardCache& cache) const;

  /// Reverse sweep for d(loss)/d(output) = `d_out`. Returns the flat parameter
  /// gradient; writes d(loss)/d(input) to `d_input` when non-null.
  Vec backward(const ForwardCache& cache, const PointSet& d_out, PointSet* d_input = nullptr) const;

 private:
  ModelConfig cfg_;
  std::vector<ParameterBlock> blocks_;
  Vec params_;
};

/// Sinusoidal embedding of times (scaled by 1000) with `dim` rows, sin half first.
Mat timestep_embedding(const Vec& t, Eigen::Index dim);

/// A DenoiserModel viewed through a schedule. Holds a reference; the model must outlive it.
class NetworkDenoiser final : public Denoiser {
 public:
  NetworkDenoiser(const DenoiserModel& model, NoiseSchedule schedule) : Denoiser(schedule), model_(&model) {}

  Eigen::Index dim() const override { return model_->config().data_dim; }
  bool takes_end_time() const override { return model_->config().takes_end_time; }
  bool takes_label() const override { return model_->config().takes_label; }

  PointSet predict_eps(const PointSet& x, const Vec& t, const Vec& end_time,
                       std::span<const Label> labels) const override {
    return model_->forward(x, t, end_time, labels);
  }

  const DenoiserModel& model() const { return *model_; }

 private:
  const DenoiserModel* model_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig cfg;
  Vec m;
  Vec v;
  std::int64_t step = 0;

  static OptimizerState for_model(const DenoiserModel& model, AdamWConfig cfg);
};

/// Decoupled-weight-decay Adam update of `model` in place.
void opt_step(OptimizerState& state, DenoiserModel& model, const Vec& gradient);

struct EmaState {
  Vec shadow;
  double decay = 0.95;

  static EmaState for_model(const DenoiserModel& model, double decay) { return {model.parameters(), decay}; }
};

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(EmaState& ema, const DenoiserModel& model);

/// Mean squared error (1/B) sum_j ||forward(x_j) - target_j||^2 and its parameter gradient.
struct LossAndGradient {
  double loss;
  Vec gradient;
};
LossAndGradient regression_loss_gradients(const DenoiserModel& model, const PointSet& x, const Vec& t,
                                          const Vec& end_time, std::span<const Label> labels,
                                          const PointSet& target);

// Checkpoint file: "TCDL", u32 version, u32 dims header, u64 parameter count,
// u32 EMA flag, f64 EMA decay, then f64 parameters and (optionally) f64 EMA
// shadow, all little-endian.
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  DenoiserModel model;
  std::optional<EmaState> ema;
};

void checkpoint_save(const DenoiserModel& model, const EmaState* ema, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);
/// Loads and checks the stored architecture against `expected`.
Checkpoint checkpoint_load(const std::string& path, const ModelConfig& expected);

}  // namespace tcd
