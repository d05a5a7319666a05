#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcd/core.hpp"
#include "tcd/model.hpp"
#include "tcd/oracle.hpp"
#include "tcd/schedule.hpp"
#include "tcd/solvers.hpp"
#include "tcd/tcf.hpp"

namespace tcd {

enum class TargetMode { stop_grad, ema };

struct GuidanceRange {
  double w_min = 0.0;
  double w_max = 4.0;
};

struct DistillConfig {
  TcfOrder order = TcfOrder::tcf1;
  int k = 20;          ///< skipping interval, in training-grid steps
  int n_train = 1000;  ///< training grid size N
  int batch = 256;
  double lr = 1e-3;
  bool cosine_lr = false;  ///< anneal lr to zero over `iters`
  double weight_decay = 0.01;
  int iters = 3000;
  TargetMode target_mode = TargetMode::stop_grad;
  double ema_decay = 0.95;
  std::optional<std::string> teacher_checkpoint;  ///< absent: analytic oracle teacher
  SolverKind teacher_solver = SolverKind::ddim;
  bool baseline_lcm = false;  ///< pin t_m to the grid origin (LCM objective)
  std::optional<GuidanceRange> guidance_range;  ///< present: guided distillation
  double condition_dropout = 0.0;  ///< guided runs: probability of replacing a label by the null label
  double loss_weight = 1.0;
  std::uint64_t seed = 0;
  ModelConfig model;

  /// Throws config_error naming the offending field.
  void validate() const;
};

struct TrainingRecord {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double t_start = 0.0;  ///< t_{n+k} of the first batch element
  double t_mid = 0.0;    ///< t_n
  double t_end = 0.0;    ///< t_m
  double wall_ms = 0.0;
};

struct training_error : std::runtime_error {
  training_error(const std::string& what, std::vector<TrainingRecord> recent)
      : std::runtime_error(what), records(std::move(recent)) {}
  std::vector<TrainingRecord> records;
};

/// One distillation minibatch: start points x_{t_{n+k}}, the three times per
/// point, the teacher's k-step estimate of x_{t_n}, and the student conditioning.
struct TrainingBatch {
  PointSet x_start;
  Vec t_start;
  Vec t_mid;
  Vec t_end;
  PointSet teacher_estimate;
  Conditioning cond;  ///< labels seen by the student and the target
  Vec guidance;       ///< teacher guidance weights (empty when unguided)
};

/// Draws data, grid indices n ~ U[1, N-k], m ~ U[1, n] (m = 1 for the LCM
/// baseline), perturbs to t_{n+k} and runs k teacher sub-steps to t_n.
TrainingBatch prepare_batch(const DistillConfig& cfg, const GaussianMixture& gmm, const Denoiser& teacher,
                            const TrainGrid& grid, Rng& rng, bool guided);

/// Mean (over the batch) squared distance between the student branch
/// f(x_{t_{n+k}}, t_{n+k}, t_m) and the target branch f(teacher_estimate, t_n, t_m).
double tcd_loss(const TcfParameterization& student, const TcfParameterization& target, const TrainingBatch& batch,
                double loss_weight = 1.0);

/// The target branch alone.
PointSet tcd_target(const TcfParameterization& target, const TrainingBatch& batch);

/// TCD loss of a network student against fixed `target` points, with the
/// exact parameter gradient of the student branch.
LossAndGradient tcd_loss_gradients(TcfOrder order, const DenoiserModel& student, const NoiseSchedule& schedule,
                                   const TrainingBatch& batch, const PointSet& target, double loss_weight = 1.0);

/// Owns the student, optimizer, EMA target, teacher and RNG for one run.
class Distiller {
 public:
  Distiller(DistillConfig cfg, GaussianMixture gmm, NoiseSchedule schedule);

  /// Unguided trajectory consistency distillation step.
  TrainingRecord tcd_train_step();
  /// Guided step: class-conditional data, per-point guidance weight for the teacher.
  TrainingRecord guided_tcd_train_step();
  /// Dispatches on whether cfg.guidance_range is set.
  TrainingRecord step();

  const DenoiserModel& student() const { return student_; }
  DenoiserModel& student() { return student_; }
  const std::optional<EmaState>& ema() const { return ema_; }
  /// Parameters used by the target branch (shadow under EMA, else the student's).
  DenoiserModel target_model() const;
  const Denoiser& teacher() const { return *teacher_; }
  const DistillConfig& config() const { return cfg_; }
  const TrainGrid& grid() const { return grid_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  Rng& rng() { return rng_; }

 private:
  TrainingRecord run_step(bool guided);

  DistillConfig cfg_;
  GaussianMixture gmm_;
  NoiseSchedule schedule_;
  TrainGrid grid_;
  std::unique_ptr<DenoiserModel> teacher_model_;
  std::unique_ptr<Denoiser> teacher_;
  DenoiserModel student_;
  OptimizerState opt_;
  std::optional<EmaState> ema_;
  Rng rng_;
  std::int64_t iteration_ = 0;
};

struct DistillResult {
  DenoiserModel student;
  std::optional<EmaState> ema;
  std::vector<TrainingRecord> records;
};

/// Runs cfg.iters steps. A failing step aborts with training_error holding the
/// last 10 records.
DistillResult run_distillation(const DistillConfig& cfg, const GaussianMixture& gmm, const NoiseSchedule& schedule,
                               bool record_wall_time = false);

/// Training log as CSV: `iter,loss,t_start,t_mid,t_end,wall_ms`.
std::string records_to_csv(const std::vector<TrainingRecord>& records);

struct TeacherConfig {
  ModelConfig model;
  int iters = 4000;
  int batch = 256;
  double lr = 1e-3;
  double condition_dropout = 0.1;
  std::uint64_t seed = 0;
};

/// Denoising score matching ||eps_theta(x_t, t, c) - z||^2 on mixture draws;
/// produces a network teacher for model-to-model distillation.
DenoiserModel train_teacher(const TeacherConfig& cfg, const GaussianMixture& gmm, const NoiseSchedule& schedule);

}  // namespace tcd
