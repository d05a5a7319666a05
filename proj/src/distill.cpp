#include "tcd/distill.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "tcd/io.hpp"

namespace tcd {

void DistillConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw config_error("distill." + field + ": " + why);
  };
  if (n_train < 2) fail("n_train", "must be at least 2");
  if (k < 1 || k > n_train - 1) fail("k", "must satisfy 1 <= k <= n_train - 1");
  if (batch < 1) fail("batch", "must be positive");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (iters < 0) fail("iters", "must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay", "must lie in [0, 1)");
  if (guidance_range && !(guidance_range->w_min <= guidance_range->w_max))
    fail("guidance_range", "requires w_min <= w_max");
  if (!(condition_dropout >= 0.0 && condition_dropout <= 1.0)) fail("condition_dropout", "must lie in [0, 1]");
  if (!(loss_weight > 0.0)) fail("loss_weight", "must be positive");
  if (order == TcfOrder::tcfsplus && !model.takes_end_time)
    fail("order", "tcfsplus needs a model with an end-time input");
}

TrainingBatch prepare_batch(const DistillConfig& cfg, const GaussianMixture& gmm, const Denoiser& teacher,
                            const TrainGrid& grid, Rng& rng, bool guided) {
  const Eigen::Index b = cfg.batch;
  const Eigen::Index n_max = grid.count() - cfg.k;
  if (n_max < 1) throw config_error("distill.k: leaves no admissible start index on the training grid");

  LabeledPoints data = sample_data(gmm, b, rng);
  TrainingBatch batch;
  batch.t_start.resize(b);
  batch.t_mid.resize(b);
  batch.t_end.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto n = rng.uniform_int(1, n_max);
    const auto m = cfg.baseline_lcm ? std::int64_t{1} : rng.uniform_int(1, n);
    batch.t_start(j) = grid.at(n + cfg.k);
    batch.t_mid(j) = grid.at(n);
    batch.t_end(j) = grid.at(m);
  }

  Conditioning teacher_cond;
  if (guided) {
    if (!gmm.has_labels()) throw config_error("guided distillation requires a labeled mixture");
    if (!cfg.guidance_range) throw config_error("guided distillation requires distill.guidance_range");
    std::vector<Label> labels = data.labels;
    // Degenerate draws (p in {0, 1}, w_min == w_max) consume no randomness.
    if (cfg.condition_dropout >= 1.0) {
      std::fill(labels.begin(), labels.end(), null_label);
    } else if (cfg.condition_dropout > 0.0) {
      for (auto& l : labels)
        if (rng.uniform() < cfg.condition_dropout) l = null_label;
    }
    const auto [w_min, w_max] = *cfg.guidance_range;
    batch.guidance = Vec::Constant(b, w_min);
    if (w_max > w_min)
      for (Eigen::Index j = 0; j < b; ++j) batch.guidance(j) = rng.uniform(w_min, w_max);
    batch.cond.labels = labels;
    teacher_cond = {labels, batch.guidance};
  }

  batch.x_start = perturb(teacher.schedule(), data.points, batch.t_start, rng);
  batch.teacher_estimate =
      solve_k_steps(cfg.teacher_solver, teacher, batch.x_start, batch.t_start, batch.t_mid, cfg.k, teacher_cond);
  return batch;
}

PointSet tcd_target(const TcfParameterization& target, const TrainingBatch& batch) {
  return apply(target, batch.teacher_estimate, batch.t_mid, batch.t_end, batch.cond);
}

double tcd_loss(const TcfParameterization& student, const TcfParameterization& target, const TrainingBatch& batch,
                double loss_weight) {
  const PointSet pred = apply(student, batch.x_start, batch.t_start, batch.t_end, batch.cond);
  return loss_weight * (pred - tcd_target(target, batch)).squaredNorm() / static_cast<double>(pred.cols());
}

LossAndGradient tcd_loss_gradients(TcfOrder order, const DenoiserModel& student, const NoiseSchedule& schedule,
                                   const TrainingBatch& batch, const PointSet& target, double loss_weight) {
  const PointSet& x = batch.x_start;
  const Vec& t = batch.t_start;
  const Vec& s = batch.t_end;
  const auto labels = batch.cond.expanded(x.cols());
  const auto c = tcf_coefficients(order, schedule, t, s);

  // x0_hat = (x - sigma eps) / alpha, so d x0_hat / d eps = -sigma / alpha.
  const Vec inv_alpha_t = schedule.alpha(t).cwiseInverse();
  const Vec eps_scale_t = -schedule.sigma(t).cwiseProduct(inv_alpha_t);

  ForwardCache cache_t;
  const PointSet eps_t = student.forward(x, t, s, labels, cache_t);
  const PointSet x0_t = scale_columns(x, inv_alpha_t) + scale_columns(eps_t, eps_scale_t);
  PointSet f = scale_columns(x, c.ratio) + scale_columns(x0_t, c.weight_t);

  ForwardCache cache_u;
  Vec inv_alpha_u, eps_scale_u;
  if (order == TcfOrder::tcf2) {
    inv_alpha_u = schedule.alpha(c.u).cwiseInverse();
    eps_scale_u = -schedule.sigma(c.u).cwiseProduct(inv_alpha_u);
    const PointSet x_u = scale_columns(x, c.ratio_u) + scale_columns(x0_t, c.coef_u);
    const PointSet eps_u = student.forward(x_u, c.u, s, labels, cache_u);
    const PointSet x0_u = scale_columns(x_u, inv_alpha_u) + scale_columns(eps_u, eps_scale_u);
    f += scale_columns(x0_u, c.weight_u);
  }

  const double scale = loss_weight / static_cast<double>(x.cols());
  PointSet diff = f - target;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (c.identity[static_cast<std::size_t>(j)]) diff.col(j) = x.col(j) - target.col(j);
  LossAndGradient out{scale * diff.squaredNorm(), Vec()};

  PointSet d_f = 2.0 * scale * diff;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (c.identity[static_cast<std::size_t>(j)]) d_f.col(j).setZero();

  PointSet d_x0_t = scale_columns(d_f, c.weight_t);
  out.gradient = Vec::Zero(student.parameter_count());
  if (order == TcfOrder::tcf2) {
    const PointSet d_x0_u = scale_columns(d_f, c.weight_u);
    PointSet d_xu_net;
    out.gradient += student.backward(cache_u, scale_columns(d_x0_u, eps_scale_u), &d_xu_net);
    const PointSet d_xu = scale_columns(d_x0_u, inv_alpha_u) + d_xu_net;
    d_x0_t += scale_columns(d_xu, c.coef_u);
  }
  out.gradient += student.backward(cache_t, scale_columns(d_x0_t, eps_scale_t));
  return out;
}

// ------------------------------------------------------------------ Distiller

namespace {

std::uint64_t training_stream_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull; }

DenoiserModel initial_student(const DistillConfig& cfg, const DenoiserModel* teacher) {
  if (!teacher) return DenoiserModel::initialize(cfg.model, cfg.seed, /*zero_head=*/true);
  // Start from the teacher: copy every block the two architectures share and
  // zero the end-time projection output so the copy predicts what the teacher does.
  DenoiserModel student = DenoiserModel::initialize(cfg.model, cfg.seed, /*zero_head=*/false);
  for (std::size_t i = 0; i < student.blocks().size(); ++i) {
    const auto& b = student.blocks()[i];
    bool copied = false;
    for (std::size_t k = 0; k < teacher->blocks().size(); ++k) {
      const auto& tb = teacher->blocks()[k];
      if (tb.name == b.name && tb.rows == b.rows && tb.cols == b.cols) {
        student.block(i) = teacher->block(k);
        copied = true;
      }
    }
    if (!copied && (b.name == "s_embed.weight2" || b.name == "s_embed.bias2")) student.block(i).setZero();
  }
  return student;
}

}  // namespace

Distiller::Distiller(DistillConfig cfg, GaussianMixture gmm, NoiseSchedule schedule)
    : cfg_(std::move(cfg)),
      gmm_(std::move(gmm)),
      schedule_(schedule),
      student_(ModelConfig{}),
      opt_(),
      rng_(training_stream_seed(cfg_.seed)) {
  cfg_.validate();
  if (cfg_.model.data_dim != gmm_.dim())
    throw config_error("distill.model: data_dim " + std::to_string(cfg_.model.data_dim) +
                       " differs from mixture dimension " + std::to_string(gmm_.dim()));
  if (cfg_.guidance_range && !gmm_.has_labels()) throw config_error("guided distillation requires a labeled mixture");
  grid_ = make_grids(schedule_, cfg_.n_train, 1).train;
  if (cfg_.teacher_checkpoint) {
    teacher_model_ = std::make_unique<DenoiserModel>(checkpoint_load(*cfg_.teacher_checkpoint).model);
    if (teacher_model_->config().data_dim != gmm_.dim())
      throw config_error("teacher checkpoint dimension differs from mixture dimension");
    teacher_ = std::make_unique<NetworkDenoiser>(*teacher_model_, schedule_);
  } else {
    teacher_ = std::make_unique<OracleDenoiser>(gmm_, schedule_);
  }
  student_ = initial_student(cfg_, teacher_model_.get());
  opt_ = OptimizerState::for_model(student_, {cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay});
  if (cfg_.target_mode == TargetMode::ema) ema_ = EmaState::for_model(student_, cfg_.ema_decay);
}

DenoiserModel Distiller::target_model() const {
  DenoiserModel target = student_;
  if (ema_) target.parameters() = ema_->shadow;
  return target;
}

TrainingRecord Distiller::tcd_train_step() { return run_step(false); }

TrainingRecord Distiller::guided_tcd_train_step() {
  if (!cfg_.guidance_range) throw config_error("guided step requires distill.guidance_range");
  return run_step(true);
}

TrainingRecord Distiller::step() { return run_step(cfg_.guidance_range.has_value()); }

TrainingRecord Distiller::run_step(bool guided) {
  const auto start = std::chrono::steady_clock::now();
  const TrainingBatch batch = prepare_batch(cfg_, gmm_, *teacher_, grid_, rng_, guided);

  const DenoiserModel target_params = target_model();
  const NetworkDenoiser target_den(target_params, schedule_);
  const PointSet target = tcd_target(TcfParameterization(cfg_.order, target_den), batch);
  const LossAndGradient lg = tcd_loss_gradients(cfg_.order, student_, schedule_, batch, target, cfg_.loss_weight);

  TrainingRecord rec;
  rec.iteration = ++iteration_;
  rec.loss = lg.loss;
  rec.t_start = batch.t_start(0);
  rec.t_mid = batch.t_mid(0);
  rec.t_end = batch.t_end(0);
  if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    throw training_error("non-finite TCD loss " + format_double(lg.loss) + " at iteration " +
                             std::to_string(rec.iteration) + " (t_start=" + format_double(rec.t_start) +
                             ", t_mid=" + format_double(rec.t_mid) + ", t_end=" + format_double(rec.t_end) + ")",
                         {rec});
  }
  if (cfg_.cosine_lr) {
    const double progress = static_cast<double>(iteration_ - 1) / std::max(1, cfg_.iters);
    opt_.cfg.lr = 0.5 * cfg_.lr * (1.0 + std::cos(std::numbers::pi * progress));
  }
  opt_step(opt_, student_, lg.gradient);
  if (ema_) ema_update(*ema_, student_);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

DistillResult run_distillation(const DistillConfig& cfg, const GaussianMixture& gmm, const NoiseSchedule& schedule,
                               bool record_wall_time) {
  Distiller distiller(cfg, gmm, schedule);
  std::vector<TrainingRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.iters));
  for (int i = 0; i < cfg.iters; ++i) {
    try {
      TrainingRecord rec = distiller.step();
      if (!record_wall_time) rec.wall_ms = 0.0;
      records.push_back(rec);
    } catch (const training_error& e) {
      std::vector<TrainingRecord> recent(records.end() - std::min<std::ptrdiff_t>(9, std::ssize(records)),
                                         records.end());
      recent.insert(recent.end(), e.records.begin(), e.records.end());
      throw training_error(e.what(), std::move(recent));
    }
  }
  return {distiller.student(), distiller.ema(), std::move(records)};
}

std::string records_to_csv(const std::vector<TrainingRecord>& records) {
  std::string out = "iter,loss,t_start,t_mid,t_end,wall_ms\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration) + ',' + format_double(r.loss) + ',' + format_double(r.t_start) + ',' +
           format_double(r.t_mid) + ',' + format_double(r.t_end) + ',' + format_double(r.wall_ms) + '\n';
  }
  return out;
}

DenoiserModel train_teacher(const TeacherConfig& cfg, const GaussianMixture& gmm, const NoiseSchedule& schedule) {
  if (cfg.model.data_dim != gmm.dim()) throw config_error("teacher model dimension differs from mixture dimension");
  if (cfg.model.takes_end_time) throw config_error("a teacher denoiser takes no end-time input");
  DenoiserModel model = DenoiserModel::initialize(cfg.model, cfg.seed, /*zero_head=*/true);
  OptimizerState opt = OptimizerState::for_model(model, {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(training_stream_seed(cfg.seed) ^ 0x5bd1e995ull);
  for (int it = 0; it < cfg.iters; ++it) {
    LabeledPoints data = sample_data(gmm, cfg.batch, rng);
    Vec t(cfg.batch);
    for (Eigen::Index j = 0; j < t.size(); ++j) t(j) = rng.uniform(schedule.t_min(), schedule.t_max());
    const Mat z = rng.normal_matrix(gmm.dim(), cfg.batch);
    const PointSet x_t = scale_columns(data.points, schedule.alpha(t)) + scale_columns(z, schedule.sigma(t));
    std::vector<Label> labels;
    if (cfg.model.takes_label) {
      labels = data.labels;
      for (auto& l : labels)
        if (rng.uniform() < cfg.condition_dropout) l = null_label;
    }
    const auto lg = regression_loss_gradients(model, x_t, t, Vec(), labels, z);
    if (!std::isfinite(lg.loss))
      throw training_error("non-finite teacher loss at iteration " + std::to_string(it + 1), {});
    opt_step(opt, model, lg.gradient);
  }
  return model;
}

}  // namespace tcd
