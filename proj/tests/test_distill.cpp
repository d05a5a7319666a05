#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tcd/distill.hpp"

using namespace tcd;

namespace {

DistillConfig small_config(TcfOrder order = TcfOrder::tcf1) {
  DistillConfig cfg;
  cfg.order = order;
  cfg.n_train = 100;
  cfg.k = 5;
  cfg.batch = 16;
  cfg.iters = 10;
  cfg.seed = 3;
  cfg.model.hidden_width = 16;
  cfg.model.depth = 2;
  cfg.model.embed_dim = 8;
  cfg.model.takes_end_time = order == TcfOrder::tcfsplus;
  cfg.model.velocity_head = true;
  return cfg;
}

GaussianMixture labeled_atoms() {
  const double v = point_mass_variance;
  return GaussianMixture({{0.5, (Vec(2) << 1.0, 0.5).finished(), Vec::Constant(2, v), 0},
                          {0.5, (Vec(2) << -1.0, -0.5).finished(), Vec::Constant(2, v), 1}});
}

}  // namespace

TEST_CASE("config validation names the field") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.k = 100;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("distill.k"), config_error);
  cfg = small_config();
  cfg.ema_decay = 1.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("ema_decay"), config_error);
  cfg = small_config(TcfOrder::tcfsplus);
  cfg.model.takes_end_time = false;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("batch layout follows the grid indices") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.1);
  const OracleDenoiser teacher(gmm, sch);
  auto cfg = small_config();
  const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
  Rng rng(1);
  const auto batch = prepare_batch(cfg, gmm, teacher, grid, rng, false);
  CHECK(batch.x_start.cols() == cfg.batch);
  for (Eigen::Index j = 0; j < cfg.batch; ++j) {
    CHECK(batch.t_end(j) <= batch.t_mid(j));
    CHECK(batch.t_mid(j) < batch.t_start(j));
  }
  cfg.baseline_lcm = true;
  const auto lcm = prepare_batch(cfg, gmm, teacher, grid, rng, false);
  CHECK((lcm.t_end.array() == grid.at(1)).all());
}

TEST_CASE("exact student on point-mass data has zero loss") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::point_mass((Vec(2) << 0.3, -0.8).finished());
  const OracleDenoiser oracle(gmm, sch);
  auto cfg = small_config();
  cfg.batch = 64;
  const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
  for (bool lcm : {false, true}) {
    cfg.baseline_lcm = lcm;
    Rng rng(2);
    const auto batch = prepare_batch(cfg, gmm, oracle, grid, rng, false);
    const TcfParameterization tcf(TcfOrder::tcf1, oracle);
    CHECK(tcd_loss(tcf, tcf, batch) < 1e-12);
  }
}

TEST_CASE("exact conditional student on per-class atoms has zero guided loss") {
  const NoiseSchedule sch;
  const auto gmm = labeled_atoms();
  const OracleDenoiser oracle(gmm, sch);
  auto cfg = small_config();
  cfg.batch = 64;
  cfg.guidance_range = GuidanceRange{0.0, 0.0};
  const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
  Rng rng(3);
  const auto batch = prepare_batch(cfg, gmm, oracle, grid, rng, true);
  const TcfParameterization tcf(TcfOrder::tcf1, oracle);
  CHECK(tcd_loss(tcf, tcf, batch) < 1e-10);
}

TEST_CASE("TCD loss gradients match central differences") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.2);
  const OracleDenoiser teacher(gmm, sch);
  int config_id = 0;
  for (auto order : {TcfOrder::tcf1, TcfOrder::tcf2, TcfOrder::tcfsplus}) {
    CAPTURE(config_id);
    auto cfg = small_config(order);
    cfg.model.velocity_head = config_id != 1;
    auto model = DenoiserModel::initialize(cfg.model, 40 + static_cast<std::uint64_t>(config_id), false);
    const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
    Rng rng(50 + static_cast<std::uint64_t>(config_id));
    const auto batch = prepare_batch(cfg, gmm, teacher, grid, rng, false);
    const PointSet target = rng.normal_matrix(2, cfg.batch);
    const auto lg = tcd_loss_gradients(order, model, sch, batch, target);
    for (int i = 0; i < 20; ++i) {
      const auto k = rng.uniform_int(0, model.parameter_count() - 1);
      const double keep = model.parameters()(k);
      model.parameters()(k) = keep + 1e-6;
      const double up = tcd_loss_gradients(order, model, sch, batch, target).loss;
      model.parameters()(k) = keep - 1e-6;
      const double down = tcd_loss_gradients(order, model, sch, batch, target).loss;
      model.parameters()(k) = keep;
      const double fd = (up - down) / 2e-6;
      CHECK(std::abs(fd - lg.gradient(k)) <= 1e-4 * std::max(1e-3, std::abs(fd)));
    }
    // The analytic loss agrees with the generic TCF evaluation.
    const NetworkDenoiser den(model, sch);
    const TcfParameterization tcf(order, den);
    const double direct = (apply(tcf, batch.x_start, batch.t_start, batch.t_end) - target).squaredNorm() / cfg.batch;
    CHECK(std::abs(direct - lg.loss) < 1e-10 * std::max(1.0, direct));
    ++config_id;
  }
}

TEST_CASE("guided step with zero guidance and null labels matches the unguided step") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.2, true);
  auto plain = small_config();
  plain.model.takes_label = true;
  plain.model.num_classes = 4;
  auto guided = plain;
  guided.guidance_range = GuidanceRange{0.0, 0.0};
  guided.condition_dropout = 1.0;
  Distiller a(plain, gmm, sch);
  Distiller b(guided, gmm, sch);
  for (int i = 0; i < 3; ++i) {
    const auto ra = a.tcd_train_step();
    const auto rb = b.guided_tcd_train_step();
    CHECK(ra.loss == doctest::Approx(rb.loss).epsilon(1e-12));
  }
  CHECK((a.student().parameters() - b.student().parameters()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(a.guided_tcd_train_step(), config_error);
  auto bad = guided;
  CHECK_THROWS_AS(Distiller(bad, GaussianMixture::ring(4, 2.0, 0.2, false), sch), config_error);
}

TEST_CASE("run_distillation degeneracies and determinism") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.2);
  auto cfg = small_config();
  cfg.iters = 0;
  const auto untouched = run_distillation(cfg, gmm, sch);
  CHECK(untouched.records.empty());
  CHECK(untouched.student.parameters() == Distiller(cfg, gmm, sch).student().parameters());

  cfg.iters = 15;
  cfg.target_mode = TargetMode::ema;
  const auto r1 = run_distillation(cfg, gmm, sch);
  const auto r2 = run_distillation(cfg, gmm, sch);
  CHECK(r1.records.size() == 15);
  CHECK(r1.student.parameters() == r2.student.parameters());
  REQUIRE(r1.ema.has_value());
  CHECK(r1.ema->shadow == r2.ema->shadow);
  CHECK(records_to_csv(r1.records) == records_to_csv(r2.records));
  CHECK(records_to_csv(r1.records).rfind("iter,loss,t_start,t_mid,t_end,wall_ms\n", 0) == 0);
}

TEST_CASE("EMA target with zero decay tracks the student") {
  const NoiseSchedule sch;
  auto cfg = small_config();
  cfg.target_mode = TargetMode::ema;
  cfg.ema_decay = 0.0;
  Distiller d(cfg, GaussianMixture::ring(4, 2.0, 0.2), sch);
  for (int i = 0; i < 3; ++i) d.step();
  CHECK(d.target_model().parameters() == d.student().parameters());
}

TEST_CASE("training loss decreases") {
  const NoiseSchedule sch;
  auto cfg = small_config();
  cfg.batch = 64;
  cfg.iters = 300;
  cfg.target_mode = TargetMode::ema;
  const auto res = run_distillation(cfg, GaussianMixture::ring(4, 2.0, 0.2), sch);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += res.records[static_cast<std::size_t>(i)].loss;
    tail += res.records[res.records.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(tail < head);
}

TEST_CASE("a non-finite loss raises a training error with diagnostics") {
  const NoiseSchedule sch;
  Distiller d(small_config(), GaussianMixture::ring(4, 2.0, 0.2), sch);
  d.step();
  d.student().parameters().setConstant(NAN);
  try {
    d.step();
    FAIL("expected training_error");
  } catch (const training_error& e) {
    REQUIRE(e.records.size() == 1);
    CHECK(e.records.front().iteration == 2);
    CHECK(std::string(e.what()).find("iteration 2") != std::string::npos);
  }
}

TEST_CASE("a trained teacher copy starts with a small solver-gap loss") {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(4, 2.0, 0.2);
  TeacherConfig tc;
  tc.model.hidden_width = 32;
  tc.model.depth = 2;
  tc.model.embed_dim = 16;
  tc.iters = 400;
  tc.seed = 9;
  const DenoiserModel teacher_model = train_teacher(tc, gmm, sch);
  const NetworkDenoiser teacher(teacher_model, sch);

  auto cfg = small_config();
  cfg.batch = 256;
  const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
  Rng rng(10);
  const auto batch = prepare_batch(cfg, gmm, teacher, grid, rng, false);
  const TcfParameterization copy(TcfOrder::tcf1, teacher);
  const double gap = tcd_loss(copy, copy, batch);

  const auto random_model = DenoiserModel::initialize(tc.model, 11, false);
  const NetworkDenoiser random_den(random_model, sch);
  const TcfParameterization random_tcf(TcfOrder::tcf1, random_den);
  CHECK(gap > 0.0);
  CHECK(gap < tcd_loss(random_tcf, random_tcf, batch));

  const std::string path = (std::filesystem::temp_directory_path() / "tcdlab_test_teacher.ckpt").string();
  checkpoint_save(teacher_model, nullptr, path);
  auto from_teacher = small_config();
  from_teacher.model = tc.model;
  from_teacher.teacher_checkpoint = path;
  Distiller d(from_teacher, gmm, sch);
  CHECK(d.student().parameters() == teacher_model.parameters());
  std::filesystem::remove(path);
}
