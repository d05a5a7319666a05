// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tcd/commands.hpp"
#include "tcd/io.hpp"

namespace fs = std::filesystem;
using namespace tcd;

namespace {

const std::string config_dir = TCDLAB_CONFIG_DIR;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

DenoiserModel end_time_net(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.hidden_width = 32;
  cfg.depth = 2;
  cfg.embed_dim = 16;
  cfg.takes_end_time = true;
  return DenoiserModel::initialize(cfg, seed, false);
}

Outcome boundary_condition() {
  const NoiseSchedule sch;
  const OracleDenoiser oracle(order_test_mixture(), sch);
  const auto net = end_time_net(1);
  const NetworkDenoiser net_den(net, sch);
  Rng rng(101);
  const Eigen::Index n = 1000;
  const PointSet x = 3.0 * rng.normal_matrix(2, n);
  Vec s(n);
  for (Eigen::Index j = 0; j < n; ++j) s(j) = rng.uniform(sch.t_min(), sch.t_max());
  double worst = 0.0;
  worst = std::max(worst, (apply(TcfParameterization(TcfOrder::tcf1, oracle), x, s, s) - x).cwiseAbs().maxCoeff());
  worst = std::max(worst, (apply(TcfParameterization(TcfOrder::tcf2, oracle), x, s, s) - x).cwiseAbs().maxCoeff());
  worst =
      std::max(worst, (apply(TcfParameterization(TcfOrder::tcfsplus, net_den), x, s, s) - x).cwiseAbs().maxCoeff());
  return {worst < 1e-12, "max_abs_err=" + fmt(worst) + " (tol 1e-12)"};
}

Outcome tcf1_is_ddim() {
  const NoiseSchedule sch;
  const OracleDenoiser oracle(GaussianMixture::ring(8, 2.0, 0.1), sch);
  Rng rng(102);
  const Eigen::Index n = 10000;
  const PointSet x = 2.0 * rng.normal_matrix(2, n);
  Vec t(n), s(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t(j) = rng.uniform(sch.t_min(), sch.t_max());
    s(j) = rng.uniform(sch.t_min(), t(j));
  }
  const double err =
      (apply(TcfParameterization(TcfOrder::tcf1, oracle), x, t, s) - ddim_step(oracle, x, t, s)).cwiseAbs().maxCoeff();
  return {err < 1e-9, "max_abs_diff=" + fmt(err) + " (tol 1e-9)"};
}

Outcome point_mass_exactness() {
  const NoiseSchedule sch;
  const Vec mu = (Vec(2) << 0.8, -1.4).finished();
  const auto gmm = GaussianMixture::point_mass(mu);
  const OracleDenoiser oracle(gmm, sch);
  const TcfParameterization tcf1(TcfOrder::tcf1, oracle), tcf2(TcfOrder::tcf2, oracle);
  Rng rng(103);
  const PointSet x = rng.normal_matrix(2, 200);
  double step_err = 0.0;
  for (auto [t, s] : {std::pair{0.999, 0.001}, std::pair{0.8, 0.3}, std::pair{0.5, 0.45}}) {
    const PointSet ref = exact_flow(gmm, sch, x, t, s);
    step_err = std::max(step_err, (apply(tcf1, x, t, s) - ref).cwiseAbs().maxCoeff());
    step_err = std::max(step_err, (apply(tcf2, x, t, s) - ref).cwiseAbs().maxCoeff());
    step_err = std::max(step_err, (ddim_step(oracle, x, t, s) - ref).cwiseAbs().maxCoeff());
    step_err = std::max(step_err, (dpmpp_2s_step(oracle, x, t, s) - ref).cwiseAbs().maxCoeff());
  }
  double sss_err = 0.0;
  for (double gamma : {0.0, 0.2, 0.5, 1.0})
    for (Eigen::Index nfe : {1, 4, 8}) {
      SamplerConfig cfg;
      cfg.grid = make_sample_grid(sch, 1000, nfe);
      cfg.gamma = gamma;
      cfg.n_samples = 200;
      Rng srng(104);
      sss_err = std::max(sss_err, (sss_sample(tcf1, cfg, srng).colwise() - mu).cwiseAbs().maxCoeff());
    }
  return {step_err < 1e-9 && sss_err < 1e-6,
          "one-step max_err=" + fmt(step_err) + " (tol 1e-9), SSS max_err=" + fmt(sss_err) + " (tol 1e-6)"};
}

Outcome convergence_orders() {
  const double s1 = order_sweep(TcfOrder::tcf1, 105).slope;
  const double s2 = order_sweep(TcfOrder::tcf2, 105).slope;
  const bool ok = s1 >= 1.7 && s1 <= 2.3 && s2 >= 2.6 && s2 <= 3.4;
  return {ok, "tcf1 slope=" + fmt(s1) + " in [1.7, 2.3], tcf2 slope=" + fmt(s2) + " in [2.6, 3.4]"};
}

Outcome kernel_composition() {
  const NoiseSchedule sch;
  const Eigen::Index n = 100000;
  const Vec x0 = (Vec(2) << 1.5, -0.7).finished();
  Rng rng(106);
  PointSet x = perturb(sch, x0.replicate(1, n), 0.2, rng);
  double from = 0.2;
  for (double to : {0.35, 0.5, 0.65, 0.8}) {
    x = diffuse(sch, x, from, to, rng);
    from = to;
  }
  const double var = sch.sigma(0.8) * sch.sigma(0.8);
  const Vec mean = x.rowwise().mean();
  const Vec sample_var = (x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(n - 1);
  const double z_mean = ((mean - sch.alpha(0.8) * x0).cwiseAbs() / std::sqrt(var / n)).maxCoeff();
  const double z_var = ((sample_var.array() - var).abs() / (var * std::sqrt(2.0 / (n - 1)))).maxCoeff();
  return {z_mean <= 3.0 && z_var <= 3.0,
          "mean dev=" + fmt(z_mean) + " SE, variance dev=" + fmt(z_var) + " SE (limit 3, n=1e5)"};
}

Outcome sampler_degeneracies() {
  const NoiseSchedule sch;
  const OracleDenoiser oracle(GaussianMixture::ring(8, 2.0, 0.1), sch);
  const TcfParameterization tcf(TcfOrder::tcf1, oracle);
  bool identical = true;
  for (Eigen::Index nfe : {1, 2, 4, 8, 20}) {
    SamplerConfig cfg;
    cfg.grid = make_sample_grid(sch, 1000, nfe);
    cfg.gamma = 1.0;
    cfg.n_samples = 500;
    Rng a(107), b(107);
    identical = identical && sss_sample(tcf, cfg, a) == multistep_consistency_sample(tcf, cfg, b);
  }
  SamplerConfig cfg;
  cfg.grid = make_sample_grid(sch, 1000, 8);
  cfg.gamma = 0.0;
  cfg.n_samples = 500;
  Rng start(108);
  const PointSet x = start.normal_matrix(2, 500);
  Rng r1(1), r2(2);
  const bool seed_free = sss_sample_from(tcf, cfg, x, r1) == sss_sample_from(tcf, cfg, x, r2);
  return {identical && seed_free, std::string("gamma=1 vs MCS bit-identical: ") + (identical ? "yes" : "no") +
                                      ", gamma=0 seed-independent: " + (seed_free ? "yes" : "no")};
}

Outcome gradient_correctness() {
  const NoiseSchedule sch;
  const auto gmm = GaussianMixture::ring(8, 2.0, 0.1);
  const OracleDenoiser teacher(gmm, sch);
  double worst = 0.0;
  int config_id = 0;
  for (auto order : {TcfOrder::tcf1, TcfOrder::tcf2, TcfOrder::tcfsplus}) {
    Rng rng(200 + static_cast<std::uint64_t>(config_id));
    DistillConfig cfg;
    cfg.order = order;
    cfg.n_train = 200;
    cfg.k = 1 + static_cast<int>(rng.uniform_int(1, 20));
    cfg.batch = 32;
    cfg.model.hidden_width = 8 * rng.uniform_int(2, 6);
    cfg.model.depth = rng.uniform_int(1, 3);
    cfg.model.embed_dim = 2 * rng.uniform_int(4, 10);
    cfg.model.takes_end_time = order == TcfOrder::tcfsplus;
    cfg.model.velocity_head = config_id % 2 == 0;
    auto model = DenoiserModel::initialize(cfg.model, rng.engine()(), false);
    const TrainGrid grid = make_grids(sch, cfg.n_train, 1).train;
    const auto batch = prepare_batch(cfg, gmm, teacher, grid, rng, false);
    const PointSet target = batch.teacher_estimate + 0.1 * rng.normal_matrix(2, cfg.batch);
    const auto lg = tcd_loss_gradients(order, model, sch, batch, target);
    for (int i = 0; i < 20; ++i) {
      const auto k = rng.uniform_int(0, model.parameter_count() - 1);
      const double keep = model.parameters()(k);
      const double h = 1e-6 * std::max(1.0, std::abs(keep));
      model.parameters()(k) = keep + h;
      const double up = tcd_loss_gradients(order, model, sch, batch, target).loss;
      model.parameters()(k) = keep - h;
      const double down = tcd_loss_gradients(order, model, sch, batch, target).loss;
      model.parameters()(k) = keep;
      const double fd = (up - down) / (2 * h);
      // Relative error with a floor for parameters whose gradient vanishes.
      worst = std::max(worst, std::abs(fd - lg.gradient(k)) / std::max(std::abs(fd), 1e-6));
    }
    ++config_id;
  }
  return {worst < 1e-4, "worst relative error=" + fmt(worst) + " over 3 configs x 20 parameters (tol 1e-4)"};
}

struct SeedResult {
  double teacher;
  double nfe4;
  double nfe20;
};

SeedResult distill_and_score(const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.seed = seed;
  cfg.distill.seed = seed;
  const DistillResult res = run_distillation(cfg.distill, cfg.gmm, cfg.schedule);
  DenoiserModel model = res.student;
  if (res.ema) model.parameters() = res.ema->shadow;
  const NetworkDenoiser student(model, cfg.schedule);
  const OracleDenoiser teacher(cfg.gmm, cfg.schedule);

  Rng data_rng(derive_seed(seed, 301));
  const PointSet data = sample_data(cfg.gmm, 10000, data_rng).points;
  auto score = [&](const PointSet& x) {
    Rng proj(derive_seed(seed, 302));
    return sliced_w2(x, data, default_projections, proj);
  };
  SamplerSpec sss{"tcd", SamplerMode::sss, {}, 0.2, SolverKind::ddim, 10000, null_label, false};
  SamplerSpec ddim{"teacher", SamplerMode::ode_solver, {}, 0.0, SolverKind::ddim, 10000, null_label, false};
  SeedResult r;
  r.teacher = score(run_sampler(cfg, ddim, 50, 0.0, nullptr, teacher, derive_seed(seed, 303)).points);
  r.nfe4 = score(run_sampler(cfg, sss, 4, 0.2, &student, teacher, derive_seed(seed, 304)).points);
  r.nfe20 = score(run_sampler(cfg, sss, 20, 0.2, &student, teacher, derive_seed(seed, 305)).points);
  return r;
}

Outcome end_to_end_distillation() {
  const ExperimentConfig cfg = load_config(config_dir + "/default.json");
  std::vector<double> teacher, nfe4, nfe20, ratio;
  std::string per_seed;
  for (std::uint64_t seed : {0, 1, 2}) {
    const SeedResult r = distill_and_score(cfg, seed);
    teacher.push_back(r.teacher);
    nfe4.push_back(r.nfe4);
    nfe20.push_back(r.nfe20);
    ratio.push_back(r.nfe20 / r.nfe4);
    per_seed += " [seed " + std::to_string(seed) + ": teacher " + fmt(r.teacher) + ", 4-NFE " + fmt(r.nfe4) +
                ", 20-NFE " + fmt(r.nfe20) + "]";
  }
  const double t = median3(teacher), a = median3(nfe4), q = median3(ratio);
  const bool ok = a <= 3.0 * t && q <= 1.2;
  return {ok, "median 4-NFE sliced-W2=" + fmt(a) + " <= 3 x teacher " + fmt(t) + " (" + fmt(3.0 * t) +
                  "), median 20/4 ratio=" + fmt(q) + " <= 1.2;" + per_seed};
}

Outcome guided_distillation() {
  ExperimentConfig cfg = load_config(config_dir + "/guided.json");
  const DistillResult res = run_distillation(cfg.distill, cfg.gmm, cfg.schedule);
  DenoiserModel model = res.student;
  if (res.ema) model.parameters() = res.ema->shadow;
  const NetworkDenoiser student(model, cfg.schedule);
  const OracleDenoiser teacher(cfg.gmm, cfg.schedule);
  SamplerSpec spec{"guided", SamplerMode::sss, {}, 0.2, SolverKind::ddim, 4000, null_label, true};
  const LabeledPoints s = run_sampler(cfg, spec, 4, 0.2, &student, teacher, derive_seed(cfg.seed, 401));
  const double acc = nearest_mode_accuracy(s.points, s.labels, cfg.gmm);
  return {acc >= 0.95, "nearest-correct-mode fraction=" + fmt(acc) + " (>= 0.95, " +
                           std::to_string(s.points.cols()) + " samples over " +
                           std::to_string(cfg.gmm.num_classes()) + " classes)"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "tcdlab_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> digests;
  std::size_t files = 0;
  for (const char* run : {"a", "b"}) {
    ExperimentConfig cfg = load_config(config_dir + "/default.json");
    CommandOptions opts;
    opts.seed = 42;
    opts.out_dir = (root / run).string();
    apply_overrides(cfg, opts);
    cmd_distill(cfg);
    const CommandResult sampled = cmd_sample(cfg, (root / run / "student.ckpt").string());
    std::string bytes = read_file((root / run / "train_log.csv").string());
    files = 1;
    for (const auto& path : sampled.written)
      if (fs::path(path).extension() == ".csv") {
        bytes += read_file(path);
        ++files;
      }
    digests.push_back(std::move(bytes));
  }
  fs::remove_all(root);
  const bool same = digests[0] == digests[1];
  return {same, std::to_string(files) + " CSV files per run, byte-identical: " + (same ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // <= 0: no runtime bound of its own
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "boundary condition f(x, s, s) = x", 1.0, boundary_condition},
      {2, "tcf1 equals DDIM", 5.0, tcf1_is_ddim},
      {3, "exactness on point-mass data", 5.0, point_mass_exactness},
      {4, "convergence orders", 30.0, convergence_orders},
      {5, "kernel composition", 10.0, kernel_composition},
      {6, "sampler degeneracies", 5.0, sampler_degeneracies},
      {7, "gradient correctness", 10.0, gradient_correctness},
      {8, "end-to-end distillation", 600.0, end_to_end_distillation},
      {9, "guided distillation", 600.0, guided_distillation},
      {10, "determinism of distill + sample", 0.0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out{false, ""};
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed = seconds_since(start);
    const bool in_time = c.limit_s <= 0.0 || elapsed < c.limit_s;
    const bool pass = out.pass && in_time;
    failures += pass ? 0 : 1;
    std::string timing = fmt(elapsed) + " s";
    if (c.limit_s > 0.0) timing += " (limit " + fmt(c.limit_s) + " s)";
    std::printf("criterion %2d %s: %s; %s; %s\n", c.id, pass ? "PASS" : "FAIL", c.name, out.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
