#include "tcd/commands.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "tcd/io.hpp"

namespace tcd {

namespace fs = std::filesystem;

void apply_overrides(ExperimentConfig& cfg, const CommandOptions& opts) {
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.distill.seed = *opts.seed;
    cfg.teacher.seed = *opts.seed;
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
}

namespace {

std::string out_path(const ExperimentConfig& cfg, const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); }

// Stream tags for derive_seed.
constexpr std::uint64_t tag_checks = 1;
constexpr std::uint64_t tag_reference = 2;
constexpr std::uint64_t tag_projections = 3;
constexpr std::uint64_t tag_sampler = 4;

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

PointSet marginal_draws(const GaussianMixture& gmm, const NoiseSchedule& sch, Eigen::Index n, double t, Rng& rng) {
  return perturb(sch, sample_data(gmm, n, rng).points, t, rng);
}

CheckRow row(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, std::isfinite(value) && value <= threshold};
}

CheckRow score_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  double worst = 0.0;
  const double h = 1e-5;
  for (double t : {0.1, 0.5, 0.9}) {
    const PointSet x = marginal_draws(gmm, sch, 20, t, rng);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Vec g = score(gmm, sch, x.col(j), t);
      Vec fd(x.rows());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Vec xp = x.col(j), xm = x.col(j);
        xp(i) += h;
        xm(i) -= h;
        fd(i) = (marginal_logpdf(gmm, sch, xp, t) - marginal_logpdf(gmm, sch, xm, t)) / (2 * h);
      }
      worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / std::max(1.0, g.cwiseAbs().maxCoeff()));
    }
  }
  return row("score_vs_finite_difference", worst, 1e-5);
}

CheckRow tweedie_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  double worst = 0.0;
  for (double t : {0.05, 0.3, 0.7, 0.95}) {
    const PointSet x = marginal_draws(gmm, sch, 50, t, rng);
    const double a = sch.alpha(t), s = sch.sigma(t);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Vec via_score = (x.col(j) + s * s * score(gmm, sch, x.col(j), t)) / a;
      const Vec direct = denoise_oracle(gmm, sch, x.col(j), t).x0_hat;
      worst = std::max(worst, (via_score - direct).cwiseAbs().maxCoeff() / std::max(1.0, direct.cwiseAbs().maxCoeff()));
    }
  }
  return row("tweedie_posterior_mean", worst, 1e-9);
}

CheckRow flow_composition_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  const PointSet x = marginal_draws(gmm, sch, 50, 0.9, rng);
  const PointSet direct = exact_flow(gmm, sch, x, 0.9, 0.1);
  const PointSet composed = exact_flow(gmm, sch, exact_flow(gmm, sch, x, 0.9, 0.5), 0.5, 0.1);
  return row("flow_composition", max_abs(direct - composed), 1e-6);
}

CheckRow boundary_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  const OracleDenoiser oracle(gmm, sch);
  ModelConfig mc;
  mc.data_dim = gmm.dim();
  mc.hidden_width = 16;
  mc.depth = 2;
  mc.embed_dim = 8;
  mc.takes_end_time = true;
  const DenoiserModel net = DenoiserModel::initialize(mc, rng.engine()(), false);
  const NetworkDenoiser net_denoiser(net, sch);
  const Eigen::Index n = 1000;
  const PointSet x = 3.0 * rng.normal_matrix(gmm.dim(), n);
  Vec s(n);
  for (Eigen::Index j = 0; j < n; ++j) s(j) = rng.uniform(sch.t_min(), sch.t_max());
  double worst = 0.0;
  worst = std::max(worst, max_abs(apply(TcfParameterization(TcfOrder::tcf1, oracle), x, s, s) - x));
  worst = std::max(worst, max_abs(apply(TcfParameterization(TcfOrder::tcf2, oracle), x, s, s) - x));
  worst = std::max(worst, max_abs(apply(TcfParameterization(TcfOrder::tcfsplus, net_denoiser), x, s, s) - x));
  return row("tcf_boundary_identity", worst, 1e-12);
}

CheckRow tcf1_ddim_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  const OracleDenoiser oracle(gmm, sch);
  const Eigen::Index n = 10000;
  const PointSet x = 3.0 * rng.normal_matrix(gmm.dim(), n);
  Vec t(n), s(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double a = rng.uniform(sch.t_min(), sch.t_max());
    const double b = rng.uniform(sch.t_min(), sch.t_max());
    t(j) = std::max(a, b);
    s(j) = std::min(a, b);
  }
  const PointSet via_tcf = apply(TcfParameterization(TcfOrder::tcf1, oracle), x, t, s);
  const PointSet via_ddim = ddim_step(oracle, x, t, s);
  return row("tcf1_equals_ddim", max_abs(via_tcf - via_ddim), 1e-9);
}

// Draw x_{s'} from the perturbation kernel, apply the transition kernel to s,
// and compare per-coordinate moments with alpha_s x0 and sigma_s^2.
CheckRow kernel_composition_check(const GaussianMixture& gmm, const NoiseSchedule& sch, Rng& rng) {
  const Eigen::Index n = 100000;
  // Three chained sub-steps 0.3 -> 0.4 -> 0.5 -> 0.6 against the direct kernel to 0.6.
  const double s_prime = 0.3, s = 0.6;
  const Vec x0 = gmm.component(0).mean;
  PointSet moved = perturb(sch, x0.replicate(1, n), s_prime, rng);
  double from = s_prime;
  for (double to : {0.4, 0.5, s}) {
    moved = diffuse(sch, moved, from, to, rng);
    from = to;
  }
  const double var = sch.sigma(s) * sch.sigma(s);
  const Vec mean = moved.rowwise().mean();
  const Vec sample_var = (moved.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(n - 1);
  const double se_mean = std::sqrt(var / static_cast<double>(n));
  const double se_var = var * std::sqrt(2.0 / static_cast<double>(n - 1));
  const double z_mean = ((mean - sch.alpha(s) * x0).cwiseAbs() / se_mean).maxCoeff();
  const double z_var = ((sample_var.array() - var).abs() / se_var).maxCoeff();
  return row("kernel_composition_std_errors", std::max(z_mean, z_var), 3.0);
}

}  // namespace

GaussianMixture order_test_mixture() {
  std::vector<MixtureComponent> comps;
  comps.push_back({0.5, Vec::Constant(2, 1.0), Vec::Constant(2, 0.09), std::nullopt});
  comps.push_back({0.5, Vec::Constant(2, -1.0), Vec::Constant(2, 0.09), std::nullopt});
  return GaussianMixture(std::move(comps));
}

OrderSweep order_sweep(TcfOrder order, std::uint64_t seed) {
  const GaussianMixture gmm = order_test_mixture();
  const NoiseSchedule sch;
  const OracleDenoiser oracle(gmm, sch);
  const TcfParameterization tcf(order, oracle);
  Rng rng(seed);
  const double t = 0.5;
  const PointSet x = marginal_draws(gmm, sch, 64, t, rng);
  OrderSweep out;
  out.h.resize(5);
  out.errors.resize(5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double h = 0.4 / std::pow(2.0, static_cast<double>(i));
    const double s = sch.t_of_lambda(sch.lambda(t) + h);
    out.h(i) = h;
    out.errors(i) = local_error(tcf, gmm, x, t, s);
  }
  out.slope = order_fit(out.h, out.errors);
  return out;
}

std::vector<CheckRow> run_oracle_checks(const GaussianMixture& gmm, const NoiseSchedule& sch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag_checks));
  std::vector<CheckRow> rows;
  rows.push_back(score_check(gmm, sch, rng));
  rows.push_back(tweedie_check(gmm, sch, rng));
  rows.push_back(flow_composition_check(gmm, sch, rng));
  rows.push_back(boundary_check(gmm, sch, rng));
  rows.push_back(tcf1_ddim_check(gmm, sch, rng));
  rows.push_back(kernel_composition_check(gmm, sch, rng));
  const double s1 = order_sweep(TcfOrder::tcf1, seed).slope;
  const double s2 = order_sweep(TcfOrder::tcf2, seed).slope;
  rows.push_back({"order_tcf1_slope", s1, 2.0, s1 >= 1.7 && s1 <= 2.3});
  rows.push_back({"order_tcf2_slope", s2, 3.0, s2 >= 2.6 && s2 <= 3.4});
  return rows;
}

std::string check_rows_to_csv(const std::vector<CheckRow>& rows) {
  std::ostringstream out;
  out << "check,value,threshold,pass\n";
  for (const auto& r : rows)
    out << r.check << ',' << format_double(r.value) << ',' << format_double(r.threshold) << ','
        << (r.pass ? "true" : "false") << '\n';
  return out.str();
}

std::vector<MetricReport> compute_metrics(const ExperimentConfig& cfg, const PointSet& samples,
                                          const std::vector<Label>& labels, std::uint64_t seed) {
  std::vector<MetricSpec> specs = cfg.metrics;
  if (specs.empty()) {
    MetricSpec fallback;
    fallback.name = "sliced_w2";
    specs.push_back(fallback);
  }
  Rng ref_rng(derive_seed(seed, tag_reference));
  const PointSet reference = sample_data(cfg.gmm, samples.cols(), ref_rng).points;
  std::vector<MetricReport> out;
  for (const auto& m : specs) {
    MetricReport r{m.name, 0.0, samples.cols(), reference.cols(), 0.0, seed};
    if (m.name == "sliced_w2") {
      Rng proj(derive_seed(seed, tag_projections));
      r.value = sliced_w2(samples, reference, m.projections, proj);
      r.param = m.projections;
    } else if (m.name == "mmd_rbf") {
      r.param = m.bandwidth ? *m.bandwidth : median_bandwidth(samples, reference);
      r.value = mmd_rbf(samples, reference, r.param);
    } else if (m.name == "mode_recall") {
      r.value = mode_recall(samples, cfg.gmm, m.radius);
      r.param = m.radius;
      r.n_b = static_cast<Eigen::Index>(cfg.gmm.size());
    } else if (m.name == "class_accuracy") {
      bool labeled = !labels.empty();
      for (Label l : labels) labeled = labeled && l != null_label;
      r.value = labeled ? nearest_mode_accuracy(samples, labels, cfg.gmm) : std::nan("");
      r.n_b = static_cast<Eigen::Index>(cfg.gmm.size());
    }
    out.push_back(r);
  }
  return out;
}

LabeledPoints run_sampler(const ExperimentConfig& cfg, const SamplerSpec& spec, int nfe, double gamma,
                          const Denoiser* student, const Denoiser& teacher, std::uint64_t seed) {
  SamplerConfig sc;
  sc.grid = make_sample_grid(cfg.schedule, cfg.distill.n_train, nfe);
  sc.gamma = gamma;
  sc.mode = spec.mode;
  sc.solver = spec.solver;
  sc.seed = seed;
  Rng rng(seed);

  std::vector<std::pair<Label, Eigen::Index>> parts;
  if (spec.all_labels) {
    const int k = cfg.gmm.num_classes();
    for (int c = 0; c < k; ++c) parts.emplace_back(c, spec.n_samples / k + (c < spec.n_samples % k ? 1 : 0));
  } else {
    parts.emplace_back(spec.label, spec.n_samples);
  }

  LabeledPoints out;
  out.points.resize(cfg.gmm.dim(), spec.n_samples);
  Eigen::Index col = 0;
  for (const auto& [label, count] : parts) {
    sc.label = label;
    sc.n_samples = count;
    PointSet x;
    if (spec.mode == SamplerMode::ode_solver) {
      x = ode_solver_sample(teacher, spec.solver, sc, rng);
    } else {
      if (!student) throw argument_error("sampler '" + spec.name + "' needs a student checkpoint (--checkpoint)");
      const TcfOrder order = student->takes_end_time() ? TcfOrder::tcfsplus : cfg.distill.order;
      const TcfParameterization tcf(order, *student);
      x = spec.mode == SamplerMode::sss ? sss_sample(tcf, sc, rng) : multistep_consistency_sample(tcf, sc, rng);
    }
    out.points.middleCols(col, count) = x;
    col += count;
    if (label != null_label || spec.all_labels) out.labels.insert(out.labels.end(), static_cast<std::size_t>(count), label);
  }
  return out;
}

namespace {

/// Student checkpoint with inference weights (the EMA shadow when present).
struct LoadedStudent {
  std::unique_ptr<DenoiserModel> model;
  std::unique_ptr<NetworkDenoiser> denoiser;
};

LoadedStudent load_student(const ExperimentConfig& cfg, const std::string& path) {
  Checkpoint ck = checkpoint_load(path, cfg.distill.model);
  LoadedStudent out;
  out.model = std::make_unique<DenoiserModel>(std::move(ck.model));
  if (ck.ema) out.model->parameters() = ck.ema->shadow;
  out.denoiser = std::make_unique<NetworkDenoiser>(*out.model, cfg.schedule);
  return out;
}

struct LoadedTeacher {
  std::unique_ptr<DenoiserModel> model;
  std::unique_ptr<Denoiser> denoiser;
};

LoadedTeacher load_teacher(const ExperimentConfig& cfg) {
  LoadedTeacher out;
  if (cfg.distill.teacher_checkpoint) {
    out.model = std::make_unique<DenoiserModel>(checkpoint_load(*cfg.distill.teacher_checkpoint).model);
    out.denoiser = std::make_unique<NetworkDenoiser>(*out.model, cfg.schedule);
  } else {
    out.denoiser = std::make_unique<OracleDenoiser>(cfg.gmm, cfg.schedule);
  }
  return out;
}

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

bool all_finite(const std::vector<MetricReport>& rows) {
  for (const auto& r : rows)
    if (!std::isfinite(r.value)) return false;
  return true;
}

}  // namespace

CommandResult cmd_oracle_check(const ExperimentConfig& cfg) {
  const auto rows = run_oracle_checks(cfg.gmm, cfg.schedule, cfg.seed);
  CommandResult res;
  const std::string path = out_path(cfg, "oracle_check.csv");
  write_file_atomic(path, check_rows_to_csv(rows));
  res.written.push_back(path);
  std::size_t failed = 0;
  for (const auto& r : rows)
    if (!r.pass) ++failed;
  res.exit_code = failed == 0 ? 0 : 1;
  res.summary = std::to_string(rows.size() - failed) + "/" + std::to_string(rows.size()) + " checks passed";
  return res;
}

CommandResult cmd_distill(const ExperimentConfig& cfg, bool timing) {
  const DistillResult result = run_distillation(cfg.distill, cfg.gmm, cfg.schedule, timing);
  CommandResult res;
  const std::string ckpt = out_path(cfg, "student.ckpt");
  checkpoint_save(result.student, result.ema ? &*result.ema : nullptr, ckpt);
  const std::string log = out_path(cfg, "train_log.csv");
  write_file_atomic(log, records_to_csv(result.records));
  res.written = {ckpt, log};
  res.summary = "trained " + std::to_string(result.records.size()) + " iterations";
  if (!result.records.empty()) res.summary += ", final loss " + format_double(result.records.back().loss);
  return res;
}

CommandResult cmd_train_teacher(const ExperimentConfig& cfg) {
  TeacherConfig tc = cfg.teacher;
  tc.model = cfg.distill.model;
  tc.model.takes_end_time = false;
  const DenoiserModel teacher = train_teacher(tc, cfg.gmm, cfg.schedule);
  CommandResult res;
  const std::string ckpt = out_path(cfg, "teacher.ckpt");
  checkpoint_save(teacher, nullptr, ckpt);
  res.written = {ckpt};
  res.summary = "trained teacher for " + std::to_string(tc.iters) + " iterations";
  return res;
}

CommandResult cmd_sample(const ExperimentConfig& cfg, const std::optional<std::string>& checkpoint) {
  if (cfg.samplers.empty()) throw config_error("samplers: no sampler configured");
  LoadedStudent student;
  if (checkpoint) student = load_student(cfg, *checkpoint);
  const LoadedTeacher teacher = load_teacher(cfg);
  CommandResult res;
  for (std::size_t i = 0; i < cfg.samplers.size(); ++i) {
    const SamplerSpec& spec = cfg.samplers[i];
    for (int nfe : spec.nfe) {
      const std::uint64_t seed = derive_seed(cfg.seed, tag_sampler + 1000 * (i + 1) + static_cast<std::uint64_t>(nfe));
      const LabeledPoints s =
          run_sampler(cfg, spec, nfe, spec.gamma, student.denoiser.get(), *teacher.denoiser, seed);
      const std::string stem = spec.name + "_nfe" + std::to_string(nfe);
      const std::string csv = out_path(cfg, "samples_" + stem + ".csv");
      const std::string svg = out_path(cfg, "scatter_" + stem + ".svg");
      write_file_atomic(csv, samples_to_csv(s.points, s.labels));
      write_file_atomic(svg, scatter_svg(s.points, s.labels, stem));
      res.written.push_back(csv);
      res.written.push_back(svg);
    }
  }
  res.summary = "wrote " + std::to_string(res.written.size() / 2) + " sample sets";
  return res;
}

CommandResult cmd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& sample_files) {
  if (sample_files.empty()) throw argument_error("eval: no sample files given");
  std::vector<MetricReport> rows;
  for (const auto& file : sample_files) {
    const SampleTable table = samples_from_csv(read_file(file), file);
    if (table.points.rows() != cfg.gmm.dim())
      throw argument_error(file + ": sample dimension differs from the mixture dimension");
    auto metrics = compute_metrics(cfg, table.points, table.labels, cfg.seed);
    for (auto& m : metrics) m.metric += "@" + file_stem(file);
    rows.insert(rows.end(), metrics.begin(), metrics.end());
  }
  CommandResult res;
  const std::string path = out_path(cfg, "metrics.csv");
  write_file_atomic(path, metrics_to_csv(rows));
  res.written = {path};
  res.exit_code = all_finite(rows) ? 0 : 2;
  res.summary = std::to_string(rows.size()) + " metric rows";
  if (res.exit_code != 0) res.summary += " (non-finite values present)";
  return res;
}

CommandResult cmd_sweep_gamma(const ExperimentConfig& cfg, const std::optional<std::string>& checkpoint,
                              const std::vector<double>& gammas) {
  if (gammas.empty()) throw argument_error("sweep-gamma: the gamma list is empty");
  for (double g : gammas)
    if (!(g >= 0.0 && g <= 1.0)) throw argument_error("sweep-gamma: gamma " + format_double(g) + " outside [0, 1]");
  if (!checkpoint) throw argument_error("sweep-gamma needs a student checkpoint (--checkpoint)");
  const LoadedStudent student = load_student(cfg, *checkpoint);
  const LoadedTeacher teacher = load_teacher(cfg);

  SamplerSpec spec;
  spec.name = "sweep";
  for (const auto& s : cfg.samplers)
    if (s.mode == SamplerMode::sss) {
      spec = s;
      break;
    }
  spec.mode = SamplerMode::sss;
  const int nfe = spec.nfe.front();

  std::ostringstream csv;
  csv << "gamma,metric,value\n";
  std::vector<Series> series;
  bool finite = true;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    // Shared sampler seed across gammas so the curve isolates the effect of gamma.
    const std::uint64_t seed = derive_seed(cfg.seed, tag_sampler);
    const LabeledPoints s = run_sampler(cfg, spec, nfe, gammas[i], student.denoiser.get(), *teacher.denoiser, seed);
    const auto metrics = compute_metrics(cfg, s.points, s.labels, cfg.seed);
    finite = finite && all_finite(metrics);
    if (series.empty())
      for (const auto& m : metrics) series.push_back({m.metric, {}});
    for (std::size_t k = 0; k < metrics.size(); ++k) {
      csv << format_double(gammas[i]) << ',' << metrics[k].metric << ',' << format_double(metrics[k].value) << '\n';
      series[k].points.push_back({gammas[i], metrics[k].value});
    }
  }
  CommandResult res;
  const std::string csv_path = out_path(cfg, "gamma_sweep.csv");
  const std::string svg_path = out_path(cfg, "gamma_sweep.svg");
  write_file_atomic(csv_path, csv.str());
  write_file_atomic(svg_path, line_svg(series, "metric vs gamma (NFE " + std::to_string(nfe) + ")", "gamma", "value"));
  res.written = {csv_path, svg_path};
  res.exit_code = finite ? 0 : 2;
  res.summary = std::to_string(gammas.size()) + " gamma values";
  return res;
}

}  // namespace tcd
