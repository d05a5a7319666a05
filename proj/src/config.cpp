#include "tcd/config.hpp"

#include <set>

#include <json.hpp>

#include "tcd/io.hpp"

namespace tcd {

using json = nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed ^ (tag * 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) { throw config_error(path + ": " + why); }

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Reads keys from one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key) && !node_.at(key).is_null();
  }

  const json& at(const std::string& key) {
    if (!has(key)) fail(join(path_, key), "missing required key");
    return node_.at(key);
  }

  std::string key_path(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key, double fallback) { return has(key) ? as_number(key) : fallback; }
  double number(const std::string& key) {
    at(key);
    return as_number(key);
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) { return has(key) ? as_integer(key) : fallback; }
  std::int64_t integer(const std::string& key) {
    at(key);
    return as_integer(key);
  }

  std::uint64_t unsigned_integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      fail(key_path(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!node_.at(key).is_boolean()) fail(key_path(key), "expected true or false");
    return node_.at(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) { return has(key) ? as_string(key) : fallback; }
  std::string string(const std::string& key) {
    at(key);
    return as_string(key);
  }

  void finish() const {
    for (const auto& item : node_.items())
      if (!seen_.count(item.key())) fail(key_path(item.key()), "unknown key");
  }

 private:
  double as_number(const std::string& key) const {
    const json& v = node_.at(key);
    if (!v.is_number()) fail(key_path(key), "expected a number");
    return v.get<double>();
  }
  std::int64_t as_integer(const std::string& key) const {
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail(key_path(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::string as_string(const std::string& key) const {
    const json& v = node_.at(key);
    if (!v.is_string()) fail(key_path(key), "expected a string");
    return v.get<std::string>();
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Vec read_vector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of numbers");
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(path + "[" + std::to_string(i) + "]", "expected a number");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

template <typename Fn>
auto rethrow_as_config(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const argument_error& e) {
    fail(path, e.what());
  }
}

GaussianMixture parse_gmm(const json& node) {
  ObjectReader r(node, "gmm");
  if (r.has("preset")) {
    const std::string preset = r.string("preset");
    if (preset != "ring") fail("gmm.preset", "unknown preset '" + preset + "' (expected ring)");
    const auto modes = r.integer("modes", 8);
    const double radius = r.number("radius", 2.0);
    const double stddev = r.number("std", 0.1);
    const bool labeled = r.boolean("labeled", false);
    r.finish();
    if (modes < 1) fail("gmm.modes", "must be positive");
    if (!(radius > 0.0)) fail("gmm.radius", "must be positive");
    if (!(stddev > 0.0)) fail("gmm.std", "must be positive");
    return GaussianMixture::ring(static_cast<int>(modes), radius, stddev, labeled);
  }
  const json& list = r.at("components");
  r.finish();
  if (!list.is_array() || list.empty()) fail("gmm.components", "expected a non-empty array");
  std::vector<MixtureComponent> comps;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "gmm.components[" + std::to_string(i) + "]";
    ObjectReader c(list[i], path);
    MixtureComponent mc;
    mc.weight = c.number("weight");
    mc.mean = read_vector(c.at("mean"), path + ".mean");
    if (c.has("var")) {
      mc.var = read_vector(c.at("var"), path + ".var");
      if (c.has("std")) fail(path + ".std", "give either var or std, not both");
    } else {
      const double s = c.number("std");
      mc.var = Vec::Constant(mc.mean.size(), s * s);
    }
    if (c.has("label")) mc.label = static_cast<Label>(c.integer("label"));
    c.finish();
    comps.push_back(std::move(mc));
  }
  return rethrow_as_config("gmm", [&] { return GaussianMixture(std::move(comps)); });
}

NoiseSchedule parse_schedule(const json& node) {
  ObjectReader r(node, "schedule");
  const std::string kind = r.string("kind", "cosine");
  if (kind != "cosine") fail("schedule.kind", "only the cosine schedule is available");
  const double t_min = r.number("t_min", NoiseSchedule::default_t_min);
  const double t_max = r.number("t_max", NoiseSchedule::default_t_max);
  r.finish();
  return rethrow_as_config("schedule", [&] { return NoiseSchedule(t_min, t_max); });
}

ModelConfig parse_model(const json& node, ModelConfig base) {
  ObjectReader r(node, "distill.model");
  base.hidden_width = r.integer("hidden_width", base.hidden_width);
  base.depth = r.integer("depth", base.depth);
  base.embed_dim = r.integer("embed_dim", base.embed_dim);
  const std::string head = r.string("head", "eps");
  if (head == "eps") base.velocity_head = false;
  else if (head == "velocity") base.velocity_head = true;
  else fail("distill.model.head", "expected eps or velocity, got '" + head + "'");
  r.finish();
  if (base.hidden_width < 1) fail("distill.model.hidden_width", "must be positive");
  if (base.depth < 1) fail("distill.model.depth", "must be positive");
  if (base.embed_dim < 2 || base.embed_dim % 2 != 0) fail("distill.model.embed_dim", "must be a positive even number");
  return base;
}

TeacherConfig parse_teacher(const json& node, std::uint64_t seed) {
  ObjectReader r(node, "distill.teacher_training");
  TeacherConfig t;
  t.seed = seed;
  t.iters = static_cast<int>(r.integer("iters", t.iters));
  t.batch = static_cast<int>(r.integer("batch", t.batch));
  t.lr = r.number("lr", t.lr);
  t.condition_dropout = r.number("condition_dropout", t.condition_dropout);
  r.finish();
  if (t.iters < 0) fail("distill.teacher_training.iters", "must be non-negative");
  if (t.batch < 1) fail("distill.teacher_training.batch", "must be positive");
  if (!(t.lr > 0.0)) fail("distill.teacher_training.lr", "must be positive");
  if (!(t.condition_dropout >= 0.0 && t.condition_dropout <= 1.0))
    fail("distill.teacher_training.condition_dropout", "must lie in [0, 1]");
  return t;
}

DistillConfig parse_distill(const json& node, const GaussianMixture& gmm, std::uint64_t seed,
                            TeacherConfig& teacher) {
  ObjectReader r(node, "distill");
  teacher.seed = seed;
  if (r.has("teacher_training")) teacher = parse_teacher(r.at("teacher_training"), seed);
  DistillConfig d;
  d.seed = seed;
  d.order = rethrow_as_config("distill.order", [&] { return parse_tcf_order(r.string("order", "tcf1")); });
  d.k = static_cast<int>(r.integer("k", d.k));
  d.n_train = static_cast<int>(r.integer("n_train", d.n_train));
  d.batch = static_cast<int>(r.integer("batch", d.batch));
  d.lr = r.number("lr", d.lr);
  const std::string lr_schedule = r.string("lr_schedule", "constant");
  if (lr_schedule == "cosine") d.cosine_lr = true;
  else if (lr_schedule != "constant") fail("distill.lr_schedule", "expected constant or cosine, got '" + lr_schedule + "'");
  d.weight_decay = r.number("weight_decay", d.weight_decay);
  d.iters = static_cast<int>(r.integer("iters", d.iters));
  // EMA targets by default only for the end-time parameterization.
  const std::string target = r.string("target_mode", d.order == TcfOrder::tcfsplus ? "ema" : "stop_grad");
  if (target == "stop_grad") d.target_mode = TargetMode::stop_grad;
  else if (target == "ema") d.target_mode = TargetMode::ema;
  else fail("distill.target_mode", "expected stop_grad or ema, got '" + target + "'");
  d.ema_decay = r.number("ema_decay", d.ema_decay);
  if (r.has("teacher_checkpoint")) d.teacher_checkpoint = r.string("teacher_checkpoint");
  d.teacher_solver = rethrow_as_config("distill.teacher_solver",
                                       [&] { return parse_solver_kind(r.string("teacher_solver", "ddim")); });
  d.baseline_lcm = r.boolean("baseline_lcm", false);
  if (r.has("guidance")) {
    ObjectReader g(r.at("guidance"), "distill.guidance");
    GuidanceRange range;
    range.w_min = g.number("w_min", range.w_min);
    range.w_max = g.number("w_max", range.w_max);
    g.finish();
    d.guidance_range = range;
  }
  d.condition_dropout = r.number("condition_dropout", d.condition_dropout);
  d.loss_weight = r.number("loss_weight", d.loss_weight);
  ModelConfig m;
  m.data_dim = gmm.dim();
  m.takes_end_time = d.order == TcfOrder::tcfsplus;
  m.takes_label = gmm.has_labels();
  m.num_classes = gmm.num_classes();
  d.model = r.has("model") ? parse_model(r.at("model"), m) : m;
  r.finish();
  d.validate();
  return d;
}

SamplerSpec parse_sampler(const json& node, const std::string& path, const GaussianMixture& gmm) {
  ObjectReader r(node, path);
  SamplerSpec s;
  s.name = r.string("name");
  if (s.name.empty() || s.name.find_first_of("/\\,. ") != std::string::npos)
    fail(path + ".name", "must be a non-empty identifier without separators");
  s.mode = rethrow_as_config(path + ".mode", [&] { return parse_sampler_mode(r.string("mode", "sss")); });
  if (r.has("nfe")) {
    const json& v = r.at("nfe");
    s.nfe.clear();
    if (v.is_number_integer()) {
      s.nfe.push_back(v.get<int>());
    } else if (v.is_array() && !v.empty()) {
      for (const auto& e : v) {
        if (!e.is_number_integer()) fail(path + ".nfe", "expected integers");
        s.nfe.push_back(e.get<int>());
      }
    } else {
      fail(path + ".nfe", "expected an integer or a non-empty array of integers");
    }
    for (int n : s.nfe)
      if (n < 1) fail(path + ".nfe", "must be positive");
  }
  s.gamma = r.number("gamma", s.gamma);
  if (!(s.gamma >= 0.0 && s.gamma <= 1.0)) fail(path + ".gamma", "must lie in [0, 1]");
  s.solver = rethrow_as_config(path + ".solver", [&] { return parse_solver_kind(r.string("solver", "ddim")); });
  s.n_samples = r.integer("n_samples", s.n_samples);
  if (s.n_samples < 1) fail(path + ".n_samples", "must be positive");
  if (r.has("label")) {
    const json& v = r.at("label");
    if (v.is_string() && v.get<std::string>() == "all") {
      s.all_labels = true;
    } else if (v.is_number_integer()) {
      s.label = v.get<Label>();
      if (!gmm.has_label(s.label)) fail(path + ".label", "no mixture component carries this label");
    } else {
      fail(path + ".label", "expected a class id, \"all\" or null");
    }
    if (!gmm.has_labels()) fail(path + ".label", "the mixture is unlabeled");
  }
  r.finish();
  return s;
}

MetricSpec parse_metric(const json& node, const std::string& path) {
  MetricSpec m;
  if (node.is_string()) {
    m.name = node.get<std::string>();
  } else {
    ObjectReader r(node, path);
    m.name = r.string("name");
    m.projections = static_cast<int>(r.integer("projections", m.projections));
    if (r.has("bandwidth")) m.bandwidth = r.number("bandwidth");
    m.radius = r.number("radius", m.radius);
    r.finish();
  }
  static const std::set<std::string> known{"sliced_w2", "mmd_rbf", "mode_recall", "class_accuracy"};
  if (!known.count(m.name))
    fail(path, "unknown metric '" + m.name + "' (expected sliced_w2, mmd_rbf, mode_recall or class_accuracy)");
  if (m.projections < 1) fail(path + ".projections", "must be positive");
  if (m.bandwidth && !(*m.bandwidth > 0.0)) fail(path + ".bandwidth", "must be positive");
  if (!(m.radius > 0.0)) fail(path + ".radius", "must be positive");
  return m;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw config_error("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                       e.what());
  }
  ObjectReader root(doc, "");
  ExperimentConfig cfg;
  cfg.seed = root.unsigned_integer("seed");
  cfg.gmm = parse_gmm(root.at("gmm"));
  if (root.has("schedule")) cfg.schedule = parse_schedule(root.at("schedule"));
  cfg.distill =
      parse_distill(root.has("distill") ? root.at("distill") : json::object(), cfg.gmm, cfg.seed, cfg.teacher);
  if (root.has("samplers")) {
    const json& list = root.at("samplers");
    if (!list.is_array()) fail("samplers", "expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "samplers[" + std::to_string(i) + "]";
      cfg.samplers.push_back(parse_sampler(list[i], path, cfg.gmm));
      if (!names.insert(cfg.samplers.back().name).second) fail(path + ".name", "duplicate sampler name");
    }
  }
  if (root.has("metrics")) {
    const json& list = root.at("metrics");
    if (!list.is_array()) fail("metrics", "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i)
      cfg.metrics.push_back(parse_metric(list[i], "metrics[" + std::to_string(i) + "]"));
  }
  cfg.out_dir = root.string("out_dir", cfg.out_dir);
  root.finish();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

}  // namespace tcd
