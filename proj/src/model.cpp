#include "tcd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "tcd/io.hpp"

namespace tcd {

namespace {

Mat silu(const Mat& x) { return (x.array() / (1.0 + (-x.array()).exp())).matrix(); }

Mat silu_grad(const Mat& x) {
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
  return (sig * (1.0 + x.array() * (1.0 - sig))).matrix();
}

std::string hidden_name(Eigen::Index l, const char* what) {
  return "hidden" + std::to_string(l) + "." + what;
}

}  // namespace

Mat timestep_embedding(const Vec& t, Eigen::Index dim) {
  if (dim < 2 || dim % 2 != 0) throw argument_error("embedding dimension must be even and positive");
  const Eigen::Index half = dim / 2;
  Mat emb(dim, t.size());
  for (Eigen::Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      const double arg = 1000.0 * t(j) * freq;
      emb(k, j) = std::sin(arg);
      emb(half + k, j) = std::cos(arg);
    }
  }
  return emb;
}

DenoiserModel::DenoiserModel(ModelConfig cfg) : cfg_(cfg) {
  if (cfg_.data_dim < 1 || cfg_.hidden_width < 1 || cfg_.depth < 1)
    throw argument_error("model dimensions must be positive");
  if (cfg_.embed_dim < 2 || cfg_.embed_dim % 2 != 0) throw argument_error("embed_dim must be even and >= 2");
  if (cfg_.takes_label && cfg_.num_classes < 1) throw argument_error("a labelled model needs num_classes >= 1");

  const Eigen::Index d = cfg_.data_dim, h = cfg_.hidden_width, e = cfg_.embed_dim;
  Eigen::Index offset = 0;
  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  add("in.weight", h, d);
  add("in.bias", h, 1);
  for (Eigen::Index l = 1; l < cfg_.depth; ++l) {
    add(hidden_name(l, "weight"), h, h);
    add(hidden_name(l, "bias"), h, 1);
  }
  add("out.weight", d, h);
  add("out.bias", d, 1);
  add("t_embed.weight", h, e);
  add("t_embed.bias", h, 1);
  if (cfg_.takes_end_time) {
    add("s_embed.weight1", h, e);
    add("s_embed.bias1", h, 1);
    add("s_embed.weight2", h, h);
    add("s_embed.bias2", h, 1);
  }
  if (cfg_.takes_label) add("label_embed", h, cfg_.num_classes + 1);
  params_ = Vec::Zero(offset);
}

std::size_t DenoiserModel::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw argument_error("no parameter block named " + name);
}

DenoiserModel DenoiserModel::initialize(const ModelConfig& cfg, std::uint64_t seed, bool zero_head) {
  DenoiserModel model(cfg);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.blocks_.size(); ++i) {
    const auto& b = model.blocks_[i];
    auto w = model.block(i);
    const bool is_bias = b.name.find("bias") != std::string::npos;
    if (is_bias) continue;
    if (zero_head && b.name == "out.weight") continue;
    const double scale = b.name == "label_embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (Eigen::Index c = 0; c < b.cols; ++c)
      for (Eigen::Index r = 0; r < b.rows; ++r) w(r, c) = scale * rng.normal();
  }
  return model;
}

PointSet DenoiserModel::forward(const PointSet& x, const Vec& t, const Vec& end_time,
                                std::span<const Label> labels) const {
  ForwardCache cache;
  return forward(x, t, end_time, labels, cache);
}

PointSet DenoiserModel::forward(const PointSet& x, const Vec& t, const Vec& end_time,
                                std::span<const Label> labels, ForwardCache& cache) const {
  if (x.rows() != cfg_.data_dim)
    throw argument_error("model expects " + std::to_string(cfg_.data_dim) + "-dimensional points, got " +
                         std::to_string(x.rows()));
  const Eigen::Index n = x.cols();
  if (t.size() != n) throw argument_error("model forward: one time per point required");
  if (cfg_.takes_end_time && end_time.size() != n)
    throw argument_error("model forward: this model requires one end time per point");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != n)
    throw argument_error("model forward: one label per point required");

  std::size_t bi = 0;
  auto next = [&]() { return block(bi++); };

  cache.input = x;
  const auto w_in = next();
  const auto b_in = next();
  std::vector<std::pair<Eigen::Map<const Mat>, Eigen::Map<const Mat>>> hidden;
  for (Eigen::Index l = 1; l < cfg_.depth; ++l) {
    auto w = next();
    auto b = next();
    hidden.emplace_back(w, b);
  }
  const auto w_out = next();
  const auto b_out = next();
  const auto w_te = next();
  const auto b_te = next();

  cache.embed_t = timestep_embedding(t, cfg_.embed_dim);
  Mat cond = (w_te * cache.embed_t).colwise() + b_te.col(0);
  if (cfg_.takes_end_time) {
    const auto w_s1 = next();
    const auto b_s1 = next();
    const auto w_s2 = next();
    const auto b_s2 = next();
    cache.embed_s = timestep_embedding(end_time, cfg_.embed_dim);
    cache.pre_s = (w_s1 * cache.embed_s).colwise() + b_s1.col(0);
    cond += (w_s2 * silu(cache.pre_s)).colwise() + b_s2.col(0);
  }
  cache.label_slots.clear();
  if (cfg_.takes_label) {
    const auto table = next();
    cache.label_slots.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const Label label = labels.empty() ? null_label : labels[static_cast<std::size_t>(j)];
      if (label != null_label && (label < 0 || label >= cfg_.num_classes))
        throw argument_error("label " + std::to_string(label) + " outside model classes");
      const Eigen::Index slot = label == null_label ? cfg_.num_classes : label;
      cache.label_slots[static_cast<std::size_t>(j)] = slot;
      cond.col(j) += table.col(slot);
    }
  } else {
    for (Label label : labels)
      if (label != null_label) throw argument_error("model without label input received a class label");
  }

  cache.pre.assign(static_cast<std::size_t>(cfg_.depth), Mat());
  cache.act.assign(static_cast<std::size_t>(cfg_.depth), Mat());
  cache.pre[0] = ((w_in * x).colwise() + b_in.col(0)) + cond;
  cache.act[0] = silu(cache.pre[0]);
  for (std::size_t l = 1; l < cache.pre.size(); ++l) {
    const auto& [w, b] = hidden[l - 1];
    cache.pre[l] = ((w * cache.act[l - 1]).colwise() + b.col(0)) + cond;
    cache.act[l] = silu(cache.pre[l]);
  }
  PointSet out = (w_out * cache.act.back()).colwise() + b_out.col(0);
  if (cfg_.velocity_head) {
    // eps = sigma_t x + alpha_t F keeps x0 = alpha_t x - sigma_t F bounded as alpha_t -> 0.
    for (Eigen::Index j = 0; j < n; ++j)
      out.col(j) = cosine_sigma(t(j)) * x.col(j) + cosine_alpha(t(j)) * out.col(j);
    cache.head_scale = t.unaryExpr([](double v) { return cosine_alpha(v); });
    cache.skip_scale = t.unaryExpr([](double v) { return cosine_sigma(v); });
  }
  return out;
}

Vec DenoiserModel::backward(const ForwardCache& cache, const PointSet& d_out, PointSet* d_input) const {
  Vec grad = Vec::Zero(params_.size());
  auto gblock = [&](std::size_t i) -> Eigen::Map<Mat> {
    return {grad.data() + blocks_[i].offset, blocks_[i].rows, blocks_[i].cols};
  };
  const std::size_t depth = static_cast<std::size_t>(cfg_.depth);
  // Block indices follow the constructor's declaration order.
  const std::size_t i_in = 0;
  auto i_hidden = [](std::size_t l) { return 2 * l; };  // weight of hidden layer l (l >= 1)
  const std::size_t i_out = 2 * depth;
  const std::size_t i_te = i_out + 2;
  const std::size_t i_s = i_te + 2;
  const std::size_t i_label = cfg_.takes_end_time ? i_s + 4 : i_s;

  const PointSet d_head = cfg_.velocity_head ? scale_columns(d_out, cache.head_scale) : d_out;
  gblock(i_out) = d_head * cache.act.back().transpose();
  gblock(i_out + 1) = d_head.rowwise().sum();
  Mat d_act = block(i_out).transpose() * d_head;
  Mat d_cond = Mat::Zero(cfg_.hidden_width, d_out.cols());
  for (std::size_t l = depth; l-- > 0;) {
    const Mat d_pre = d_act.cwiseProduct(silu_grad(cache.pre[l]));
    d_cond += d_pre;
    if (l > 0) {
      gblock(i_hidden(l)) = d_pre * cache.act[l - 1].transpose();
      gblock(i_hidden(l) + 1) = d_pre.rowwise().sum();
      d_act = block(i_hidden(l)).transpose() * d_pre;
    } else {
      gblock(i_in) = d_pre * cache.input.transpose();
      gblock(i_in + 1) = d_pre.rowwise().sum();
      if (d_input) {
        *d_input = block(i_in).transpose() * d_pre;
        if (cfg_.velocity_head) *d_input += scale_columns(d_out, cache.skip_scale);
      }
    }
  }
  gblock(i_te) = d_cond * cache.embed_t.transpose();
  gblock(i_te + 1) = d_cond.rowwise().sum();
  if (cfg_.takes_end_time) {
    gblock(i_s + 2) = d_cond * silu(cache.pre_s).transpose();
    gblock(i_s + 3) = d_cond.rowwise().sum();
    const Mat d_pre_s = (block(i_s + 2).transpose() * d_cond).cwiseProduct(silu_grad(cache.pre_s));
    gblock(i_s) = d_pre_s * cache.embed_s.transpose();
    gblock(i_s + 1) = d_pre_s.rowwise().sum();
  }
  if (cfg_.takes_label) {
    auto table = gblock(i_label);
    for (Eigen::Index j = 0; j < d_cond.cols(); ++j)
      table.col(cache.label_slots[static_cast<std::size_t>(j)]) += d_cond.col(j);
  }
  return grad;
}

OptimizerState OptimizerState::for_model(const DenoiserModel& model, AdamWConfig cfg) {
  return {cfg, Vec::Zero(model.parameter_count()), Vec::Zero(model.parameter_count()), 0};
}

void opt_step(OptimizerState& state, DenoiserModel& model, const Vec& gradient) {
  const Eigen::Index n = model.parameter_count();
  if (gradient.size() != n || state.m.size() != n || state.v.size() != n)
    throw argument_error("optimizer step: gradient/state shape differs from model parameters");
  const auto& c = state.cfg;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * gradient;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * gradient.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  Vec& p = model.parameters();
  p *= (1.0 - c.lr * c.weight_decay);
  p.array() -= c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

void ema_update(EmaState& ema, const DenoiserModel& model) {
  if (ema.shadow.size() != model.parameter_count())
    throw argument_error("EMA shadow shape differs from model parameters");
  if (!(ema.decay >= 0.0 && ema.decay <= 1.0)) throw argument_error("EMA decay must lie in [0, 1]");
  if (ema.decay == 1.0) return;
  ema.shadow = ema.decay * ema.shadow + (1.0 - ema.decay) * model.parameters();
}

LossAndGradient regression_loss_gradients(const DenoiserModel& model, const PointSet& x, const Vec& t,
                                          const Vec& end_time, std::span<const Label> labels,
                                          const PointSet& target) {
  ForwardCache cache;
  const PointSet out = model.forward(x, t, end_time, labels, cache);
  if (out.rows() != target.rows() || out.cols() != target.cols())
    throw argument_error("regression target shape differs from model output");
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  const PointSet diff = out - target;
  return {diff.squaredNorm() * inv_n, model.backward(cache, 2.0 * inv_n * diff)};
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char magic[4] = {'T', 'C', 'D', 'L'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw io_error("checkpoint " + path_ + " is truncated");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  void expect_end() const {
    if (pos_ != data_.size()) throw io_error("checkpoint " + path_ + " has trailing bytes");
  }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void checkpoint_save(const DenoiserModel& model, const EmaState* ema, const std::string& path) {
  const auto& c = model.config();
  std::string out(magic, sizeof(magic));
  put<std::uint32_t>(out, checkpoint_version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.data_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.hidden_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.depth));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.embed_dim));
  put<std::uint32_t>(out, (c.takes_end_time ? 1u : 0u) | (c.takes_label ? 2u : 0u) | (c.velocity_head ? 4u : 0u));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.num_classes));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.parameter_count()));
  put<std::uint32_t>(out, ema ? 1u : 0u);
  put<double>(out, ema ? ema->decay : 0.0);
  for (double v : model.parameters()) put<double>(out, v);
  if (ema) {
    if (ema->shadow.size() != model.parameter_count()) throw argument_error("EMA shadow shape differs from model");
    for (double v : ema->shadow) put<double>(out, v);
  }
  write_file_atomic(path, out);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(magic) || std::memcmp(data.data(), magic, sizeof(magic)) != 0)
    throw io_error("checkpoint " + path + " has a bad magic string");
  Reader r(data.substr(sizeof(magic)), path);
  const auto version = r.get<std::uint32_t>();
  if (version != checkpoint_version)
    throw io_error("checkpoint " + path + " has unsupported version " + std::to_string(version));
  ModelConfig cfg;
  cfg.data_dim = r.get<std::uint32_t>();
  cfg.hidden_width = r.get<std::uint32_t>();
  cfg.depth = r.get<std::uint32_t>();
  cfg.embed_dim = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  cfg.takes_end_time = (flags & 1u) != 0;
  cfg.takes_label = (flags & 2u) != 0;
  cfg.velocity_head = (flags & 4u) != 0;
  cfg.num_classes = static_cast<int>(r.get<std::uint32_t>());
  const auto count = r.get<std::uint64_t>();
  const bool has_ema = r.get<std::uint32_t>() != 0;
  const double decay = r.get<double>();

  Checkpoint ck{DenoiserModel(cfg), std::nullopt};
  if (count != static_cast<std::uint64_t>(ck.model.parameter_count()))
    throw io_error("checkpoint " + path + " parameter count " + std::to_string(count) +
                   " does not match its header architecture");
  for (auto& v : ck.model.parameters()) v = r.get<double>();
  if (has_ema) {
    EmaState ema{Vec(ck.model.parameter_count()), decay};
    for (auto& v : ema.shadow) v = r.get<double>();
    ck.ema = std::move(ema);
  }
  r.expect_end();
  return ck;
}

Checkpoint checkpoint_load(const std::string& path, const ModelConfig& expected) {
  Checkpoint ck = checkpoint_load(path);
  const auto& got = ck.model.config();
  if (!(got == expected))
    throw argument_error("checkpoint " + path + " shape mismatch: stored data_dim=" + std::to_string(got.data_dim) +
                         " width=" + std::to_string(got.hidden_width) + " depth=" + std::to_string(got.depth) +
                         ", expected data_dim=" + std::to_string(expected.data_dim) +
                         " width=" + std::to_string(expected.hidden_width) +
                         " depth=" + std::to_string(expected.depth));
  return ck;
}

}  // namespace tcd
