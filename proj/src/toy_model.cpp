// SPDX-License-Identifier: Apache-2.0
#include "toy_model.hpp"

#include <cctype>
#include <cmath>

#include "ccrt/digest.hpp"
#include "ccrt/numeric.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::backend {

namespace {
constexpr double kPi = 3.14159265358979323846;
// Noise schedule endpoints, sized for short (~50 step) chains so that
// alpha_bar decays from ~1 to a few percent across the range.
constexpr double kBetaMin = 2e-3;
constexpr double kBetaMax = 0.15;
}  // namespace

ToyModel::ToyModel(const ToyConfig& cfg) : cfg_(cfg) {
  if (cfg_.latent_shape.empty()) throw ConfigError("toy backend: empty latent shape");
  latent_size_ = 1;
  for (int d : cfg_.latent_shape) {
    if (d <= 0) throw ConfigError("toy backend: latent dims must be positive");
    latent_size_ *= d;
  }
  if (cfg_.t_max < 2) throw ConfigError("toy backend: t_max must be >= 2");
  if (cfg_.hidden_dim < 1 || cfg_.embed_dim < 1 || cfg_.vocab_size < 1)
    throw ConfigError("toy backend: dims must be positive");
  if (cfg_.activation == "linear") {
    linear_ = true;
  } else if (cfg_.activation != "tanh") {
    throw ConfigError("toy backend: unknown activation '" + cfg_.activation + "'");
  }

  const std::size_t d = static_cast<std::size_t>(input_dim());
  const std::size_t h = static_cast<std::size_t>(cfg_.hidden_dim);
  const std::size_t o = static_cast<std::size_t>(latent_size_);
  const std::size_t v = static_cast<std::size_t>(cfg_.vocab_size);
  const std::size_t e = static_cast<std::size_t>(cfg_.embed_dim);

  w1_ = {0, h * d};
  b1_ = {w1_.offset + w1_.size, h};
  w2_ = {b1_.offset + b1_.size, o * h};
  b2_ = {w2_.offset + w2_.size, o};
  embed_ = {b2_.offset + b2_.size, v * e};
  params_.assign(embed_.offset + embed_.size, 0.0);

  Rng rng(derive_seed(cfg_.init_seed, std::string_view("toy-init")));
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t i = 0; i < w1_.size; ++i)
    params_[w1_.offset + i] = w1_scale * rng.normal();
  for (std::size_t i = 0; i < w2_.size; ++i)
    params_[w2_.offset + i] = w2_scale * rng.normal();
  for (std::size_t i = 0; i < embed_.size; ++i)
    params_[embed_.offset + i] = cfg_.embed_scale * rng.normal();

  beta_.resize(cfg_.t_max);
  alpha_bar_.resize(cfg_.t_max);
  double prod = 1.0;
  for (int t = 0; t < cfg_.t_max; ++t) {
    beta_[t] = kBetaMin + (kBetaMax - kBetaMin) * static_cast<double>(t) /
                              static_cast<double>(cfg_.t_max - 1);
    prod *= (1.0 - beta_[t]);
    alpha_bar_[t] = prod;
  }
}

double ToyModel::alpha_bar(int t) const {
  if (t < 0 || t >= cfg_.t_max) throw InputError("alpha_bar: timestep out of range");
  return alpha_bar_[t];
}

void ToyModel::mark_dirty() {
  std::lock_guard<std::mutex> lock(hash_mutex_);
  hash_dirty_ = true;
}

std::string ToyModel::content_hash() const {
  std::lock_guard<std::mutex> lock(hash_mutex_);
  if (hash_dirty_) {
    // Architecture dims are folded in so models of different shape never
    // collide even with identical parameter bytes.
    std::string preimage = arch_json().dump();
    preimage += sha256_hex(params_);
    hash_cache_ = sha256_hex(preimage);
    hash_dirty_ = false;
  }
  return hash_cache_;
}

void ToyModel::time_features(int t, double* out) const {
  const double theta = 2.0 * kPi * static_cast<double>(t) /
                       static_cast<double>(cfg_.t_max);
  double freq = 1.0;
  for (int k = 0; k < kTimeFeatures / 2; ++k) {
    out[2 * k] = std::sin(theta * freq);
    out[2 * k + 1] = std::cos(theta * freq);
    freq *= 2.0;
  }
}

std::vector<double> ToyModel::condition_vector(
    const Condition* cond, std::vector<std::size_t>* rows) const {
  std::vector<double> vec(static_cast<std::size_t>(cfg_.embed_dim), 0.0);
  if (cond == nullptr || cond->kind == ConditionKind::kUnconditional) return vec;
  for (const std::string& tok : tokenize_condition(cond->text)) {
    std::size_t row = static_cast<std::size_t>(
        fnv1a64(tok) % static_cast<std::uint64_t>(cfg_.vocab_size));
    if (rows) rows->push_back(row);
    const double* e = params_.data() + embed_.offset +
                      row * static_cast<std::size_t>(cfg_.embed_dim);
    for (int k = 0; k < cfg_.embed_dim; ++k) vec[static_cast<std::size_t>(k)] += e[k];
  }
  return vec;
}

std::vector<double> ToyModel::forward_cached(std::span<const double> x,
                                             const Condition* cond, int t,
                                             ForwardCache& cache) const {
  if (static_cast<int>(x.size()) != latent_size_)
    throw InputError("toy backend: latent shape mismatch");
  if (t < 0 || t >= cfg_.t_max)
    throw InputError("toy backend: timestep out of range");

  const int d = input_dim();
  const int h = cfg_.hidden_dim;
  const int o = latent_size_;

  cache.token_rows.clear();
  cache.timestep = t;
  cache.input.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < o; ++i) cache.input[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
  std::vector<double> cvec = condition_vector(cond, &cache.token_rows);
  for (int k = 0; k < cfg_.embed_dim; ++k)
    cache.input[static_cast<std::size_t>(o + k)] = cvec[static_cast<std::size_t>(k)];
  time_features(t, cache.input.data() + o + cfg_.embed_dim);

  cache.hidden_pre.assign(static_cast<std::size_t>(h), 0.0);
  const double* w1 = params_.data() + w1_.offset;
  const double* b1 = params_.data() + b1_.offset;
  for (int j = 0; j < h; ++j) {
    double acc = b1[j];
    const double* row = w1 + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
    for (int i = 0; i < d; ++i) acc += row[i] * cache.input[static_cast<std::size_t>(i)];
    cache.hidden_pre[static_cast<std::size_t>(j)] = acc;
  }
  cache.hidden = cache.hidden_pre;
  if (!linear_) {
    for (double& v : cache.hidden) v = std::tanh(v);
  }

  std::vector<double> out(static_cast<std::size_t>(o), 0.0);
  const double* w2 = params_.data() + w2_.offset;
  const double* b2 = params_.data() + b2_.offset;
  for (int i = 0; i < o; ++i) {
    double acc = b2[i] + cfg_.skip_gain * x[static_cast<std::size_t>(i)];
    const double* row = w2 + static_cast<std::size_t>(i) * static_cast<std::size_t>(h);
    for (int j = 0; j < h; ++j) acc += row[j] * cache.hidden[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

std::vector<double> ToyModel::predict(std::span<const double> x,
                                      const Condition* cond, int t) const {
  ForwardCache cache;
  std::vector<double> out = forward_cached(x, cond, t, cache);
  if (!all_finite(out)) throw BackendFault("toy backend: non-finite prediction");
  return out;
}

void ToyModel::backward(const ForwardCache& cache, std::span<const double> dpred,
                        std::span<double> grad) const {
  const int d = input_dim();
  const int h = cfg_.hidden_dim;
  const int o = latent_size_;
  if (static_cast<int>(dpred.size()) != o)
    throw InputError("toy backend: gradient size mismatch");
  if (grad.size() != params_.size())
    throw InputError("toy backend: grad buffer size mismatch");

  const double* w2 = params_.data() + w2_.offset;
  double* gw2 = grad.data() + w2_.offset;
  double* gb2 = grad.data() + b2_.offset;
  std::vector<double> dhidden(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < o; ++i) {
    const double g = dpred[static_cast<std::size_t>(i)];
    gb2[i] += g;
    const double* row = w2 + static_cast<std::size_t>(i) * static_cast<std::size_t>(h);
    double* grow = gw2 + static_cast<std::size_t>(i) * static_cast<std::size_t>(h);
    for (int j = 0; j < h; ++j) {
      grow[j] += g * cache.hidden[static_cast<std::size_t>(j)];
      dhidden[static_cast<std::size_t>(j)] += g * row[j];
    }
  }

  // d(tanh)/dpre = 1 - tanh^2
  if (!linear_) {
    for (int j = 0; j < h; ++j) {
      const double th = cache.hidden[static_cast<std::size_t>(j)];
      dhidden[static_cast<std::size_t>(j)] *= (1.0 - th * th);
    }
  }

  const double* w1 = params_.data() + w1_.offset;
  double* gw1 = grad.data() + w1_.offset;
  double* gb1 = grad.data() + b1_.offset;
  std::vector<double> dcond(static_cast<std::size_t>(cfg_.embed_dim), 0.0);
  for (int j = 0; j < h; ++j) {
    const double g = dhidden[static_cast<std::size_t>(j)];
    if (g == 0.0) continue;
    gb1[j] += g;
    const double* row = w1 + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
    double* grow = gw1 + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
    for (int i = 0; i < d; ++i) grow[i] += g * cache.input[static_cast<std::size_t>(i)];
    for (int k = 0; k < cfg_.embed_dim; ++k)
      dcond[static_cast<std::size_t>(k)] += g * row[o + k];
  }

  double* gembed = grad.data() + embed_.offset;
  for (std::size_t row : cache.token_rows) {
    double* gr = gembed + row * static_cast<std::size_t>(cfg_.embed_dim);
    for (int k = 0; k < cfg_.embed_dim; ++k) gr[k] += dcond[static_cast<std::size_t>(k)];
  }
}

void ToyModel::set_param(std::size_t i, double v) {
  params_.at(i) = v;
  mark_dirty();
}

void ToyModel::add_to_params(std::span<const double> delta) {
  if (delta.size() != params_.size())
    throw InputError("toy backend: parameter update size mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] += delta[i];
  mark_dirty();
}

ParamSegment ToyModel::param_segment(const std::string& name) const {
  if (name == "w1") return w1_;
  if (name == "b1") return b1_;
  if (name == "w2") return w2_;
  if (name == "b2") return b2_;
  if (name == "embed") return embed_;
  throw InputError("toy backend: unknown parameter segment '" + name + "'");
}

std::unique_ptr<Model> ToyModel::clone() const {
  auto copy = std::make_unique<ToyModel>(cfg_);
  copy->params_ = params_;
  return copy;
}

nlohmann::json ToyModel::arch_json() const {
  return nlohmann::json{{"kind", "toy"},
                        {"latent_shape", cfg_.latent_shape},
                        {"t_max", cfg_.t_max},
                        {"hidden_dim", cfg_.hidden_dim},
                        {"embed_dim", cfg_.embed_dim},
                        {"vocab_size", cfg_.vocab_size},
                        {"activation", cfg_.activation},
                        {"embed_scale", cfg_.embed_scale},
                        {"skip_gain", cfg_.skip_gain},
                        {"init_seed", cfg_.init_seed}};
}

ToyConfig ToyModel::config_from_arch(const nlohmann::json& arch) {
  ToyConfig cfg;
  cfg.latent_shape = arch.at("latent_shape").get<std::vector<int>>();
  cfg.t_max = arch.at("t_max").get<int>();
  cfg.hidden_dim = arch.at("hidden_dim").get<int>();
  cfg.embed_dim = arch.at("embed_dim").get<int>();
  cfg.vocab_size = arch.at("vocab_size").get<int>();
  cfg.activation = arch.at("activation").get<std::string>();
  cfg.embed_scale = arch.value("embed_scale", 1.0);
  cfg.skip_gain = arch.value("skip_gain", 0.0);
  cfg.init_seed = arch.at("init_seed").get<std::uint64_t>();
  return cfg;
}

std::vector<double> ToyModel::export_params() const { return params_; }

void ToyModel::import_params(const std::vector<double>& params) {
  if (params.size() != params_.size())
    throw CorruptionError("toy backend: parameter blob size mismatch");
  params_ = params;
  mark_dirty();
}

}  // namespace ccrt::backend
