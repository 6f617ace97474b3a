// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <mutex>
#include <string>
#include <vector>

#include "ccrt/backend.hpp"

namespace ccrt::backend {

//
// Two-layer conditioned perceptron over a flattened latent:
//
//   z   = [x | sum of token embeddings | sinusoidal t features]
//   h   = act(W1 z + b1)          act in {tanh, identity}
//   eps = W2 h + b2
//
// Parameters live in one flat vector [W1 | b1 | W2 | b2 | embed] so hashing,
// checkpointing, SGD and finite-difference probes all see the same layout.
// Token embeddings are summed, not averaged: an empty condition text yields a
// zero conditioning vector, which makes empty-text conditioning bit-identical
// to the unconditional path.
//
class ToyModel final : public TrainableModel {
 public:
  explicit ToyModel(const ToyConfig& cfg);

  // Model
  std::string backend_kind() const override { return "toy"; }
  const std::vector<int>& latent_shape() const override { return cfg_.latent_shape; }
  int latent_size() const override { return latent_size_; }
  int t_max() const override { return cfg_.t_max; }
  double alpha_bar(int t) const override;
  std::string content_hash() const override;
  std::vector<double> predict(std::span<const double> x, const Condition* cond,
                              int t) const override;
  std::unique_ptr<Model> clone() const override;
  nlohmann::json arch_json() const override;
  std::vector<double> export_params() const override;
  void import_params(const std::vector<double>& params) override;

  // TrainableModel
  std::size_t param_count() const override { return params_.size(); }
  double param(std::size_t i) const override { return params_.at(i); }
  void set_param(std::size_t i, double v) override;
  void add_to_params(std::span<const double> delta) override;
  ParamSegment param_segment(const std::string& name) const override;
  std::vector<double> forward_cached(std::span<const double> x,
                                     const Condition* cond, int t,
                                     ForwardCache& cache) const override;
  void backward(const ForwardCache& cache, std::span<const double> dpred,
                std::span<double> grad) const override;

  static ToyConfig config_from_arch(const nlohmann::json& arch);

  static constexpr int kTimeFeatures = 8;

 private:
  int input_dim() const { return latent_size_ + cfg_.embed_dim + kTimeFeatures; }
  void time_features(int t, double* out) const;
  std::vector<double> condition_vector(const Condition* cond,
                                       std::vector<std::size_t>* rows) const;
  void mark_dirty();

  ToyConfig cfg_;
  int latent_size_ = 0;
  bool linear_ = false;

  std::vector<double> params_;
  ParamSegment w1_, b1_, w2_, b2_, embed_;
  std::vector<double> beta_;       // per-step noise schedule
  std::vector<double> alpha_bar_;  // cumulative products

  mutable std::mutex hash_mutex_;
  mutable std::string hash_cache_;
  mutable bool hash_dirty_ = true;
};

}  // namespace ccrt::backend
