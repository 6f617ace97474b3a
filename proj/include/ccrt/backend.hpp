// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Noise-predictor backend abstraction.
//
// A ModelHandle wraps a text-conditioned diffusion noise predictor together
// with its role (frozen teacher / trainable student) and checkpoint lineage.
// The bundled "toy" backend is a small fully-differentiable predictor over a
// low-dimensional latent, designed so the whole pipeline runs in CPU seconds
// while exercising every interface a real backend would.
//

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccrt/errors.hpp"

namespace ccrt::backend {

enum class Role { kTeacherFrozen, kStudentTrainable };

enum class ConditionKind { kConcept, kCalibrationPrompt, kUnconditional };

struct Condition {
  std::string text;
  ConditionKind kind = ConditionKind::kUnconditional;

  static Condition for_concept(std::string text) {
    return {std::move(text), ConditionKind::kConcept};
  }
  static Condition calibration(std::string text) {
    return {std::move(text), ConditionKind::kCalibrationPrompt};
  }
  // Unconditional conditions carry empty text by invariant.
  static Condition unconditional() { return {"", ConditionKind::kUnconditional}; }
};

struct LatentSample {
  std::vector<double> data;
  int timestep = 0;
  std::uint64_t seed = 0;
};

struct NoisePrediction {
  std::vector<double> data;
};

struct LineageEntry {
  std::string checkpoint_id;
  std::string concept_name;
};

// ============================================================================
// Model interfaces
// ============================================================================

/// Immutable inference surface. Implementations must be safe for concurrent
/// const calls; predict() is a pure function of (parameters, x, cond, t).
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string backend_kind() const = 0;
  virtual const std::vector<int>& latent_shape() const = 0;
  virtual int latent_size() const = 0;
  virtual int t_max() const = 0;

  /// Signal-retention schedule in (0, 1]; strictly decreasing in t.
  virtual double alpha_bar(int t) const = 0;

  /// Hex digest over the parameter blob; changes iff parameters change.
  virtual std::string content_hash() const = 0;

  /// Noise prediction; cond == nullptr means unconditional.
  virtual std::vector<double> predict(std::span<const double> x,
                                      const Condition* cond, int t) const = 0;

  virtual std::unique_ptr<Model> clone() const = 0;

  virtual nlohmann::json arch_json() const = 0;
  virtual std::vector<double> export_params() const = 0;
  virtual void import_params(const std::vector<double>& params) = 0;
};

struct ParamSegment {
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Scratch space for one differentiable forward pass. Owned by the caller so
/// const forward stays re-entrant.
struct ForwardCache {
  std::vector<double> input;        // z = [x | cond | t features]
  std::vector<double> hidden_pre;   // pre-activation
  std::vector<double> hidden;       // post-activation
  std::vector<std::size_t> token_rows;
  int timestep = 0;
};

/// Adds the training surface: parameter access, cached forward, backprop.
/// Exactly one writer at a time; concurrent reads during training are not
/// supported.
class TrainableModel : public Model {
 public:
  virtual std::size_t param_count() const = 0;
  virtual double param(std::size_t i) const = 0;
  virtual void set_param(std::size_t i, double v) = 0;
  /// In-place update params += delta (the SGD primitive).
  virtual void add_to_params(std::span<const double> delta) = 0;
  /// Named slice of the flat parameter vector (w1, b1, w2, b2, embed).
  virtual ParamSegment param_segment(const std::string& name) const = 0;

  virtual std::vector<double> forward_cached(std::span<const double> x,
                                             const Condition* cond, int t,
                                             ForwardCache& cache) const = 0;
  /// Accumulates dL/dparams into grad given dL/dprediction.
  virtual void backward(const ForwardCache& cache,
                        std::span<const double> dpred,
                        std::span<double> grad) const = 0;
};

// ============================================================================
// ModelHandle
// ============================================================================

class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(Role role, std::shared_ptr<Model> model,
              std::vector<LineageEntry> lineage = {})
      : role_(role), model_(std::move(model)), lineage_(std::move(lineage)) {}

  Role role() const { return role_; }
  bool valid() const { return model_ != nullptr; }
  const Model& model() const { return *model_; }
  const std::vector<LineageEntry>& lineage() const { return lineage_; }
  std::string content_hash() const { return model_->content_hash(); }

  /// Checkpoint this handle was loaded from or cloned off, if any.
  const std::optional<std::string>& source_checkpoint_id() const {
    return source_checkpoint_id_;
  }

  /// Mutable access gate: teacher-frozen handles reject parameter updates.
  TrainableModel& trainable();

  void append_lineage(LineageEntry entry) { lineage_.push_back(std::move(entry)); }
  void set_source_checkpoint_id(std::string id) {
    source_checkpoint_id_ = std::move(id);
  }

 private:
  Role role_ = Role::kTeacherFrozen;
  std::shared_ptr<Model> model_;
  std::vector<LineageEntry> lineage_;
  std::optional<std::string> source_checkpoint_id_;
};

// ============================================================================
// Toy backend
// ============================================================================

struct ToyConfig {
  std::vector<int> latent_shape{2, 8, 8};
  int t_max = 50;
  int hidden_dim = 64;
  int embed_dim = 16;
  int vocab_size = 257;
  std::uint64_t init_seed = 1234;
  // Strength of the token embedding table; larger values give conditioning a
  // firmer imprint on sampled latents.
  double embed_scale = 3.0;
  // Fixed skip connection eps = skip_gain * x + mlp(z). Real noise predictors
  // return something close to the injected noise at high t; without the skip
  // a random network lets reverse diffusion amplify the seed noise and bury
  // the conditioning signature.
  double skip_gain = 0.9;
  // "tanh" (default) or "linear"; linear exposes a pure matrix map that unit
  // tests can verify against hand arithmetic.
  std::string activation = "tanh";
};

/// Builds a freshly initialized toy teacher.
ModelHandle make_toy_teacher(const ToyConfig& cfg);

/// Backend factory keyed by kind ("toy" is the only built-in).
ModelHandle make_backend(const nlohmann::json& params);

// ============================================================================
// Operations
// ============================================================================

NoisePrediction predict_noise(const ModelHandle& model, const LatentSample& x,
                              const std::optional<Condition>& cond);

/// Partially reverse-diffuses from seeded noise under cond down to timestep t.
/// t == t_max-1 returns the seeded pure-noise latent untouched.
LatentSample sample_partial(const ModelHandle& model, const Condition& cond,
                            int t, std::uint64_t seed);

/// Deep copy with role student-trainable; content hash and lineage preserved.
ModelHandle clone_trainable(const ModelHandle& model);

/// Saves under <run_dir>/checkpoints/<id>/{params.bin,manifest.json}.
/// When new_concept is set, a lineage entry (id, concept) is appended to the
/// handle before the manifest is written. Returns the checkpoint id.
std::string save_checkpoint(ModelHandle& model,
                            const std::filesystem::path& run_dir,
                            const std::optional<std::string>& new_concept = {});

/// Loads a checkpoint; verifies the parameter digest against the manifest.
ModelHandle load_checkpoint(const std::filesystem::path& run_dir,
                            const std::string& id);

/// Seeded standard-normal latent of the model's shape (the x used at t_max-1).
std::vector<double> seeded_noise_latent(const Model& model, std::uint64_t seed);

/// Lowercased alphanumeric tokens of a condition text. Shared by the toy
/// embedding table and the mock alignment scorer.
std::vector<std::string> tokenize_condition(const std::string& text);

}  // namespace ccrt::backend
