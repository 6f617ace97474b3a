// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Per-checkpoint evaluation: removal rates via a binary classifier (RR-CLS)
// and via an LLM judge (RR-LLM), plus pluggable text-image alignment scorers.
// Reports store raw per-sample records so every aggregate can be recomputed
// from the file alone.
//

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccrt/backend.hpp"
#include "ccrt/llm_gateway.hpp"

namespace ccrt::eval {

// ============================================================================
// Toy images
// ============================================================================

/// Desk-scale image artifact: the fully denoised latent plus the generation
/// metadata (caption = the prompt that produced it). Stored as JSON.
struct ToyImage {
  std::string caption;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::vector<int> shape;
  std::vector<double> data;
};

void write_toy_image(const std::filesystem::path& file, const ToyImage& img);
ToyImage read_toy_image(const std::filesystem::path& file);

/// Generates one toy image: full reverse diffusion to t=0 under the prompt.
ToyImage generate_toy_image(const backend::ModelHandle& model,
                            const std::string& prompt, std::uint64_t seed);

/// Pooled pixel features: per-channel 4x4 average pools plus the channel
/// mean. Purely linear in the pixels, so a concept shift and its negation
/// land on opposite sides of any linear boundary.
std::vector<double> pooled_features(const ToyImage& img);

// ============================================================================
// Concept classifier (RR-CLS backend)
// ============================================================================

struct ClassifierOptions {
  double split = 0.8;  // training fraction
  std::uint64_t seed = 0;
  int iterations = 600;
  double learning_rate = 0.5;
  double l2 = 1e-3;  // weight decay
};

/// Binary classifier over pooled features. The positive output class means
/// "concept ABSENT": predict() == 1 reads as the concept was removed.
struct ConceptClassifier {
  std::string concept_name;
  std::string backend_kind = "pooled-logreg";
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::filesystem::path artifact_path;
  std::vector<double> weights;  // last element is the bias

  int predict(const ToyImage& img) const;      // 1 = concept absent
  double score_absent(const ToyImage& img) const;  // probability in [0,1]

  void save(const std::filesystem::path& file) const;
  static ConceptClassifier load(const std::filesystem::path& file);
};

/// Trains on concept_images (concept present) vs other_images (absent) with
/// the given train split; train/test accuracies are recorded on the
/// classifier. A single-class pool raises DataError.
ConceptClassifier train_concept_classifier(
    const std::string& concept_name,
    const std::vector<std::filesystem::path>& concept_images,
    const std::vector<std::filesystem::path>& other_images,
    const ClassifierOptions& options);

// ============================================================================
// Rates
// ============================================================================

struct RrClsResult {
  double value = 0.0;  // fraction predicted "concept absent"
  int n = 0;
  // (path, prediction) per image, in input order
  std::vector<std::pair<std::string, int>> raw;
};

RrClsResult rr_cls(const ConceptClassifier& classifier,
                   const std::vector<std::filesystem::path>& images);

struct RrLlmResult {
  double value = 0.0;            // yes / judged (strict indicator)
  double value_null_as_removed = 0.0;  // (yes + null) / judged
  double null_rate = 0.0;
  int n_judged = 0;
  int n_unjudged = 0;
  std::vector<std::pair<std::string, std::string>> raw;  // (path, verdict)
};

/// Verdicts yes/no/null per image; null counts as not-removed in the headline
/// value. Gateway failures leave samples unjudged (excluded from N with a
/// warning); all-unjudged raises EvaluationError.
RrLlmResult rr_llm(llm::LlmGateway& gateway,
                   const std::vector<std::filesystem::path>& images,
                   const std::vector<std::filesystem::path>& references,
                   const std::string& concept_name);

// ============================================================================
// Alignment scorers
// ============================================================================

using ScorerFn = std::function<double(const std::string& prompt,
                                      const std::filesystem::path& image)>;

void register_scorer(const std::string& name, ScorerFn fn);
/// Unregistered names raise ConfigError. "mock" (token overlap against the
/// image caption) is always available.
ScorerFn get_scorer(const std::string& name);

double alignment_score(const std::string& scorer_name, const std::string& prompt,
                       const std::filesystem::path& image);

// ============================================================================
// Checkpoint evaluation
// ============================================================================

struct PromptSet {
  std::string id;
  std::vector<std::string> prompts;
};

/// Newline-delimited UTF-8 prompt file; blank lines skipped.
PromptSet load_prompt_set(const std::filesystem::path& file);

struct MetricConfig {
  bool rr_cls = false;
  std::filesystem::path classifier_artifact;
  bool rr_llm = false;
  std::vector<std::filesystem::path> references;
  std::vector<std::string> align_scorers;
  std::string concept_name;
  std::uint64_t gen_seed = 0;
};

struct MetricEntry {
  std::string name;
  double value = 0.0;
  int n = 0;
  nlohmann::json raw;
};

struct EvaluationReport {
  std::string checkpoint_id;
  std::string prompt_set_id;
  std::vector<MetricEntry> metrics;
  bool complete = true;
  std::string started_at;
  std::string finished_at;
};

/// Generates one image per prompt from the checkpoint, runs the configured
/// metrics and assembles the report. An empty metric config yields a report
/// with zero entries flagged incomplete.
EvaluationReport evaluate_checkpoint(const std::filesystem::path& run_dir,
                                     const std::string& checkpoint_id,
                                     const PromptSet& prompts,
                                     const MetricConfig& metrics,
                                     llm::LlmGateway* gateway);

void write_report(const std::filesystem::path& file, const EvaluationReport& report);
EvaluationReport read_report(const std::filesystem::path& file);

}  // namespace ccrt::eval
