// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Calibration prompt set mining.
//
// Hard entities are those where the edited model's noise predictions have
// drifted furthest from the original model (largest misalignment distance).
// A genetic algorithm evolves entity lists toward higher misalignment:
// elitist top-k selection, hierarchy-aware crossover, LLM-backed mutation and
// fuzzing. The surviving individuals are woven into text prompts that anchor
// the alignment regularizer during distillation.
//

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ccrt/backend.hpp"
#include "ccrt/hierarchy.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::calib {

/// GA population element: an ordered, label-deduplicated entity list plus its
/// cached fitness.
struct Individual {
  std::vector<hier::Entity> entities;
  std::optional<double> md;
  int generation = 0;

  static Individual from_entities(std::vector<hier::Entity> entities,
                                  int generation);
  std::vector<std::string> labels() const;
  std::string key() const;  // label-list identity for pool dedup
};

struct GAConfig {
  int top_k = 10;
  int generations = 20;       // G
  int parent_count = 4;       // m, even and >= 2
  double mutation_rate = 0.3;
  int fuzz_count = 2;
  int md_samples = 8;         // N in the misalignment average
  int norm_order = 1;         // p
  std::uint64_t seed = 0;
  bool generalized_lca = false;

  void validate() const;  // throws ConfigError naming the offending field
};

struct CalibrationPrompt {
  std::string text;
  std::vector<hier::Entity> entities;
  double md_at_creation = 0.0;
  int generation = 0;
};

/// Fitness injection point; the default binds misalignment_distance.
using MdFn = std::function<double(const Individual&)>;

// ============================================================================
// Operations
// ============================================================================

/// One probe point of the misalignment average: a seeded noise latent plus a
/// seeded timestep. Probes are keyed by cfg.seed alone so every individual is
/// measured at the same points, which keeps rankings stable.
struct MdProbe {
  std::vector<double> latent;
  int timestep = 0;
};
MdProbe md_probe_point(const backend::Model& model, const GAConfig& cfg, int i);

/// Average p-norm gap between student and teacher noise predictions over
/// md_samples probe points, conditioned on the individual's entities woven
/// with the fallback template. Streaming accumulation over i.
double misalignment_distance(const backend::ModelHandle& teacher,
                             const backend::ModelHandle& student,
                             const Individual& subject, const GAConfig& cfg);

MdFn make_md_fn(const backend::ModelHandle& teacher,
                const backend::ModelHandle& student, const GAConfig& cfg);

/// Evaluates missing fitness values, then returns the k individuals with the
/// highest md. Ties break by lexicographic entity labels, then insertion
/// order. A population smaller than k is returned whole (sorted).
std::vector<Individual> rank_and_select(std::vector<Individual> population,
                                        int k, const MdFn& md_fn);
std::vector<Individual> rank_and_select(std::vector<Individual> population,
                                        int k,
                                        const backend::ModelHandle& teacher,
                                        const backend::ModelHandle& student,
                                        const GAConfig& cfg);

/// Rule 1: entity pairs (one from each parent, distinct labels) sharing a
/// direct parent in the hierarchy are consumed and replaced by that parent
/// entity. Rule 2: everything left is concatenated a-first then b-first.
/// Labels are deduplicated; child generation = max(parents) + 1.
Individual crossover(const Individual& a, const Individual& b,
                     const hier::Hierarchy& h, bool generalized_lca = false);

/// Stage 1 mutates each entity independently with probability mutation_rate
/// via synonym_replace; stage 2 appends fuzz_count single-entity individuals
/// from fuzz_expand. Gateway failures degrade to identity, never abort.
/// Returns [mutated child] + fuzz individuals.
std::vector<Individual> mutation_fuzzing(const Individual& child,
                                         llm::LlmGateway& gateway,
                                         const GAConfig& cfg, Rng& rng);

/// Full GA loop: seed one single-entity individual per initial label, keep
/// the elitist top-k, then for each generation select parents, pair them
/// consecutively, crossover, mutate/fuzz, and re-select top-k over the old
/// and new pool. G=0 returns the md-sorted top-k of the seeds with no
/// gateway traffic.
std::vector<Individual> run_ga(const std::vector<std::string>& initial_labels,
                               const MdFn& md_fn, const hier::Hierarchy& h,
                               llm::LlmGateway& gateway, const GAConfig& cfg);
std::vector<Individual> run_ga(const std::vector<std::string>& initial_labels,
                               const backend::ModelHandle& teacher,
                               const backend::ModelHandle& student,
                               const hier::Hierarchy& h,
                               llm::LlmGateway& gateway, const GAConfig& cfg);

/// One woven prompt per individual. Every individual must carry evaluated md.
std::vector<CalibrationPrompt> weave_calibration_set(
    const std::vector<Individual>& final_population, llm::LlmGateway& gateway);

// ============================================================================
// Calibration set file (JSON lines)
// ============================================================================

void write_calibration_jsonl(const std::filesystem::path& file,
                             const std::vector<CalibrationPrompt>& prompts);
std::vector<CalibrationPrompt> read_calibration_jsonl(
    const std::filesystem::path& file);

}  // namespace ccrt::calib
