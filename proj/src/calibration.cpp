// SPDX-License-Identifier: Apache-2.0
#include "ccrt/calibration.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "ccrt/errors.hpp"
#include "ccrt/numeric.hpp"

namespace ccrt::calib {

Individual Individual::from_entities(std::vector<hier::Entity> entities,
                                     int generation) {
  Individual ind;
  ind.generation = generation;
  std::unordered_set<std::string> seen;
  for (auto& e : entities) {
    if (e.label.empty()) throw InputError("individual: empty entity label");
    if (seen.insert(e.label).second) ind.entities.push_back(std::move(e));
  }
  if (ind.entities.empty()) throw InputError("individual: entity list must be non-empty");
  return ind;
}

std::vector<std::string> Individual::labels() const {
  std::vector<std::string> out;
  out.reserve(entities.size());
  for (const auto& e : entities) out.push_back(e.label);
  return out;
}

std::string Individual::key() const {
  std::string k;
  for (const auto& e : entities) {
    k += e.label;
    k += '\x1f';
  }
  return k;
}

void GAConfig::validate() const {
  if (top_k < 1) throw ConfigError("ga.top_k must be >= 1");
  if (generations < 0) throw ConfigError("ga.generations must be >= 0");
  if (parent_count < 2 || parent_count % 2 != 0)
    throw ConfigError("ga.parent_count must be even and >= 2");
  if (mutation_rate < 0.0 || mutation_rate > 1.0)
    throw ConfigError("ga.mutation_rate must be in [0, 1]");
  if (fuzz_count < 0) throw ConfigError("ga.fuzz_count must be >= 0");
  if (md_samples < 1) throw ConfigError("ga.md_samples must be >= 1");
  if (norm_order != 1 && norm_order != 2)
    throw ConfigError("ga.norm_order must be 1 or 2");
}

// ============================================================================
// Misalignment distance
// ============================================================================

MdProbe md_probe_point(const backend::Model& model, const GAConfig& cfg, int i) {
  const std::uint64_t probe_seed =
      derive_seed(cfg.seed, std::string_view("md-probe"), static_cast<std::uint64_t>(i));
  MdProbe probe;
  probe.latent = backend::seeded_noise_latent(model, probe_seed);
  Rng tr(derive_seed(probe_seed, std::string_view("timestep")));
  probe.timestep =
      static_cast<int>(tr.uniform_int(static_cast<std::uint64_t>(model.t_max())));
  return probe;
}

double misalignment_distance(const backend::ModelHandle& teacher,
                             const backend::ModelHandle& student,
                             const Individual& subject, const GAConfig& cfg) {
  const backend::Model& tm = teacher.model();
  const backend::Model& sm = student.model();
  if (tm.latent_size() != sm.latent_size() || tm.t_max() != sm.t_max())
    throw InputError("misalignment_distance: teacher/student shape mismatch");
  if (cfg.md_samples < 1) throw ConfigError("ga.md_samples must be >= 1");

  const backend::Condition cond =
      backend::Condition::calibration(llm::fallback_weave(subject.entities));

  // Streaming accumulation over the shared probe set.
  double sum = 0.0;
  for (int i = 0; i < cfg.md_samples; ++i) {
    const MdProbe probe = md_probe_point(tm, cfg, i);
    std::vector<double> eps_s = sm.predict(probe.latent, &cond, probe.timestep);
    std::vector<double> eps_t = tm.predict(probe.latent, &cond, probe.timestep);
    sum += lp_distance(eps_s, eps_t, cfg.norm_order);
  }
  return sum / static_cast<double>(cfg.md_samples);
}

MdFn make_md_fn(const backend::ModelHandle& teacher,
                const backend::ModelHandle& student, const GAConfig& cfg) {
  return [&teacher, &student, cfg](const Individual& ind) {
    return misalignment_distance(teacher, student, ind, cfg);
  };
}

// ============================================================================
// Selection
// ============================================================================

namespace {

bool better_than(const Individual& a, const Individual& b) {
  // Higher md first; ties by lexicographic label list. stable_sort preserves
  // insertion order for full ties.
  if (*a.md != *b.md) return *a.md > *b.md;
  return std::lexicographical_compare(a.entities.begin(), a.entities.end(),
                                      b.entities.begin(), b.entities.end(),
                                      [](const hier::Entity& x, const hier::Entity& y) {
                                        return x.label < y.label;
                                      });
}

}  // namespace

std::vector<Individual> rank_and_select(std::vector<Individual> population,
                                        int k, const MdFn& md_fn) {
  if (k < 1) throw InputError("rank_and_select: k must be >= 1");
  for (auto& ind : population) {
    if (!ind.md) ind.md = md_fn(ind);
  }
  std::stable_sort(population.begin(), population.end(), better_than);
  if (static_cast<int>(population.size()) < k) {
    std::fprintf(stderr,
                 "[ccrt] note: population (%zu) smaller than top-k (%d); keeping all\n",
                 population.size(), k);
    return population;
  }
  population.resize(static_cast<std::size_t>(k));
  return population;
}

std::vector<Individual> rank_and_select(std::vector<Individual> population,
                                        int k,
                                        const backend::ModelHandle& teacher,
                                        const backend::ModelHandle& student,
                                        const GAConfig& cfg) {
  return rank_and_select(std::move(population), k, make_md_fn(teacher, student, cfg));
}

// ============================================================================
// Crossover
// ============================================================================

Individual crossover(const Individual& a, const Individual& b,
                     const hier::Hierarchy& h, bool generalized_lca) {
  std::vector<hier::Entity> merged;
  std::vector<bool> a_used(a.entities.size(), false);
  std::vector<bool> b_used(b.entities.size(), false);

  // Rule 1. Identical labels never pair: they are the same entity and simply
  // merge by dedup, so crossover(x, x) == x even when x has a parent.
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    for (std::size_t j = 0; j < b.entities.size(); ++j) {
      if (b_used[j] || a.entities[i].label == b.entities[j].label) continue;
      auto parent = hier::shared_parent(h, a.entities[i], b.entities[j], generalized_lca);
      if (parent) {
        merged.push_back(hier::Entity{h.label(*parent), parent,
                                      hier::EntitySource::kCrossover});
        a_used[i] = true;
        b_used[j] = true;
        break;
      }
    }
  }

  // Rule 2: survivors, a-first then b-first.
  for (std::size_t i = 0; i < a.entities.size(); ++i)
    if (!a_used[i]) merged.push_back(a.entities[i]);
  for (std::size_t j = 0; j < b.entities.size(); ++j)
    if (!b_used[j]) merged.push_back(b.entities[j]);

  return Individual::from_entities(std::move(merged),
                                   std::max(a.generation, b.generation) + 1);
}

// ============================================================================
// Mutation + fuzzing
// ============================================================================

std::vector<Individual> mutation_fuzzing(const Individual& child,
                                         llm::LlmGateway& gateway,
                                         const GAConfig& cfg, Rng& rng) {
  // Stage 1: mutation. The random draw happens for every entity so the
  // stream shape does not depend on gateway outcomes.
  std::vector<hier::Entity> mutated = child.entities;
  for (auto& entity : mutated) {
    const bool hit = rng.uniform() < cfg.mutation_rate;
    if (!hit) continue;
    try {
      entity = gateway.synonym_replace(entity);
    } catch (const GatewayError& e) {
      std::fprintf(stderr, "[ccrt] warning: synonym replacement failed (%s); keeping '%s'\n",
                   e.what(), entity.label.c_str());
    }
  }
  std::vector<Individual> out;
  out.push_back(Individual::from_entities(std::move(mutated), child.generation));

  // Stage 2: fuzzing expands the pool with fresh single-entity individuals.
  if (cfg.fuzz_count > 0) {
    try {
      for (auto& e : gateway.fuzz_expand(child.entities, cfg.fuzz_count)) {
        out.push_back(Individual::from_entities({std::move(e)}, 0));
      }
    } catch (const GatewayError& e) {
      std::fprintf(stderr, "[ccrt] warning: fuzz expansion failed (%s); skipping stage\n",
                   e.what());
    }
  }
  return out;
}

// ============================================================================
// GA driver
// ============================================================================

std::vector<Individual> run_ga(const std::vector<std::string>& initial_labels,
                               const MdFn& md_fn, const hier::Hierarchy& h,
                               llm::LlmGateway& gateway, const GAConfig& cfg) {
  cfg.validate();
  if (initial_labels.empty())
    throw InputError("run_ga: initial entity list must be non-empty");

  std::vector<Individual> population;
  std::unordered_set<std::string> seeded;
  for (const std::string& label : initial_labels) {
    if (label.empty()) throw InputError("run_ga: empty initial label");
    if (!seeded.insert(label).second) continue;
    hier::Entity e{label, h.find(label), hier::EntitySource::kInitial};
    population.push_back(Individual::from_entities({std::move(e)}, 0));
  }

  std::vector<Individual> kept = rank_and_select(std::move(population), cfg.top_k, md_fn);

  Rng rng(derive_seed(cfg.seed, std::string_view("ga-loop")));
  for (int g = 1; g <= cfg.generations; ++g) {
    // Parent selection: m without replacement, falling back to replacement
    // when the population is too small.
    const std::size_t n = kept.size();
    std::vector<std::size_t> parent_idx;
    if (n >= static_cast<std::size_t>(cfg.parent_count)) {
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      for (int i = 0; i < cfg.parent_count; ++i) {
        std::size_t j = static_cast<std::size_t>(i) +
                        rng.uniform_int(n - static_cast<std::uint64_t>(i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
        parent_idx.push_back(order[static_cast<std::size_t>(i)]);
      }
    } else {
      for (int i = 0; i < cfg.parent_count; ++i)
        parent_idx.push_back(rng.uniform_int(n));
    }

    // Consecutive pairing; parents are already pool members, so the offspring
    // pool only needs the new individuals.
    std::vector<Individual> offspring;
    for (int i = 0; i + 1 < cfg.parent_count; i += 2) {
      Individual child = crossover(kept[parent_idx[static_cast<std::size_t>(i)]],
                                   kept[parent_idx[static_cast<std::size_t>(i + 1)]],
                                   h, cfg.generalized_lca);
      for (auto& ind : mutation_fuzzing(child, gateway, cfg, rng))
        offspring.push_back(std::move(ind));
    }

    // Elitist re-selection over old + new, deduplicated by label list with
    // survivors keeping their cached fitness.
    std::vector<Individual> pool = kept;
    std::unordered_set<std::string> keys;
    for (const auto& ind : kept) keys.insert(ind.key());
    for (auto& ind : offspring) {
      if (keys.insert(ind.key()).second) pool.push_back(std::move(ind));
    }
    kept = rank_and_select(std::move(pool), cfg.top_k, md_fn);
  }
  return kept;
}

std::vector<Individual> run_ga(const std::vector<std::string>& initial_labels,
                               const backend::ModelHandle& teacher,
                               const backend::ModelHandle& student,
                               const hier::Hierarchy& h,
                               llm::LlmGateway& gateway, const GAConfig& cfg) {
  return run_ga(initial_labels, make_md_fn(teacher, student, cfg), h, gateway, cfg);
}

// ============================================================================
// Weaving + calibration file
// ============================================================================

std::vector<CalibrationPrompt> weave_calibration_set(
    const std::vector<Individual>& final_population, llm::LlmGateway& gateway) {
  std::vector<CalibrationPrompt> prompts;
  prompts.reserve(final_population.size());
  for (const auto& ind : final_population) {
    if (!ind.md)
      throw InputError("weave_calibration_set: individual lacks evaluated md");
    CalibrationPrompt p;
    p.text = gateway.weave(ind.entities);
    p.entities = ind.entities;
    p.md_at_creation = *ind.md;
    p.generation = ind.generation;
    prompts.push_back(std::move(p));
  }
  return prompts;
}

void write_calibration_jsonl(const std::filesystem::path& file,
                             const std::vector<CalibrationPrompt>& prompts) {
  std::filesystem::create_directories(file.parent_path());
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw InputError("cannot write calibration file " + file.string());
    for (const auto& p : prompts) {
      nlohmann::ordered_json line;
      nlohmann::json labels = nlohmann::json::array();
      for (const auto& e : p.entities) labels.push_back(e.label);
      line["entities"] = labels;
      line["prompt"] = p.text;
      line["md"] = p.md_at_creation;
      line["generation"] = p.generation;
      nlohmann::json sources = nlohmann::json::array();
      for (const auto& e : p.entities) sources.push_back(hier::to_string(e.source));
      line["sources"] = sources;
      out << line.dump() << "\n";
    }
  }
  std::filesystem::rename(tmp, file);
}

std::vector<CalibrationPrompt> read_calibration_jsonl(
    const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("calibration file not found: " + file.string());
  std::vector<CalibrationPrompt> prompts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    CalibrationPrompt p;
    p.text = j.at("prompt").get<std::string>();
    p.md_at_creation = j.at("md").get<double>();
    p.generation = j.at("generation").get<int>();
    auto labels = j.at("entities").get<std::vector<std::string>>();
    auto sources = j.value("sources", std::vector<std::string>{});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      hier::EntitySource src = hier::EntitySource::kInitial;
      if (i < sources.size()) {
        if (sources[i] == "crossover") src = hier::EntitySource::kCrossover;
        else if (sources[i] == "mutation") src = hier::EntitySource::kMutation;
        else if (sources[i] == "fuzzing") src = hier::EntitySource::kFuzzing;
      }
      p.entities.push_back(hier::Entity{labels[i], std::nullopt, src});
    }
    prompts.push_back(std::move(p));
  }
  return prompts;
}

}  // namespace ccrt::calib
