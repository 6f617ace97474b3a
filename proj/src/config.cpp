// SPDX-License-Identifier: Apache-2.0
#include "ccrt/config.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "ccrt/digest.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::config {

namespace fs = std::filesystem;

std::string tool_version() { return "0.1.0"; }

std::string iso8601_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

void reject_unknown_keys(const nlohmann::json& obj, const std::string& path,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object())
    throw ConfigError("config key '" + path + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key))
      throw ConfigError("unknown config key '" +
                        (path.empty() ? key : path + "." + key) + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const std::string& key, const std::string& path,
         T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "." + key + "' has the wrong type");
  }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& root) {
  RunConfig cfg;
  reject_unknown_keys(root, "",
                      {"backend", "gateway", "hierarchy", "ga", "initial_entities",
                       "removal", "metrics", "output_dir", "global_seed"});

  cfg.global_seed = get_or<std::uint64_t>(root, "global_seed", "", cfg.global_seed);
  cfg.output_dir = get_or<std::string>(root, "output_dir", "", cfg.output_dir.string());

  // backend
  if (root.contains("backend")) {
    const auto& b = root.at("backend");
    reject_unknown_keys(b, "backend",
                        {"kind", "latent_shape", "t_max", "hidden_dim", "embed_dim",
                         "vocab_size", "init_seed", "activation", "embed_scale",
                         "skip_gain", "run_dir", "id"});
    cfg.backend_params = b;
  } else {
    cfg.backend_params = nlohmann::json{{"kind", "toy"}};
  }

  // gateway
  if (root.contains("gateway")) {
    const auto& g = root.at("gateway");
    reject_unknown_keys(g, "gateway",
                        {"provider", "url", "model", "temperature", "max_retries",
                         "retry_backoff_ms", "max_concurrency",
                         "min_request_interval_ms", "api_key_env", "audit_log"});
    cfg.gateway.provider = get_or<std::string>(g, "provider", "gateway", "mock");
    cfg.gateway.url = get_or<std::string>(g, "url", "gateway", "");
    cfg.gateway.model = get_or<std::string>(g, "model", "gateway", "");
    cfg.gateway.temperature = get_or<double>(g, "temperature", "gateway", 0.0);
    cfg.gateway.max_retries = get_or<int>(g, "max_retries", "gateway", 3);
    cfg.gateway.retry_backoff_ms = get_or<int>(g, "retry_backoff_ms", "gateway", 250);
    cfg.gateway.max_concurrency = get_or<int>(g, "max_concurrency", "gateway", 4);
    cfg.gateway.min_request_interval_ms =
        get_or<int>(g, "min_request_interval_ms", "gateway", 0);
    cfg.gateway.api_key_env =
        get_or<std::string>(g, "api_key_env", "gateway", "CCRT_LLM_API_KEY");
    cfg.gateway.audit_log = get_or<std::string>(g, "audit_log", "gateway", "");
    if (cfg.gateway.temperature < 0.0)
      throw ConfigError("config key 'gateway.temperature' must be >= 0");
    if (cfg.gateway.max_retries < 0)
      throw ConfigError("config key 'gateway.max_retries' must be >= 0");
    if (cfg.gateway.max_concurrency < 1)
      throw ConfigError("config key 'gateway.max_concurrency' must be >= 1");
    if (cfg.gateway.min_request_interval_ms < 0)
      throw ConfigError("config key 'gateway.min_request_interval_ms' must be >= 0");
    if (cfg.gateway.provider != "mock" && cfg.gateway.provider != "http")
      throw ConfigError("config key 'gateway.provider' must be 'mock' or 'http'");
    if (cfg.gateway.provider == "http" && cfg.gateway.url.empty())
      throw ConfigError("config key 'gateway.url' is required for provider 'http'");
  }

  // hierarchy
  if (root.contains("hierarchy")) {
    const auto& h = root.at("hierarchy");
    reject_unknown_keys(h, "hierarchy", {"path", "generalized_lca"});
    cfg.hierarchy_path = get_or<std::string>(h, "path", "hierarchy", "");
    cfg.generalized_lca = get_or<bool>(h, "generalized_lca", "hierarchy", false);
  }

  // ga
  if (root.contains("ga")) {
    const auto& g = root.at("ga");
    reject_unknown_keys(g, "ga",
                        {"top_k", "generations", "parent_count", "mutation_rate",
                         "fuzz_count", "md_samples", "norm_order", "seed"});
    cfg.ga.top_k = get_or<int>(g, "top_k", "ga", 10);
    cfg.ga.generations = get_or<int>(g, "generations", "ga", 20);
    cfg.ga.parent_count = get_or<int>(g, "parent_count", "ga", 4);
    cfg.ga.mutation_rate = get_or<double>(g, "mutation_rate", "ga", 0.3);
    cfg.ga.fuzz_count = get_or<int>(g, "fuzz_count", "ga", 2);
    cfg.ga.md_samples = get_or<int>(g, "md_samples", "ga", 8);
    cfg.ga.norm_order = get_or<int>(g, "norm_order", "ga", 1);
    cfg.ga.seed = get_or<std::uint64_t>(
        g, "seed", "ga", derive_seed(cfg.global_seed, std::string_view("ga")));
  } else {
    cfg.ga.seed = derive_seed(cfg.global_seed, std::string_view("ga"));
  }
  cfg.ga.generalized_lca = cfg.generalized_lca;
  cfg.ga.validate();  // messages already name ga.* keys

  // initial entities
  cfg.initial_entities = get_or<std::vector<std::string>>(
      root, "initial_entities", "", std::vector<std::string>{});

  // removal
  if (root.contains("removal")) {
    const auto& r = root.at("removal");
    reject_unknown_keys(r, "removal", {"steps", "reuse_calibration"});
    cfg.reuse_calibration = get_or<bool>(r, "reuse_calibration", "removal", false);
    if (r.contains("steps")) {
      if (!r.at("steps").is_array())
        throw ConfigError("config key 'removal.steps' must be an array");
      int index = 0;
      for (const auto& s : r.at("steps")) {
        const std::string path = "removal.steps[" + std::to_string(index) + "]";
        reject_unknown_keys(s, path,
                            {"concept", "concept_prompts", "lambda", "eta", "p",
                             "iterations", "learning_rate", "batch_size",
                             "warmup_iterations", "seed"});
        removal::RemovalStepConfig step;
        step.concept_name = get_or<std::string>(s, "concept", path, "");
        step.concept_prompts = get_or<std::vector<std::string>>(
            s, "concept_prompts", path, std::vector<std::string>{});
        step.lambda = get_or<double>(s, "lambda", path, 0.5);
        step.eta = get_or<double>(s, "eta", path, 1.0);
        step.p = get_or<int>(s, "p", path, 1);
        step.iterations = get_or<int>(s, "iterations", path, 200);
        step.learning_rate = get_or<double>(s, "learning_rate", path, 0.05);
        step.batch_size = get_or<int>(s, "batch_size", path, 1);
        step.warmup_iterations = get_or<int>(s, "warmup_iterations", path, 50);
        step.seed = get_or<std::uint64_t>(
            s, "seed", path,
            derive_seed(cfg.global_seed, std::string_view("step"),
                        static_cast<std::uint64_t>(index)));
        try {
          step.validate();
        } catch (const ConfigError& e) {
          throw ConfigError("config key '" + path + "': " + e.what());
        }
        cfg.steps.push_back(std::move(step));
        ++index;
      }
    }
  }

  // metrics
  if (root.contains("metrics")) {
    const auto& m = root.at("metrics");
    reject_unknown_keys(m, "metrics",
                        {"concept", "classifier_artifact", "references", "align",
                         "gen_seed", "prompts"});
    cfg.metrics.concept_name = get_or<std::string>(m, "concept", "metrics", "");
    cfg.metrics.classifier_artifact =
        get_or<std::string>(m, "classifier_artifact", "metrics", "");
    for (const auto& r : get_or<std::vector<std::string>>(
             m, "references", "metrics", std::vector<std::string>{}))
      cfg.metrics.references.emplace_back(r);
    cfg.metrics.align_scorers = get_or<std::vector<std::string>>(
        m, "align", "metrics", std::vector<std::string>{});
    cfg.metrics.gen_seed = get_or<std::uint64_t>(
        m, "gen_seed", "metrics", derive_seed(cfg.global_seed, std::string_view("eval")));
    if (m.contains("prompts"))
      cfg.metrics_prompts = fs::path(get_or<std::string>(m, "prompts", "metrics", ""));
  } else {
    cfg.metrics.gen_seed = derive_seed(cfg.global_seed, std::string_view("eval"));
  }

  return cfg;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports byte offsets; convert to a line number.
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(file.string() + ":" + std::to_string(line) +
                      ": invalid JSON: " + e.what());
  }
  RunConfig cfg = parse_run_config(root);
  cfg.config_digest = sha256_hex(text);
  return cfg;
}

void write_run_manifest(const fs::path& run_dir, const RunManifest& manifest) {
  fs::create_directories(run_dir);
  nlohmann::ordered_json j;
  j["config_digest"] = manifest.config_digest;
  j["tool_version"] = manifest.tool_version;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["artifacts"] = manifest.artifacts;
  const fs::path path = run_dir / "run_manifest.json";
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw InputError("cannot write run manifest");
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

}  // namespace ccrt::config
