// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Run configuration: one structured JSON file per run, validated up front.
// Unknown keys are rejected with their full path; semantic violations name
// the offending key. Flags (--seed, --out) override config values.
//

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccrt/calibration.hpp"
#include "ccrt/evaluation.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/removal.hpp"

namespace ccrt::config {

struct RunConfig {
  nlohmann::json backend_params;  // forwarded to backend::make_backend
  llm::GatewayConfig gateway;
  std::filesystem::path hierarchy_path;
  bool generalized_lca = false;
  calib::GAConfig ga;
  std::vector<std::string> initial_entities;
  std::vector<removal::RemovalStepConfig> steps;
  bool reuse_calibration = false;
  eval::MetricConfig metrics;
  std::optional<std::filesystem::path> metrics_prompts;
  std::filesystem::path output_dir = "runs/out";
  std::uint64_t global_seed = 42;

  /// Digest of the raw config file bytes (for the run manifest).
  std::string config_digest;
};

/// Parses and validates; throws ConfigError with a key path (or a
/// line-anchored message for malformed JSON).
RunConfig load_run_config(const std::filesystem::path& file);

/// Validation of an already-parsed tree (exposed for tests).
RunConfig parse_run_config(const nlohmann::json& root);

struct RunManifest {
  std::string config_digest;
  std::string tool_version;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
};

/// Written atomically (tmp + rename) at run end.
void write_run_manifest(const std::filesystem::path& run_dir,
                        const RunManifest& manifest);

std::string tool_version();
std::string iso8601_timestamp();

}  // namespace ccrt::config
