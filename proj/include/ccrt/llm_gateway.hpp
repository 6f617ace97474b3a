// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Single pluggable interface for every LLM-assisted step: synonym
// replacement, fuzz expansion, prompt weaving and removal judging.
//
// Two implementations ship: a deterministic offline mock (provider "mock",
// used by all tests) and an HTTP chat-completion client (provider "http").
// The HTTP client retries with exponential backoff and appends every
// request/response pair to a JSONL audit log.
//

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <chrono>
#include <condition_variable>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ccrt/hierarchy.hpp"

namespace ccrt::llm {

enum class Task { kSynonym, kFuzz, kWeave, kJudge };

std::string to_string(Task t);

/// One provider request: the task decides which payload fields are present
/// (synonym: label; fuzz: labels+count; weave: labels; judge: prompt+images).
struct LlmRequest {
  Task task = Task::kSynonym;
  nlohmann::json payload;
  double temperature = 0.0;
  int max_retries = 0;
};

enum class Verdict { kYes, kNo, kNull };

struct JudgeVerdict {
  Verdict value = Verdict::kNull;
  std::string raw_response;
};

/// Case-insensitive parse: "yes" wins over "no" wins over "null"; anything
/// else falls to null (the caller logs a warning).
Verdict parse_verdict(const std::string& raw);

/// Deterministic template used when the provider drops an entity and as the
/// prompt for misalignment probing: "A scene depicting a cat and a shark."
std::string fallback_weave(const std::vector<hier::Entity>& entities);

/// True when every entity label (or one of its accepted aliases) appears in
/// the woven text, case-insensitively.
bool weave_contains_all(const std::string& text,
                        const std::vector<hier::Entity>& entities,
                        const std::vector<std::vector<std::string>>& aliases);

struct GatewayConfig {
  std::string provider = "mock";  // "mock" | "http"
  std::string url;                // full chat-completion endpoint
  std::string model;
  double temperature = 0.0;
  int max_retries = 3;
  int retry_backoff_ms = 250;
  int max_concurrency = 4;          // in-flight request cap per provider
  int min_request_interval_ms = 0;  // rate limiter; 0 disables
  std::string api_key_env = "CCRT_LLM_API_KEY";
  std::filesystem::path audit_log;  // empty disables auditing
};

/// Per-provider throttle: bounds in-flight requests and enforces a minimum
/// spacing between request starts.
class RequestThrottle {
 public:
  RequestThrottle(int max_concurrency, int min_interval_ms)
      : cap_(max_concurrency),
        interval_(std::chrono::milliseconds(min_interval_ms)) {}

  class Slot {
   public:
    explicit Slot(RequestThrottle& t) : throttle_(t) { throttle_.acquire(); }
    ~Slot() { throttle_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    RequestThrottle& throttle_;
  };

 private:
  void acquire();
  void release();

  std::mutex mutex_;
  std::condition_variable cv_;
  int cap_;
  int in_flight_ = 0;
  std::chrono::milliseconds interval_;
  std::chrono::steady_clock::time_point next_start_{};
};

/// Append-serialized JSONL sink: {task, request_digest, response, timestamp}.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
  void append(Task task, const std::string& request_digest,
              const std::string& response);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

class LlmGateway {
 public:
  virtual ~LlmGateway() = default;

  /// Replaces an entity with a synonym; result carries source=mutation.
  virtual hier::Entity synonym_replace(const hier::Entity& entity) = 0;

  /// Up to `count` new entities with source=fuzzing; input duplicates filtered.
  virtual std::vector<hier::Entity> fuzz_expand(
      const std::vector<hier::Entity>& entities, int count) = 0;

  /// One prompt sentence covering all entities. Falls back to the template,
  /// so it always produces a result.
  virtual std::string weave(const std::vector<hier::Entity>& entities) = 0;

  /// Judges whether `concept` was removed from the last image, given
  /// reference images of the concept.
  virtual JudgeVerdict judge_removal(
      const std::vector<std::filesystem::path>& images,
      const std::vector<std::filesystem::path>& references,
      const std::string& concept_name) = 0;
};

// ============================================================================
// Offline mock
// ============================================================================

/// Fully deterministic: identical request -> identical response, across
/// processes. No network, no clock, no global state.
///
///   synonym  "cat" -> "cat-syn1", "cat-syn1" -> "cat-syn2", ...
///   fuzz     "fuzz-<digest8>-<i>" labels derived from the input set
///   weave    the fallback template
///   judge    filename keyed: basename of the judged image containing
///            "removed_" -> yes, "null_" -> null, anything else -> no
class MockGateway final : public LlmGateway {
 public:
  MockGateway() = default;
  explicit MockGateway(std::shared_ptr<AuditLog> audit) : audit_(std::move(audit)) {}

  hier::Entity synonym_replace(const hier::Entity& entity) override;
  std::vector<hier::Entity> fuzz_expand(const std::vector<hier::Entity>& entities,
                                        int count) override;
  std::string weave(const std::vector<hier::Entity>& entities) override;
  JudgeVerdict judge_removal(const std::vector<std::filesystem::path>& images,
                             const std::vector<std::filesystem::path>& references,
                             const std::string& concept_name) override;

  std::uint64_t call_count() const { return calls_.load(); }
  std::uint64_t call_count(Task t) const;

 private:
  void count(Task t);
  std::shared_ptr<AuditLog> audit_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<std::uint64_t> per_task_[4] = {{0}, {0}, {0}, {0}};
};

// ============================================================================
// HTTP chat-completion client
// ============================================================================

class HttpGateway final : public LlmGateway {
 public:
  explicit HttpGateway(GatewayConfig cfg);

  hier::Entity synonym_replace(const hier::Entity& entity) override;
  std::vector<hier::Entity> fuzz_expand(const std::vector<hier::Entity>& entities,
                                        int count) override;
  std::string weave(const std::vector<hier::Entity>& entities) override;
  JudgeVerdict judge_removal(const std::vector<std::filesystem::path>& images,
                             const std::vector<std::filesystem::path>& references,
                             const std::string& concept_name) override;

 private:
  LlmRequest build_request(Task task, const std::string& prompt,
                           const std::vector<std::filesystem::path>& image_paths) const;
  std::string complete(Task task, const std::string& prompt,
                       const std::vector<std::filesystem::path>& image_paths = {});

  GatewayConfig cfg_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;    // endpoint path
  RequestThrottle throttle_;
  std::shared_ptr<AuditLog> audit_;
  std::mutex synonym_log_mutex_;
  // label -> synonyms the provider has returned; weave containment accepts
  // either the label or a logged synonym.
  std::unordered_map<std::string, std::vector<std::string>> synonym_log_;
};

/// Factory honoring cfg.provider; unknown providers raise ConfigError.
std::unique_ptr<LlmGateway> make_gateway(const GatewayConfig& cfg);

}  // namespace ccrt::llm
