// SPDX-License-Identifier: Apache-2.0
#include "ccrt/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "ccrt/digest.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::llm {

std::string to_string(Task t) {
  switch (t) {
    case Task::kSynonym: return "synonym";
    case Task::kFuzz: return "fuzz";
    case Task::kWeave: return "weave";
    case Task::kJudge: return "judge";
  }
  return "unknown";
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string iso8601_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

Verdict parse_verdict(const std::string& raw) {
  const std::string s = lower(raw);
  // Priority order is part of the contract: yes, then no, then null.
  if (s.find("yes") != std::string::npos) return Verdict::kYes;
  if (s.find("no") != std::string::npos) return Verdict::kNo;
  if (s.find("null") != std::string::npos) return Verdict::kNull;
  std::fprintf(stderr, "[ccrt] warning: unparseable judge response, treating as null\n");
  return Verdict::kNull;
}

std::string fallback_weave(const std::vector<hier::Entity>& entities) {
  if (entities.empty()) throw InputError("weave: entity list must be non-empty");
  std::string out = "A scene depicting a " + entities[0].label;
  for (std::size_t i = 1; i < entities.size(); ++i) {
    out += (i + 1 == entities.size()) ? " and a " : ", a ";
    out += entities[i].label;
  }
  out += ".";
  return out;
}

bool weave_contains_all(const std::string& text,
                        const std::vector<hier::Entity>& entities,
                        const std::vector<std::vector<std::string>>& aliases) {
  const std::string lt = lower(text);
  for (std::size_t i = 0; i < entities.size(); ++i) {
    bool found = lt.find(lower(entities[i].label)) != std::string::npos;
    if (!found && i < aliases.size()) {
      for (const std::string& alias : aliases[i]) {
        if (lt.find(lower(alias)) != std::string::npos) {
          found = true;
          break;
        }
      }
    }
    if (!found) return false;
  }
  return true;
}

void AuditLog::append(Task task, const std::string& request_digest,
                      const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  if (!out) return;  // auditing must never take the pipeline down
  nlohmann::ordered_json line{{"task", to_string(task)},
                              {"request_digest", request_digest},
                              {"response", response},
                              {"timestamp", iso8601_now()}};
  out << line.dump() << "\n";
}

// ============================================================================
// MockGateway
// ============================================================================

void MockGateway::count(Task t) {
  calls_.fetch_add(1);
  per_task_[static_cast<int>(t)].fetch_add(1);
}

std::uint64_t MockGateway::call_count(Task t) const {
  return per_task_[static_cast<int>(t)].load();
}

hier::Entity MockGateway::synonym_replace(const hier::Entity& entity) {
  if (entity.label.empty()) throw InputError("synonym_replace: empty label");
  count(Task::kSynonym);
  std::string label = entity.label;
  // "cat" -> "cat-syn1"; an existing "-synN" suffix increments instead of
  // stacking, keeping repeated mutation chains readable.
  auto pos = label.rfind("-syn");
  bool bumped = false;
  if (pos != std::string::npos && pos + 4 < label.size()) {
    std::string digits = label.substr(pos + 4);
    if (std::all_of(digits.begin(), digits.end(),
                    [](unsigned char c) { return std::isdigit(c); })) {
      label = label.substr(0, pos + 4) + std::to_string(std::stoi(digits) + 1);
      bumped = true;
    }
  }
  if (!bumped) label += "-syn1";
  if (audit_) audit_->append(Task::kSynonym, sha256_hex(entity.label).substr(0, 16), label);
  return hier::Entity{label, std::nullopt, hier::EntitySource::kMutation};
}

std::vector<hier::Entity> MockGateway::fuzz_expand(
    const std::vector<hier::Entity>& entities, int count_requested) {
  if (count_requested < 0) throw InputError("fuzz_expand: count must be >= 0");
  if (count_requested == 0) return {};
  count(Task::kFuzz);

  std::uint64_t digest = 0xcbf29ce484222325ULL;
  std::vector<std::string> labels;
  for (const auto& e : entities) labels.push_back(e.label);
  std::sort(labels.begin(), labels.end());
  for (const auto& l : labels) digest = fnv1a64(l, digest);

  std::unordered_set<std::string> taken(labels.begin(), labels.end());
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%08llx",
                static_cast<unsigned long long>(digest & 0xffffffffULL));

  std::vector<hier::Entity> out;
  for (int i = 1; static_cast<int>(out.size()) < count_requested; ++i) {
    std::string label = std::string("fuzz-") + hex + "-" + std::to_string(i);
    if (taken.count(label)) continue;
    out.push_back(hier::Entity{label, std::nullopt, hier::EntitySource::kFuzzing});
  }
  if (audit_)
    audit_->append(Task::kFuzz, sha256_hex(std::to_string(digest)).substr(0, 16),
                   std::to_string(out.size()) + " entities");
  return out;
}

std::string MockGateway::weave(const std::vector<hier::Entity>& entities) {
  count(Task::kWeave);
  std::string text = fallback_weave(entities);
  if (audit_) audit_->append(Task::kWeave, sha256_hex(text).substr(0, 16), text);
  return text;
}

JudgeVerdict MockGateway::judge_removal(
    const std::vector<std::filesystem::path>& images,
    const std::vector<std::filesystem::path>& references,
    const std::string& concept_name) {
  if (images.empty()) throw InputError("judge_removal: need at least one image");
  if (references.empty()) throw InputError("judge_removal: need at least one reference");
  (void)concept_name;
  count(Task::kJudge);
  const std::string name = images.back().filename().string();
  std::string raw;
  if (name.find("removed_") != std::string::npos) {
    raw = "yes";
  } else if (name.find("null_") != std::string::npos) {
    raw = "null";
  } else {
    raw = "no";
  }
  if (audit_) audit_->append(Task::kJudge, sha256_hex(name).substr(0, 16), raw);
  return JudgeVerdict{parse_verdict(raw), raw};
}

std::unique_ptr<LlmGateway> make_gateway(const GatewayConfig& cfg) {
  std::shared_ptr<AuditLog> audit;
  if (!cfg.audit_log.empty()) audit = std::make_shared<AuditLog>(cfg.audit_log);
  if (cfg.provider == "mock") return std::make_unique<MockGateway>(audit);
  if (cfg.provider == "http") return std::make_unique<HttpGateway>(cfg);
  throw ConfigError("unknown gateway provider '" + cfg.provider + "'");
}

}  // namespace ccrt::llm
