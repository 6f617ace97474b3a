// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

#include "ccrt/digest.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/llm_gateway.hpp"

namespace ccrt::llm {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Strips "- ", "* " and "3." style list markers from a provider line.
std::string strip_list_marker(std::string s) {
  s = trim(s);
  std::size_t i = 0;
  while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = s.substr(i + 1);
  else if (!s.empty() && (s[0] == '-' || s[0] == '*')) s = s.substr(1);
  return trim(s);
}

}  // namespace

void RequestThrottle::acquire() {
  std::unique_lock<std::mutex> lock(mutex_);
  cv_.wait(lock, [this]() { return in_flight_ < cap_; });
  ++in_flight_;
  if (interval_.count() > 0) {
    const auto now = std::chrono::steady_clock::now();
    if (next_start_ > now) {
      const auto wait_until = next_start_;
      next_start_ += interval_;
      lock.unlock();
      std::this_thread::sleep_until(wait_until);
      return;
    }
    next_start_ = now + interval_;
  }
}

void RequestThrottle::release() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

HttpGateway::HttpGateway(GatewayConfig cfg)
    : cfg_(std::move(cfg)),
      throttle_(std::max(1, cfg_.max_concurrency),
                std::max(0, cfg_.min_request_interval_ms)) {
  if (cfg_.url.empty()) throw ConfigError("http gateway requires a url");
  auto scheme_end = cfg_.url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("gateway url must include a scheme: " + cfg_.url);
  auto path_start = cfg_.url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = cfg_.url;
    path_ = "/v1/chat/completions";
  } else {
    origin_ = cfg_.url.substr(0, path_start);
    path_ = cfg_.url.substr(path_start);
  }
  if (!cfg_.audit_log.empty()) audit_ = std::make_shared<AuditLog>(cfg_.audit_log);
}

LlmRequest HttpGateway::build_request(
    Task task, const std::string& prompt,
    const std::vector<std::filesystem::path>& image_paths) const {
  LlmRequest request;
  request.task = task;
  request.temperature = cfg_.temperature;
  request.max_retries = cfg_.max_retries;
  request.payload["prompt"] = prompt;
  if (!image_paths.empty()) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& p : image_paths) images.push_back(p.string());
    request.payload["images"] = images;
  }
  return request;
}

std::string HttpGateway::complete(Task task, const std::string& prompt,
                                  const std::vector<std::filesystem::path>& image_paths) {
  const LlmRequest request = build_request(task, prompt, image_paths);

  nlohmann::json content;
  if (image_paths.empty()) {
    content = request.payload.at("prompt");
  } else {
    // Simplified multimodal scheme for self-hosted judges: text part first,
    // then one image_path part per attachment.
    content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    for (const auto& p : image_paths)
      content.push_back({{"type", "image_path"}, {"path", p.string()}});
  }
  nlohmann::json body{
      {"model", cfg_.model},
      {"temperature", request.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
  const std::string body_str = body.dump();
  const std::string digest = sha256_hex(body_str).substr(0, 16);

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  RequestThrottle::Slot slot(throttle_);
  std::string last_error;
  for (int attempt = 0; attempt <= request.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          cfg_.retry_backoff_ms * (1 << (attempt - 1))));
    }
    httplib::Client client(origin_);
    client.set_read_timeout(60, 0);
    auto res = client.Post(path_, headers, body_str, "application/json");
    if (!res) {
      last_error = "connection failed";
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    try {
      nlohmann::json reply = nlohmann::json::parse(res->body);
      std::string text =
          reply.at("choices").at(0).at("message").at("content").get<std::string>();
      if (audit_) audit_->append(task, digest, text);
      return text;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("unparseable response: ") + e.what();
    }
  }
  if (audit_) audit_->append(task, digest, "<error: " + last_error + ">");
  throw GatewayError("llm provider failed after " +
                     std::to_string(cfg_.max_retries + 1) + " attempts (" +
                     last_error + ")");
}

hier::Entity HttpGateway::synonym_replace(const hier::Entity& entity) {
  if (entity.label.empty()) throw InputError("synonym_replace: empty label");
  std::string reply = complete(
      Task::kSynonym, "Give one synonym for \"" + entity.label +
                          "\". Answer with only the synonym, nothing else.");
  std::string label = trim(reply);
  if (auto nl = label.find('\n'); nl != std::string::npos)
    label = trim(label.substr(0, nl));
  if (label.empty()) throw GatewayError("synonym provider returned empty text");
  {
    std::lock_guard<std::mutex> lock(synonym_log_mutex_);
    synonym_log_[entity.label].push_back(label);
  }
  return hier::Entity{label, std::nullopt, hier::EntitySource::kMutation};
}

std::vector<hier::Entity> HttpGateway::fuzz_expand(
    const std::vector<hier::Entity>& entities, int count) {
  if (count < 0) throw InputError("fuzz_expand: count must be >= 0");
  if (count == 0) return {};
  std::ostringstream prompt;
  prompt << "Here is a list of visual concepts: ";
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i) prompt << ", ";
    prompt << '"' << entities[i].label << '"';
  }
  prompt << ". Propose " << count
         << " additional semantically diverse, visually concrete concepts, "
            "one per line, without numbering or commentary.";
  std::string reply = complete(Task::kFuzz, prompt.str());

  std::unordered_set<std::string> taken;
  for (const auto& e : entities) taken.insert(e.label);
  std::vector<hier::Entity> out;
  std::istringstream lines(reply);
  std::string line;
  while (std::getline(lines, line) && static_cast<int>(out.size()) < count) {
    std::string label = strip_list_marker(line);
    if (label.empty() || taken.count(label)) continue;
    taken.insert(label);
    out.push_back(hier::Entity{label, std::nullopt, hier::EntitySource::kFuzzing});
  }
  return out;
}

std::string HttpGateway::weave(const std::vector<hier::Entity>& entities) {
  if (entities.empty()) throw InputError("weave: entity list must be non-empty");
  std::ostringstream list;
  list << "[";
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i) list << ", ";
    list << '"' << entities[i].label << '"';
  }
  list << "]";
  const std::string prompt =
      "I will give you a list of multiple strings, each describing a different "
      "concept, and ask you to build the most concise text that roughly "
      "contains these concepts, which can be used as a prompt to generate an "
      "image, but only as long as it describes the content of the picture. "
      "The list is as follows: " + list.str();

  std::vector<std::vector<std::string>> aliases(entities.size());
  {
    std::lock_guard<std::mutex> lock(synonym_log_mutex_);
    for (std::size_t i = 0; i < entities.size(); ++i) {
      auto it = synonym_log_.find(entities[i].label);
      if (it != synonym_log_.end()) aliases[i] = it->second;
    }
  }

  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    std::string text;
    try {
      text = trim(complete(Task::kWeave, prompt));
    } catch (const GatewayError&) {
      break;  // provider is down; use the fallback
    }
    if (!text.empty() && weave_contains_all(text, entities, aliases)) return text;
  }
  return fallback_weave(entities);
}

JudgeVerdict HttpGateway::judge_removal(
    const std::vector<std::filesystem::path>& images,
    const std::vector<std::filesystem::path>& references,
    const std::string& concept_name) {
  if (images.empty()) throw InputError("judge_removal: need at least one image");
  if (references.empty()) throw InputError("judge_removal: need at least one reference");
  std::ostringstream prompt;
  prompt << "The style of " << concept_name << " work is: " << concept_name
         << ". As shown in the first " << references.size()
         << " images. Please determine if the last picture does remove the "
            "style of " << concept_name
         << ". Just answer yes or no. If the painting has no artistic style, "
            "answer null. The quality of some images may be poor. Please do "
            "not misjudge.";
  std::vector<std::filesystem::path> attachments = references;
  attachments.insert(attachments.end(), images.begin(), images.end());
  std::string raw = complete(Task::kJudge, prompt.str(), attachments);
  return JudgeVerdict{parse_verdict(raw), raw};
}

}  // namespace ccrt::llm
