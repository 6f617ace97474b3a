// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ccrt/errors.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/rng.hpp"
#include "test_util.hpp"

using namespace ccrt;
using hier::Entity;

namespace {

Entity ent(const std::string& label) {
  return Entity{label, std::nullopt, hier::EntitySource::kInitial};
}

std::vector<Entity> ents(std::initializer_list<std::string> labels) {
  std::vector<Entity> out;
  for (const auto& l : labels) out.push_back(ent(l));
  return out;
}

}  // namespace

// ============================================================================
// Verdict parsing
// ============================================================================

TEST_CASE("verdict parse rules") {
  CHECK(llm::parse_verdict("Yes, the style is removed.") == llm::Verdict::kYes);
  CHECK(llm::parse_verdict("no") == llm::Verdict::kNo);
  CHECK(llm::parse_verdict("NO.") == llm::Verdict::kNo);
  CHECK(llm::parse_verdict("null") == llm::Verdict::kNull);
  CHECK(llm::parse_verdict("cannot tell") == llm::Verdict::kNo);  // "no" substring wins
  CHECK(llm::parse_verdict("unclear image") == llm::Verdict::kNull);
  CHECK(llm::parse_verdict("") == llm::Verdict::kNull);
}

// ============================================================================
// Mock gateway
// ============================================================================

TEST_CASE("mock synonym uses the deterministic suffix scheme") {
  llm::MockGateway mock;
  Entity syn = mock.synonym_replace(ent("cat"));
  CHECK(syn.label == "cat-syn1");
  CHECK(syn.source == hier::EntitySource::kMutation);
  CHECK(mock.synonym_replace(ent("cat-syn1")).label == "cat-syn2");
}

TEST_CASE("mock synonym is idempotent per input across 100 calls") {
  llm::MockGateway mock;
  for (int i = 0; i < 100; ++i) {
    CHECK(mock.synonym_replace(ent("coffee mug")).label == "coffee mug-syn1");
  }
}

TEST_CASE("fuzz_expand count contract") {
  llm::MockGateway mock;
  CHECK(mock.fuzz_expand(ents({"coffee mug"}), 0).empty());

  auto out = mock.fuzz_expand(ents({"coffee mug"}), 3);
  REQUIRE(out.size() == 3);
  std::set<std::string> labels;
  for (const auto& e : out) {
    CHECK(e.source == hier::EntitySource::kFuzzing);
    CHECK(e.label != "coffee mug");
    labels.insert(e.label);
  }
  CHECK(labels.size() == 3);  // distinct, none equal to inputs

  // Deterministic across instances.
  llm::MockGateway other;
  auto again = other.fuzz_expand(ents({"coffee mug"}), 3);
  REQUIRE(again.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].label == out[i].label);
}

TEST_CASE("mock weave emits the fallback template") {
  llm::MockGateway mock;
  CHECK(mock.weave(ents({"cat"})) == "A scene depicting a cat.");
  CHECK(mock.weave(ents({"snowbird", "kitty"})) ==
        "A scene depicting a snowbird and a kitty.");
  CHECK_THROWS_AS(mock.weave({}), InputError);
}

TEST_CASE("weave containment holds over 50 random mock weaves") {
  llm::MockGateway mock;
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Entity> entities;
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n; ++i)
      entities.push_back(ent("item" + std::to_string(rng.uniform_int(1000))));
    const std::string woven = mock.weave(entities);
    for (const auto& e : entities)
      CHECK(woven.find(e.label) != std::string::npos);
  }
}

TEST_CASE("mock judge keyed on filename token, 10-file batch by hand enumeration") {
  llm::MockGateway mock;
  const std::vector<std::filesystem::path> refs = {"ref1.json"};

  // Hand enumeration: files 0,2,4,6,8 carry the removed_ token -> yes;
  // file 9 carries null_ -> null; 1,3,5,7 -> no.
  int yes = 0, no = 0, nulls = 0;
  for (int i = 0; i < 10; ++i) {
    std::string name;
    if (i == 9) name = "null_img9.json";
    else if (i % 2 == 0) name = "removed_img" + std::to_string(i) + ".json";
    else name = "img" + std::to_string(i) + ".json";
    auto v = mock.judge_removal({name}, refs, "redstyle");
    if (v.value == llm::Verdict::kYes) ++yes;
    if (v.value == llm::Verdict::kNo) ++no;
    if (v.value == llm::Verdict::kNull) ++nulls;
  }
  CHECK(yes == 5);
  CHECK(no == 4);
  CHECK(nulls == 1);

  CHECK_THROWS_AS(mock.judge_removal({}, refs, "x"), InputError);
  CHECK_THROWS_AS(mock.judge_removal({"a.json"}, {}, "x"), InputError);
}

TEST_CASE("mock gateway counts calls per task") {
  llm::MockGateway mock;
  CHECK(mock.call_count() == 0);
  (void)mock.weave(ents({"cat"}));
  (void)mock.synonym_replace(ent("cat"));
  CHECK(mock.call_count() == 2);
  CHECK(mock.call_count(llm::Task::kWeave) == 1);
  CHECK(mock.call_count(llm::Task::kSynonym) == 1);
  CHECK(mock.call_count(llm::Task::kJudge) == 0);
}

// ============================================================================
// Audit log
// ============================================================================

TEST_CASE("audit log replay reproduces all judge verdicts") {
  test::TempDir dir("audit");
  const auto log_path = dir.path() / "audit.jsonl";
  {
    auto audit = std::make_shared<llm::AuditLog>(log_path);
    llm::MockGateway mock(audit);
    const std::vector<std::filesystem::path> refs = {"ref.json"};
    (void)mock.judge_removal({"removed_a.json"}, refs, "c");
    (void)mock.judge_removal({"b.json"}, refs, "c");
    (void)mock.judge_removal({"null_c.json"}, refs, "c");
  }

  std::ifstream in(log_path);
  std::string line;
  std::vector<llm::Verdict> replayed;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("task"));
    CHECK(j.contains("request_digest"));
    CHECK(j.contains("timestamp"));
    if (j["task"] == "judge")
      replayed.push_back(llm::parse_verdict(j["response"].get<std::string>()));
  }
  REQUIRE(replayed.size() == 3);
  CHECK(replayed[0] == llm::Verdict::kYes);
  CHECK(replayed[1] == llm::Verdict::kNo);
  CHECK(replayed[2] == llm::Verdict::kNull);
}

// ============================================================================
// HTTP gateway against a local server
// ============================================================================

namespace {

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};

  explicit LocalServer(std::function<std::string(const nlohmann::json&, int)> reply) {
    server.Post("/v1/chat/completions",
                [this, reply](const httplib::Request& req, httplib::Response& res) {
                  const int n = requests.fetch_add(1);
                  nlohmann::json body = nlohmann::json::parse(req.body);
                  const std::string text = reply(body, n);
                  if (text == "<fail>") {
                    res.status = 500;
                    return;
                  }
                  nlohmann::json out{
                      {"choices",
                       nlohmann::json::array(
                           {{{"message", {{"role", "assistant"}, {"content", text}}}}})}};
                  res.set_content(out.dump(), "application/json");
                });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this]() { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }

  llm::GatewayConfig config() const {
    llm::GatewayConfig cfg;
    cfg.provider = "http";
    cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model = "test-model";
    cfg.max_retries = 2;
    cfg.retry_backoff_ms = 1;
    return cfg;
  }
};

}  // namespace

TEST_CASE("http gateway round-trips a synonym request") {
  LocalServer server([](const nlohmann::json& body, int) -> std::string {
    const std::string prompt = body["messages"][0]["content"].get<std::string>();
    CHECK(prompt.find("cat") != std::string::npos);
    return "feline friend";
  });
  llm::HttpGateway gw(server.config());
  Entity syn = gw.synonym_replace(ent("cat"));
  CHECK(syn.label == "feline friend");
  CHECK(syn.source == hier::EntitySource::kMutation);
}

TEST_CASE("http gateway retries then succeeds") {
  LocalServer server([](const nlohmann::json&, int n) -> std::string {
    return n == 0 ? "<fail>" : "desk lamp\nbackpack\npencil case";
  });
  llm::HttpGateway gw(server.config());
  auto out = gw.fuzz_expand(ents({"coffee mug"}), 3);
  REQUIRE(out.size() == 3);
  CHECK(out[0].label == "desk lamp");
  CHECK(server.requests.load() == 2);
}

TEST_CASE("http gateway raises GatewayError after exhausting retries") {
  LocalServer server([](const nlohmann::json&, int) -> std::string { return "<fail>"; });
  llm::HttpGateway gw(server.config());
  CHECK_THROWS_AS(gw.synonym_replace(ent("cat")), GatewayError);
  CHECK(server.requests.load() == 3);  // initial try + 2 retries
}

TEST_CASE("http weave falls back to the template when entities are dropped") {
  LocalServer server([](const nlohmann::json&, int) -> std::string {
    return "A picture of something unrelated.";
  });
  llm::HttpGateway gw(server.config());
  const std::string woven = gw.weave(ents({"snowbird", "kitty"}));
  CHECK(woven == "A scene depicting a snowbird and a kitty.");
}

TEST_CASE("http judge composes references plus candidate and parses the verdict") {
  LocalServer server([](const nlohmann::json& body, int) -> std::string {
    const auto& content = body["messages"][0]["content"];
    REQUIRE(content.is_array());
    CHECK(content.size() == 4);  // text + 2 references + 1 candidate
    const std::string text = content[0]["text"].get<std::string>();
    CHECK(text.find("redstyle") != std::string::npos);
    CHECK(content[3]["path"].get<std::string>().find("candidate") != std::string::npos);
    return "Yes, the style is removed.";
  });
  llm::HttpGateway gw(server.config());
  auto verdict = gw.judge_removal({"candidate.json"}, {"ref1.json", "ref2.json"},
                                  "redstyle");
  CHECK(verdict.value == llm::Verdict::kYes);
}

TEST_CASE("http gateway caps concurrent in-flight requests") {
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  LocalServer server([&](const nlohmann::json&, int) -> std::string {
    const int now = in_flight.fetch_add(1) + 1;
    int expected = peak.load();
    while (now > expected && !peak.compare_exchange_weak(expected, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    in_flight.fetch_sub(1);
    return "word";
  });
  llm::GatewayConfig cfg = server.config();
  cfg.max_concurrency = 2;
  llm::HttpGateway gw(cfg);

  std::vector<std::thread> callers;
  for (int i = 0; i < 6; ++i) {
    callers.emplace_back([&gw, i]() {
      (void)gw.synonym_replace(ent("token" + std::to_string(i)));
    });
  }
  for (auto& t : callers) t.join();
  CHECK(server.requests.load() == 6);
  CHECK(peak.load() <= 2);
}

TEST_CASE("gateway factory honors provider and rejects unknown names") {
  llm::GatewayConfig cfg;
  cfg.provider = "mock";
  CHECK(llm::make_gateway(cfg) != nullptr);
  cfg.provider = "carrier-pigeon";
  CHECK_THROWS_AS(llm::make_gateway(cfg), ConfigError);
}
