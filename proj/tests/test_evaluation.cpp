// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ccrt/backend.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/evaluation.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/rng.hpp"
#include "test_util.hpp"

using namespace ccrt;
namespace fs = std::filesystem;

namespace {

eval::ToyImage synth_image(double center, std::uint64_t seed,
                           const std::string& caption = "synthetic") {
  eval::ToyImage img;
  img.caption = caption;
  img.seed = seed;
  img.shape = {2, 4, 4};
  Rng rng(seed);
  img.data.resize(32);
  for (auto& v : img.data) v = center + 0.5 * rng.normal();
  return img;
}

/// Writes `n` images around `center` under dir, returns their paths.
std::vector<fs::path> synth_pool(const fs::path& dir, double center, int n,
                                 std::uint64_t seed_base) {
  std::vector<fs::path> out;
  for (int i = 0; i < n; ++i) {
    const fs::path p = dir / ("img_" + std::to_string(seed_base + i) + ".json");
    eval::write_toy_image(p, synth_image(center, seed_base + i));
    out.push_back(p);
  }
  return out;
}

/// Gateway whose judge always fails; other ops unused.
class FailingGateway final : public llm::LlmGateway {
 public:
  hier::Entity synonym_replace(const hier::Entity&) override {
    throw GatewayError("down");
  }
  std::vector<hier::Entity> fuzz_expand(const std::vector<hier::Entity>&, int) override {
    throw GatewayError("down");
  }
  std::string weave(const std::vector<hier::Entity>&) override {
    throw GatewayError("down");
  }
  llm::JudgeVerdict judge_removal(const std::vector<fs::path>&,
                                  const std::vector<fs::path>&,
                                  const std::string&) override {
    throw GatewayError("down");
  }
};

}  // namespace

// ============================================================================
// Toy images + features
// ============================================================================

TEST_CASE("toy image round-trips through disk") {
  test::TempDir dir("img");
  eval::ToyImage img = synth_image(0.3, 5, "a scene depicting a cat");
  img.checkpoint = "ck-test";
  const fs::path p = dir.path() / "img.json";
  eval::write_toy_image(p, img);
  eval::ToyImage back = eval::read_toy_image(p);
  CHECK(back.caption == img.caption);
  CHECK(back.seed == img.seed);
  CHECK(back.checkpoint == img.checkpoint);
  CHECK(back.shape == img.shape);
  CHECK(back.data == img.data);
}

TEST_CASE("pooled features have the documented layout") {
  eval::ToyImage img = synth_image(0.0, 9);
  const auto feats = eval::pooled_features(img);
  // Per channel: 16 average pools + mean.
  CHECK(feats.size() == 2 * 17);
  // Channel means land at fixed offsets.
  double mean0 = 0.0;
  for (int i = 0; i < 16; ++i) mean0 += img.data[static_cast<std::size_t>(i)];
  mean0 /= 16.0;
  CHECK(feats[16] == doctest::Approx(mean0).epsilon(1e-12));
}

// ============================================================================
// Concept classifier
// ============================================================================

TEST_CASE("linearly separable pool trains to perfect test accuracy") {
  test::TempDir dir("cls");
  auto concept_pool = synth_pool(dir.path() / "pos", +0.8, 40, 1000);
  auto other_pool = synth_pool(dir.path() / "neg", -0.8, 40, 2000);

  eval::ClassifierOptions opt;
  opt.seed = 3;
  auto cls = eval::train_concept_classifier("redstyle", concept_pool, other_pool, opt);
  CHECK(cls.test_accuracy == 1.0);
  CHECK(cls.train_accuracy == 1.0);

  // Orientation: prediction 1 means "concept absent".
  CHECK(cls.predict(synth_image(-0.8, 77)) == 1);
  CHECK(cls.predict(synth_image(+0.8, 78)) == 0);
}

TEST_CASE("label-shuffled pool scores chance accuracy over 10 seeds") {
  test::TempDir dir("shuf");
  // One mixed bag of images; "pools" are random re-assignments, so the
  // labels carry no signal at all.
  auto bag_a = synth_pool(dir.path() / "a", +0.8, 60, 100);
  auto bag_b = synth_pool(dir.path() / "b", -0.8, 60, 500);
  std::vector<fs::path> all = bag_a;
  all.insert(all.end(), bag_b.begin(), bag_b.end());

  double acc_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<fs::path> shuffled = all;
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
    std::vector<fs::path> pos(shuffled.begin(), shuffled.begin() + 60);
    std::vector<fs::path> neg(shuffled.begin() + 60, shuffled.end());
    eval::ClassifierOptions opt;
    opt.seed = seed;
    acc_sum += eval::train_concept_classifier("noise", pos, neg, opt).test_accuracy;
  }
  const double mean_acc = acc_sum / 10.0;
  CHECK(mean_acc > 0.4);
  CHECK(mean_acc < 0.6);
}

TEST_CASE("degenerate pools are rejected") {
  test::TempDir dir("deg");
  auto pool = synth_pool(dir.path() / "p", 0.0, 4, 10);
  eval::ClassifierOptions opt;
  CHECK_THROWS_AS(eval::train_concept_classifier("x", pool, {}, opt), DataError);
  opt.split = 1.5;
  CHECK_THROWS_AS(eval::train_concept_classifier("x", pool, pool, opt), ConfigError);
}

TEST_CASE("classifier artifact round-trips with identical predictions") {
  test::TempDir dir("art");
  auto pos = synth_pool(dir.path() / "p", +0.8, 20, 1);
  auto neg = synth_pool(dir.path() / "n", -0.8, 20, 60);
  eval::ClassifierOptions opt;
  auto cls = eval::train_concept_classifier("redstyle", pos, neg, opt);
  cls.save(dir.path() / "cls.json");
  auto loaded = eval::ConceptClassifier::load(dir.path() / "cls.json");
  CHECK(loaded.concept_name == "redstyle");
  CHECK(loaded.weights == cls.weights);
  CHECK(loaded.test_accuracy == cls.test_accuracy);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto img = synth_image(s % 2 ? 0.8 : -0.8, 900 + s);
    CHECK(loaded.predict(img) == cls.predict(img));
  }
}

// ============================================================================
// rr_cls
// ============================================================================

TEST_CASE("rr_cls counts removed predictions") {
  test::TempDir dir("rrc");
  // Manual classifier keyed on the channel-0 mean feature (index 16):
  // positive mean -> concept absent.
  eval::ConceptClassifier cls;
  cls.concept_name = "redstyle";
  cls.weights.assign(35, 0.0);
  cls.weights[16] = 10.0;

  SUBCASE("always-removed classifier gives 1.0") {
    auto images = synth_pool(dir.path() / "a", +1.0, 5, 10);
    CHECK(eval::rr_cls(cls, images).value == 1.0);
  }

  SUBCASE("6 of 10 removed gives 0.6 by hand count") {
    std::vector<fs::path> images;
    // Hand enumeration: centers +2 (absent) for 6, -2 (present) for 4.
    for (int i = 0; i < 10; ++i) {
      const double center = i < 6 ? +2.0 : -2.0;
      const fs::path p = dir.path() / ("h" + std::to_string(i) + ".json");
      eval::write_toy_image(p, synth_image(center, 40 + i));
      images.push_back(p);
    }
    auto result = eval::rr_cls(cls, images);
    CHECK(result.value == 0.6);
    CHECK(result.n == 10);
    REQUIRE(result.raw.size() == 10);
    int ones = 0;
    for (const auto& [path, pred] : result.raw) ones += pred;
    CHECK(ones == 6);

    // Permutation invariance of the rate.
    std::vector<fs::path> shuffled = images;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(eval::rr_cls(cls, shuffled).value == 0.6);
  }

  SUBCASE("empty image list is rejected") {
    CHECK_THROWS_AS(eval::rr_cls(cls, {}), InputError);
  }
}

// ============================================================================
// rr_llm
// ============================================================================

TEST_CASE("rr_llm on the 7-yes 2-no 1-null fixture") {
  test::TempDir dir("rrl");
  llm::MockGateway mock;
  std::vector<fs::path> images;
  for (int i = 0; i < 7; ++i) {
    const fs::path p = dir.path() / ("removed_y" + std::to_string(i) + ".json");
    test::spit(p, "{}");
    images.push_back(p);
  }
  for (int i = 0; i < 2; ++i) {
    const fs::path p = dir.path() / ("plain_n" + std::to_string(i) + ".json");
    test::spit(p, "{}");
    images.push_back(p);
  }
  const fs::path pn = dir.path() / "null_z.json";
  test::spit(pn, "{}");
  images.push_back(pn);

  const std::vector<fs::path> refs = {dir.path() / "ref.json"};
  auto result = eval::rr_llm(mock, images, refs, "redstyle");
  CHECK(result.value == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(result.n_judged == 10);
  CHECK(result.null_rate == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(result.value_null_as_removed == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(result.n_unjudged == 0);

  // Permutation invariance.
  std::vector<fs::path> shuffled = images;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(eval::rr_llm(mock, shuffled, refs, "redstyle").value ==
        doctest::Approx(0.7).epsilon(1e-12));

  SUBCASE("all yes gives 1.0") {
    std::vector<fs::path> yes(images.begin(), images.begin() + 7);
    CHECK(eval::rr_llm(mock, yes, refs, "redstyle").value == 1.0);
  }
}

TEST_CASE("rr_llm with a dead gateway raises an evaluation error") {
  test::TempDir dir("dead");
  FailingGateway gateway;
  const fs::path img = dir.path() / "a.json";
  test::spit(img, "{}");
  CHECK_THROWS_AS(
      eval::rr_llm(gateway, {img}, {dir.path() / "ref.json"}, "redstyle"),
      EvaluationError);
}

// ============================================================================
// Alignment scorers
// ============================================================================

TEST_CASE("mock scorer measures prompt-caption token overlap") {
  test::TempDir dir("align");
  const fs::path full = dir.path() / "full.json";
  eval::write_toy_image(full, synth_image(0.0, 1, "a painting of a cat"));
  CHECK(eval::alignment_score("mock", "a painting of a cat", full) == 1.0);

  const fs::path disjoint = dir.path() / "disjoint.json";
  eval::write_toy_image(disjoint, synth_image(0.0, 2, "something else entirely"));
  CHECK(eval::alignment_score("mock", "violin teapot", disjoint) == 0.0);

  CHECK_THROWS_AS(eval::get_scorer("clip-production"), ConfigError);

  eval::register_scorer("half", [](const std::string&, const fs::path&) { return 0.5; });
  CHECK(eval::alignment_score("half", "x", full) == 0.5);
}

// ============================================================================
// evaluate_checkpoint
// ============================================================================

TEST_CASE("evaluate_checkpoint generates, scores, and self-verifies") {
  test::TempDir dir("evalck");
  backend::ToyConfig cfg;
  cfg.latent_shape = {2, 4, 4};
  cfg.t_max = 12;
  cfg.hidden_dim = 16;
  cfg.embed_dim = 8;
  cfg.vocab_size = 101;
  backend::ModelHandle teacher = backend::make_toy_teacher(cfg);
  backend::ModelHandle copy = teacher;
  const std::string id = backend::save_checkpoint(copy, dir.path());

  eval::PromptSet prompts;
  prompts.id = "toyset";
  prompts.prompts = {"a scene depicting a cat", "a scene depicting a violin"};

  eval::MetricConfig mc;
  mc.align_scorers = {"mock"};
  mc.gen_seed = 9;

  auto report = eval::evaluate_checkpoint(dir.path(), id, prompts, mc, nullptr);
  CHECK(report.checkpoint_id == id);
  CHECK(report.complete);
  REQUIRE(report.metrics.size() == 1);
  CHECK(report.metrics[0].name == "align:mock");
  CHECK(report.metrics[0].n == 2);

  // Self-verification: the aggregate equals the mean of the raw records.
  double sum = 0.0;
  for (const auto& r : report.metrics[0].raw) sum += r.at("score").get<double>();
  CHECK(report.metrics[0].value ==
        doctest::Approx(sum / report.metrics[0].n).epsilon(1e-12));
  // Captions equal prompts, so the mock overlap is exactly 1.
  CHECK(report.metrics[0].value == 1.0);

  // Determinism: a second evaluation reproduces values and raw records.
  auto again = eval::evaluate_checkpoint(dir.path(), id, prompts, mc, nullptr);
  CHECK(again.metrics[0].value == report.metrics[0].value);
  CHECK(again.metrics[0].raw == report.metrics[0].raw);

  // Round-trip through the report file.
  const fs::path report_path = dir.path() / "reports" / "r.json";
  eval::write_report(report_path, report);
  auto loaded = eval::read_report(report_path);
  CHECK(loaded.checkpoint_id == report.checkpoint_id);
  REQUIRE(loaded.metrics.size() == 1);
  CHECK(loaded.metrics[0].value == report.metrics[0].value);
  CHECK(loaded.metrics[0].raw == report.metrics[0].raw);
}

TEST_CASE("empty metric config yields a zero-entry report flagged incomplete") {
  test::TempDir dir("evalempty");
  backend::ToyConfig cfg;
  cfg.latent_shape = {1, 2, 2};
  cfg.t_max = 8;
  cfg.hidden_dim = 8;
  cfg.embed_dim = 4;
  cfg.vocab_size = 31;
  backend::ModelHandle teacher = backend::make_toy_teacher(cfg);
  backend::ModelHandle copy = teacher;
  const std::string id = backend::save_checkpoint(copy, dir.path());

  eval::PromptSet prompts;
  prompts.id = "p";
  prompts.prompts = {"anything"};
  auto report = eval::evaluate_checkpoint(dir.path(), id, prompts, {}, nullptr);
  CHECK(report.metrics.empty());
  CHECK_FALSE(report.complete);
}

TEST_CASE("evaluate_checkpoint runs rr-cls through a stored artifact") {
  test::TempDir dir("evalrrc");
  backend::ToyConfig cfg;
  cfg.latent_shape = {2, 4, 4};
  cfg.t_max = 12;
  cfg.hidden_dim = 16;
  cfg.embed_dim = 8;
  cfg.vocab_size = 101;
  backend::ModelHandle teacher = backend::make_toy_teacher(cfg);
  backend::ModelHandle copy = teacher;
  const std::string id = backend::save_checkpoint(copy, dir.path());

  // Classifier trained on synthetic pools, stored as an artifact.
  auto pos = synth_pool(dir.path() / "pos", +0.8, 20, 1);
  auto neg = synth_pool(dir.path() / "neg", -0.8, 20, 50);
  eval::ClassifierOptions opt;
  auto cls = eval::train_concept_classifier("redstyle", pos, neg, opt);
  cls.save(dir.path() / "classifiers" / "redstyle.json");

  eval::PromptSet prompts;
  prompts.id = "p";
  prompts.prompts = {"a scene depicting a cat"};
  eval::MetricConfig mc;
  mc.rr_cls = true;
  mc.classifier_artifact = dir.path() / "classifiers" / "redstyle.json";
  auto report = eval::evaluate_checkpoint(dir.path(), id, prompts, mc, nullptr);
  REQUIRE(report.metrics.size() == 1);
  CHECK(report.metrics[0].name == "rr-cls");
  CHECK(report.metrics[0].n == 1);
  CHECK((report.metrics[0].value == 0.0 || report.metrics[0].value == 1.0));

  // Self-verifying: the rate equals its formula applied to the raw records.
  double ones = 0;
  int counted = 0;
  for (const auto& rec : report.metrics[0].raw) {
    if (rec.contains("prediction")) {
      ones += rec.at("prediction").get<int>();
      ++counted;
    }
  }
  REQUIRE(counted == report.metrics[0].n);
  CHECK(report.metrics[0].value == ones / counted);
}

TEST_CASE("prompt set loader skips blank lines") {
  test::TempDir dir("pset");
  test::spit(dir.path() / "prompts.txt", "first prompt\n\nsecond prompt\n");
  auto set = eval::load_prompt_set(dir.path() / "prompts.txt");
  CHECK(set.id == "prompts");
  REQUIRE(set.prompts.size() == 2);
  CHECK(set.prompts[0] == "first prompt");
  CHECK(set.prompts[1] == "second prompt");
}
