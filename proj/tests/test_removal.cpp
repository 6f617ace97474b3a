// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ccrt/backend.hpp"
#include "ccrt/calibration.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/hierarchy.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/removal.hpp"
#include "test_util.hpp"

using namespace ccrt;
using backend::Condition;
using backend::LatentSample;
using backend::ModelHandle;
using backend::ToyConfig;
using removal::RemovalStepConfig;

namespace {

ToyConfig pair_config() {
  // Two-element predictions for hand arithmetic.
  ToyConfig cfg;
  cfg.latent_shape = {1, 1, 2};
  cfg.t_max = 10;
  cfg.hidden_dim = 2;
  cfg.embed_dim = 2;
  cfg.vocab_size = 31;
  cfg.activation = "linear";
  cfg.skip_gain = 0.0;
  return cfg;
}

ToyConfig train_config() {
  ToyConfig cfg;
  cfg.latent_shape = {2, 4, 4};
  cfg.t_max = 16;
  cfg.hidden_dim = 24;
  cfg.embed_dim = 8;
  cfg.vocab_size = 101;
  cfg.init_seed = 107;
  return cfg;
}

/// Zero network whose output is always `bias`, regardless of input.
ModelHandle constant_net(const std::vector<double>& bias) {
  ToyConfig cfg = pair_config();
  ModelHandle handle = backend::clone_trainable(backend::make_toy_teacher(cfg));
  backend::TrainableModel& net = handle.trainable();
  for (std::size_t i = 0; i < net.param_count(); ++i) net.set_param(i, 0.0);
  const auto b2 = net.param_segment("b2");
  for (std::size_t i = 0; i < bias.size(); ++i) net.set_param(b2.offset + i, bias[i]);
  return handle;
}

/// Network with uncond prediction = base and conditional("c") = base + shift,
/// built from a linear toy whose hidden layer forwards the embedding sum.
ModelHandle shifted_net(const std::vector<double>& base,
                        const std::vector<double>& shift) {
  ToyConfig cfg = pair_config();
  ModelHandle handle = backend::clone_trainable(backend::make_toy_teacher(cfg));
  backend::TrainableModel& net = handle.trainable();
  for (std::size_t i = 0; i < net.param_count(); ++i) net.set_param(i, 0.0);
  const std::size_t d = 2 + 2 + 8;
  const auto w1 = net.param_segment("w1");
  net.set_param(w1.offset + 0 * d + 2, 1.0);  // hidden0 <- cond[0]
  net.set_param(w1.offset + 1 * d + 3, 1.0);  // hidden1 <- cond[1]
  const auto w2 = net.param_segment("w2");
  net.set_param(w2.offset + 0, 1.0);
  net.set_param(w2.offset + 3, 1.0);
  const auto b2 = net.param_segment("b2");
  net.set_param(b2.offset + 0, base[0]);
  net.set_param(b2.offset + 1, base[1]);
  const auto embed = net.param_segment("embed");
  const std::size_t row = fnv1a64("c") % 31;
  net.set_param(embed.offset + row * 2 + 0, shift[0]);
  net.set_param(embed.offset + row * 2 + 1, shift[1]);
  return handle;
}

LatentSample any_latent(int t) {
  LatentSample x;
  x.data = {0.1, -0.2};
  x.timestep = t;
  return x;
}

std::vector<calib::CalibrationPrompt> fallback_prompts(
    std::initializer_list<std::string> labels) {
  std::vector<calib::CalibrationPrompt> out;
  for (const auto& l : labels) {
    calib::CalibrationPrompt p;
    p.entities = {hier::Entity{l, std::nullopt, hier::EntitySource::kInitial}};
    p.text = llm::fallback_weave(p.entities);
    out.push_back(std::move(p));
  }
  return out;
}

RemovalStepConfig toy_step(const std::string& concept_label) {
  RemovalStepConfig cfg;
  cfg.concept_name = concept_label;
  cfg.concept_prompts = {"a painting in " + concept_label + " style",
                         "a portrait in " + concept_label + " style"};
  cfg.lambda = 0.5;
  cfg.eta = 1.0;
  cfg.p = 1;
  cfg.iterations = 200;
  cfg.learning_rate = 0.005;
  cfg.batch_size = 4;
  cfg.warmup_iterations = 20;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

// ============================================================================
// negative_guidance
// ============================================================================

TEST_CASE("eta=0 collapses to the unconditional prediction") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  LatentSample x;
  x.data.assign(32, 0.25);
  x.timestep = 3;
  const Condition c = Condition::for_concept("a redstyle thing");
  auto uncond = backend::predict_noise(teacher, x, std::nullopt);
  auto delta = removal::negative_guidance(teacher, x, c, 0.0);
  CHECK(delta.data == uncond.data);
}

TEST_CASE("zero concept effect leaves delta at the unconditional prediction") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  LatentSample x;
  x.data.assign(32, -0.1);
  x.timestep = 5;
  // Empty concept text tokenizes to nothing: conditional == unconditional.
  const Condition c{"", backend::ConditionKind::kConcept};
  auto uncond = backend::predict_noise(teacher, x, std::nullopt);
  for (double eta : {0.5, 1.0, 3.0}) {
    auto delta = removal::negative_guidance(teacher, x, c, eta);
    CHECK(delta.data == uncond.data);
  }
}

TEST_CASE("negative guidance hand-arithmetic oracle") {
  // uncond = [0.2, 0.4], cond = [0.6, 0.2]  =>  delta = [-0.2, 0.6] at eta=1.
  ModelHandle m = shifted_net({0.2, 0.4}, {0.4, -0.2});
  const Condition c = Condition::for_concept("c");

  auto uncond = backend::predict_noise(m, any_latent(2), std::nullopt);
  CHECK(uncond.data[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(uncond.data[1] == doctest::Approx(0.4).epsilon(1e-12));
  auto cond = backend::predict_noise(m, any_latent(2), c);
  CHECK(cond.data[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(cond.data[1] == doctest::Approx(0.2).epsilon(1e-12));

  auto delta = removal::negative_guidance(m, any_latent(2), c, 1.0);
  CHECK(delta.data[0] == doctest::Approx(-0.2).epsilon(1e-9));
  CHECK(delta.data[1] == doctest::Approx(0.6).epsilon(1e-9));

  const Condition wrong_kind = Condition::calibration("c");
  CHECK_THROWS_AS(removal::negative_guidance(m, any_latent(2), wrong_kind, 1.0),
                  InputError);
}

TEST_CASE("delta carries no gradient: student updates leave it bit-identical") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  ModelHandle student = backend::clone_trainable(teacher);
  LatentSample x;
  x.data.assign(32, 0.3);
  x.timestep = 4;
  const Condition c = Condition::for_concept("a redstyle thing");

  auto before = removal::negative_guidance(teacher, x, c, 1.0);
  for (int i = 0; i < 50; ++i)
    student.trainable().set_param(static_cast<std::size_t>(i), 9.0);
  auto after = removal::negative_guidance(teacher, x, c, 1.0);
  CHECK(before.data == after.data);
}

// ============================================================================
// removal_loss / alignment_loss / total_loss
// ============================================================================

TEST_CASE("removal loss is exactly zero when the student outputs delta") {
  ModelHandle teacher = shifted_net({0.2, 0.4}, {0.4, -0.2});
  const Condition c = Condition::for_concept("c");
  auto delta = removal::negative_guidance(teacher, any_latent(1), c, 1.0);

  // Force the student to emit the computed delta bit for bit.
  ModelHandle student = constant_net(delta.data);
  CHECK(removal::removal_loss(student, teacher, any_latent(1), c, 1.0, 1) == 0.0);
}

TEST_CASE("removal loss hand-arithmetic oracle") {
  // delta = [-0.2, 0.6], student = [0.0, 0.5], p=1  =>  0.2 + 0.1 = 0.3.
  ModelHandle teacher = shifted_net({0.2, 0.4}, {0.4, -0.2});
  ModelHandle student = constant_net({0.0, 0.5});
  const Condition c = Condition::for_concept("c");
  const double loss = removal::removal_loss(student, teacher, any_latent(1), c, 1.0, 1);
  CHECK(loss == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("p=1 removal loss equals a reference sum of absolute differences") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  ModelHandle student = backend::clone_trainable(teacher);
  Rng rng(3);
  for (std::size_t i = 0; i < student.trainable().param_count(); i += 3)
    student.trainable().set_param(i, student.trainable().param(i) + 0.1 * rng.normal());

  LatentSample x;
  x.data.resize(32);
  for (auto& v : x.data) v = rng.normal();
  x.timestep = 6;
  const Condition c = Condition::for_concept("a bluestyle mug");

  const auto delta = removal::negative_guidance(teacher, x, c, 1.0);
  const auto pred = backend::predict_noise(student, x, c);
  double reference = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    reference += std::fabs(pred.data[i] - delta.data[i]);

  CHECK(removal::removal_loss(student, teacher, x, c, 1.0, 1) ==
        doctest::Approx(reference).epsilon(1e-12));
}

TEST_CASE("alignment loss basics") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  ModelHandle student = backend::clone_trainable(teacher);
  LatentSample x;
  x.data.assign(32, 0.2);
  x.timestep = 2;
  const Condition e = Condition::calibration("a scene depicting a cat");
  CHECK(removal::alignment_loss(student, teacher, x, e) == 0.0);

  // Predictions [1,2] vs [0,0]: MSE = (1 + 4) / 2 = 2.5 exactly.
  ModelHandle a = constant_net({1.0, 2.0});
  ModelHandle b = constant_net({0.0, 0.0});
  const Condition e2 = Condition::calibration("anything");
  CHECK(removal::alignment_loss(a, b, any_latent(1), e2) == 2.5);
  CHECK(removal::alignment_loss(b, a, any_latent(1), e2) == 2.5);  // symmetric

  const Condition wrong = Condition::for_concept("x");
  CHECK_THROWS_AS(removal::alignment_loss(a, b, any_latent(1), wrong), InputError);
}

TEST_CASE("total loss composition") {
  CHECK(removal::total_loss(0.3, 2.5, 0.5) == doctest::Approx(1.55).epsilon(1e-12));
  CHECK(removal::total_loss(0.7, 123.0, 0.0) == 0.7);  // bitwise collapse
  CHECK(removal::total_loss(0.0, 0.0, 1.0) >= 0.0);
  CHECK_THROWS_AS(removal::total_loss(1.0, 1.0, -0.1), ConfigError);
}

// ============================================================================
// Gradient check
// ============================================================================

TEST_CASE("analytic gradient matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ToyConfig cfg = train_config();
    cfg.init_seed = seed;
    ModelHandle teacher = backend::make_toy_teacher(cfg);
    ModelHandle student = backend::clone_trainable(teacher);
    backend::TrainableModel& net = student.trainable();

    // Drift the student so both loss terms are non-degenerate.
    Rng drift(derive_seed(seed, std::string_view("drift")));
    for (std::size_t i = 0; i < net.param_count(); i += 2)
      net.set_param(i, net.param(i) + 0.05 * drift.normal());

    RemovalStepConfig step = toy_step("redstyle");
    step.batch_size = 2;
    const auto calibration = fallback_prompts({"cat", "teapot"});

    // p=1 has kinks at zero residuals; re-draw the probe until every
    // residual is comfortably away from zero so central differences are valid.
    removal::LossProbe probe;
    bool valid = false;
    for (std::uint64_t attempt = 0; attempt < 8 && !valid; ++attempt) {
      probe = removal::make_loss_probe(student, teacher, step, calibration,
                                       derive_seed(seed, attempt));
      valid = true;
      for (std::size_t b = 0; b < probe.concept_latents.size(); ++b) {
        const auto& xt = probe.concept_latents[b];
        const auto pred = net.predict(xt.data, &probe.concept_cond, xt.timestep);
        for (std::size_t i = 0; i < pred.size(); ++i) {
          if (std::fabs(pred[i] - probe.guidance_targets[b][i]) < 1e-4) valid = false;
        }
      }
    }
    REQUIRE(valid);

    std::vector<double> grad;
    const double loss0 = removal::probe_loss_and_grad(net, probe, grad);
    CHECK(std::isfinite(loss0));

    Rng coord_rng(derive_seed(seed, std::string_view("coords")));
    for (int k = 0; k < 20; ++k) {
      const std::size_t idx = coord_rng.uniform_int(net.param_count());
      const double original = net.param(idx);
      const double h = 1e-6 * (1.0 + std::fabs(original));

      net.set_param(idx, original + h);
      const double lp = removal::probe_loss(net, probe);
      net.set_param(idx, original - h);
      const double lm = removal::probe_loss(net, probe);
      net.set_param(idx, original);

      const double fd = (lp - lm) / (2.0 * h);
      const double an = grad[idx];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      CHECK(std::fabs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("p=2 removal loss equals a reference euclidean norm") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  ModelHandle student = backend::clone_trainable(teacher);
  Rng rng(9);
  for (std::size_t i = 0; i < student.trainable().param_count(); i += 4)
    student.trainable().set_param(i, student.trainable().param(i) + 0.1 * rng.normal());

  LatentSample x;
  x.data.resize(32);
  for (auto& v : x.data) v = rng.normal();
  x.timestep = 3;
  const Condition c = Condition::for_concept("a redstyle mug");

  const auto delta = removal::negative_guidance(teacher, x, c, 1.0);
  const auto pred = backend::predict_noise(student, x, c);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - delta.data[i];
    sum_sq += d * d;
  }
  CHECK(removal::removal_loss(student, teacher, x, c, 1.0, 2) ==
        doctest::Approx(std::sqrt(sum_sq)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches finite differences for the p=2 objective") {
  ToyConfig cfg = train_config();
  cfg.init_seed = 31;
  ModelHandle teacher = backend::make_toy_teacher(cfg);
  ModelHandle student = backend::clone_trainable(teacher);
  backend::TrainableModel& net = student.trainable();
  Rng drift(41);
  for (std::size_t i = 0; i < net.param_count(); i += 2)
    net.set_param(i, net.param(i) + 0.05 * drift.normal());

  RemovalStepConfig step = toy_step("redstyle");
  step.p = 2;
  step.batch_size = 2;
  const auto calibration = fallback_prompts({"cat"});
  const removal::LossProbe probe =
      removal::make_loss_probe(student, teacher, step, calibration, 3);

  std::vector<double> grad;
  removal::probe_loss_and_grad(net, probe, grad);

  Rng coord_rng(55);
  for (int k = 0; k < 20; ++k) {
    const std::size_t idx = coord_rng.uniform_int(net.param_count());
    const double original = net.param(idx);
    const double h = 1e-6 * (1.0 + std::fabs(original));
    net.set_param(idx, original + h);
    const double lp = removal::probe_loss(net, probe);
    net.set_param(idx, original - h);
    const double lm = removal::probe_loss(net, probe);
    net.set_param(idx, original);
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(grad[idx]), 1e-8});
    CHECK(std::fabs(fd - grad[idx]) / denom < 1e-4);
  }
}

// ============================================================================
// run_removal_step
// ============================================================================

TEST_CASE("zero-iteration step preserves the content hash") {
  test::TempDir dir("step0");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  cfg.iterations = 0;
  cfg.lambda = 0.0;
  auto result = removal::run_removal_step(teacher, teacher, cfg, {}, dir.path(), 0);
  CHECK(result.loss_trace.empty());

  ModelHandle loaded = backend::load_checkpoint(dir.path(), result.checkpoint_id);
  CHECK(loaded.content_hash() == teacher.content_hash());
  REQUIRE(loaded.lineage().size() == 1);
  CHECK(loaded.lineage()[0].concept_name == "redstyle");
}

TEST_CASE("calibration set is required when lambda > 0") {
  test::TempDir dir("needcal");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  CHECK_THROWS_AS(removal::run_removal_step(teacher, teacher, cfg, {}, dir.path(), 0),
                  InputError);
}

TEST_CASE("200 iterations descend the training objective") {
  test::TempDir dir("descent");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  auto result = removal::run_removal_step(teacher, teacher, cfg,
                                          fallback_prompts({"cat", "teapot"}),
                                          dir.path(), 0);
  REQUIRE(result.loss_trace.size() == 200);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += result.loss_trace[static_cast<std::size_t>(i)].total;
    last += result.loss_trace[static_cast<std::size_t>(190 + i)].total;
  }
  CHECK(last / 10.0 < first / 10.0);

  // Training log exists and replays the trace.
  std::ifstream log(dir.path() / "logs" / "step_1.jsonl");
  REQUIRE(log.good());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("loss_total").get<double>() ==
          result.loss_trace[static_cast<std::size_t>(lines)].total);
    ++lines;
  }
  CHECK(lines == 200);
}

TEST_CASE("with lambda=0 the per-iteration total equals the removal loss exactly") {
  test::TempDir dir("lz");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  cfg.iterations = 40;
  cfg.lambda = 0.0;
  auto result = removal::run_removal_step(teacher, teacher, cfg,
                                          fallback_prompts({"cat"}), dir.path(), 0);
  for (const auto& pt : result.loss_trace) CHECK(pt.total == pt.rm);
}

TEST_CASE("lambda=0.5 holds calibration alignment tighter than lambda=0") {
  test::TempDir dir_a("sweepa");
  test::TempDir dir_b("sweepb");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  const auto calibration = fallback_prompts({"cat", "teapot", "violin"});

  RemovalStepConfig reg = toy_step("redstyle");
  RemovalStepConfig noreg = reg;
  noreg.lambda = 0.0;

  auto with_reg =
      removal::run_removal_step(teacher, teacher, reg, calibration, dir_a.path(), 0);
  auto without_reg =
      removal::run_removal_step(teacher, teacher, noreg, calibration, dir_b.path(), 0);

  ModelHandle student_reg = backend::load_checkpoint(dir_a.path(), with_reg.checkpoint_id);
  ModelHandle student_none =
      backend::load_checkpoint(dir_b.path(), without_reg.checkpoint_id);

  auto mean_alignment = [&](const ModelHandle& student) {
    double sum = 0.0;
    int count = 0;
    Rng rng(77);
    for (const auto& prompt : calibration) {
      const Condition e = Condition::calibration(prompt.text);
      for (int k = 0; k < 4; ++k) {
        LatentSample x;
        x.data = backend::seeded_noise_latent(teacher.model(), rng.next_u64());
        x.timestep = static_cast<int>(rng.uniform_int(16));
        sum += removal::alignment_loss(student, teacher, x, e);
        ++count;
      }
    }
    return sum / count;
  };

  CHECK(mean_alignment(student_reg) < mean_alignment(student_none));
}

TEST_CASE("divergent training aborts without writing a checkpoint") {
  test::TempDir dir("diverge");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  cfg.learning_rate = 1e8;
  cfg.lambda = 1.0;
  cfg.iterations = 60;
  CHECK_THROWS_AS(removal::run_removal_step(teacher, teacher, cfg,
                                            fallback_prompts({"cat"}), dir.path(), 0),
                  TrainingFault);
  CHECK_FALSE(std::filesystem::exists(dir.path() / "checkpoints"));
}

// ============================================================================
// run_continuous
// ============================================================================

TEST_CASE("an empty concept sequence is rejected at validation") {
  removal::RemovalJob job;
  job.run_dir = "/tmp/unused";
  CHECK_THROWS_AS(job.validate(), ConfigError);
}

TEST_CASE("two-step chain: lineage order, teacher immutability, memorylessness") {
  test::TempDir dir("chain2");
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  const std::string teacher_hash = teacher.content_hash();
  hier::Hierarchy h =
      hier::load_hierarchy(std::string(CCRT_DATA_DIR) + "/sample_hierarchy.tsv");
  llm::MockGateway gateway;

  removal::RemovalJob job;
  job.run_dir = dir.path();
  RemovalStepConfig s1 = toy_step("redstyle");
  s1.iterations = 60;
  RemovalStepConfig s2 = toy_step("bluestyle");
  s2.concept_prompts = {"a sketch in bluestyle style"};
  s2.iterations = 60;
  s2.seed = 6;
  job.steps = {s1, s2};

  removal::ContinuousContext ctx;
  ctx.ga.top_k = 3;
  ctx.ga.generations = 1;
  ctx.ga.parent_count = 2;
  ctx.ga.mutation_rate = 0.2;
  ctx.ga.fuzz_count = 1;
  ctx.ga.md_samples = 2;
  ctx.ga.seed = 4;
  ctx.initial_entities = {"cat", "dog", "teapot", "violin"};

  auto results = removal::run_continuous(job, teacher, ctx, gateway, h);
  REQUIRE(results.size() == 2);

  // Teacher unchanged through the whole job.
  CHECK(teacher.content_hash() == teacher_hash);

  ModelHandle final_model = backend::load_checkpoint(dir.path(), results[1].checkpoint_id);
  REQUIRE(final_model.lineage().size() == 2);
  CHECK(final_model.lineage()[0].concept_name == "redstyle");
  CHECK(final_model.lineage()[1].concept_name == "bluestyle");
  CHECK(final_model.lineage()[0].checkpoint_id == results[0].checkpoint_id);

  // Manifest audit: removed concepts recorded in order, parent chain intact.
  std::ifstream in(dir.path() / "checkpoints" / results[1].checkpoint_id /
                   "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  CHECK(manifest.at("removed_concepts") ==
        nlohmann::json::array({"redstyle", "bluestyle"}));
  CHECK(manifest.at("parent_id") == results[0].checkpoint_id);

  // Calibration sets were mined per step.
  CHECK(std::filesystem::exists(dir.path() / "calibration" / "step_1.jsonl"));
  CHECK(std::filesystem::exists(dir.path() / "calibration" / "step_2.jsonl"));

  // Each step's calibration prompts were recorded in the result.
  CHECK(!results[0].calibration_used.empty());
  CHECK(!results[1].calibration_used.empty());
}

TEST_CASE("warm-up produces a drifted provisional student") {
  ModelHandle teacher = backend::make_toy_teacher(train_config());
  RemovalStepConfig cfg = toy_step("redstyle");
  ModelHandle provisional = removal::run_warmup(teacher, teacher, cfg, 25);
  CHECK(provisional.content_hash() != teacher.content_hash());

  // Warm-up is deterministic per config.
  ModelHandle again = removal::run_warmup(teacher, teacher, cfg, 25);
  CHECK(again.content_hash() == provisional.content_hash());
}
