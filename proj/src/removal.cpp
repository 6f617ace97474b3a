// SPDX-License-Identifier: Apache-2.0
#include "ccrt/removal.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ccrt/digest.hpp"
#include "ccrt/numeric.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::removal {

namespace fs = std::filesystem;

void RemovalStepConfig::validate() const {
  if (concept_name.empty()) throw ConfigError("removal step: concept must be non-empty");
  if (concept_prompts.empty())
    throw ConfigError("removal step: concept_prompts must be non-empty");
  if (lambda < 0.0) throw ConfigError("removal step: lambda must be >= 0");
  if (eta < 0.0) throw ConfigError("removal step: eta must be >= 0");
  if (p != 1 && p != 2) throw ConfigError("removal step: p must be 1 or 2");
  if (iterations < 0) throw ConfigError("removal step: iterations must be >= 0");
  if (learning_rate <= 0.0)
    throw ConfigError("removal step: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("removal step: batch_size must be >= 1");
  if (warmup_iterations < 0)
    throw ConfigError("removal step: warmup_iterations must be >= 0");
}

void RemovalJob::validate() const {
  if (steps.empty()) throw ConfigError("removal.steps: concept sequence must be non-empty");
  for (const auto& s : steps) s.validate();
}

// ============================================================================
// Loss primitives
// ============================================================================

backend::NoisePrediction negative_guidance(const backend::ModelHandle& teacher,
                                           const backend::LatentSample& x,
                                           const backend::Condition& c,
                                           double eta) {
  if (c.kind != backend::ConditionKind::kConcept)
    throw InputError("negative_guidance: condition must be a concept");
  const std::vector<double> uncond =
      predict_noise(teacher, x, std::nullopt).data;
  const std::vector<double> cond = predict_noise(teacher, x, c).data;
  std::vector<double> delta(uncond.size());
  for (std::size_t i = 0; i < delta.size(); ++i)
    delta[i] = uncond[i] - eta * (cond[i] - uncond[i]);
  return backend::NoisePrediction{std::move(delta)};
}

double removal_loss(const backend::ModelHandle& student,
                    const backend::ModelHandle& teacher,
                    const backend::LatentSample& x, const backend::Condition& c,
                    double eta, int p) {
  const backend::NoisePrediction delta = negative_guidance(teacher, x, c, eta);
  const backend::NoisePrediction pred = predict_noise(student, x, c);
  double loss = lp_distance(pred.data, delta.data, p);
  if (!std::isfinite(loss)) throw TrainingFault("removal_loss is non-finite");
  return loss;
}

double alignment_loss(const backend::ModelHandle& student,
                      const backend::ModelHandle& teacher,
                      const backend::LatentSample& x,
                      const backend::Condition& e) {
  if (e.kind != backend::ConditionKind::kCalibrationPrompt)
    throw InputError("alignment_loss: condition must be a calibration prompt");
  const backend::NoisePrediction sp = predict_noise(student, x, e);
  const backend::NoisePrediction tp = predict_noise(teacher, x, e);
  double loss = mse(sp.data, tp.data);
  if (!std::isfinite(loss)) throw TrainingFault("alignment_loss is non-finite");
  return loss;
}

double total_loss(double loss_rm, double loss_reg, double lambda) {
  if (lambda < 0.0) throw ConfigError("total_loss: lambda must be >= 0");
  return loss_rm + lambda * loss_reg;
}

// ============================================================================
// Inner training loop
// ============================================================================

namespace {

// dL/dpred for L = ||pred - target||_p. Subgradient 0 at kinks.
void lp_grad(std::span<const double> pred, std::span<const double> target,
             int p, double scale, std::vector<double>& dpred) {
  dpred.assign(pred.size(), 0.0);
  if (p == 1) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double v = pred[i] - target[i];
      if (v > 0.0) dpred[i] = scale;
      else if (v < 0.0) dpred[i] = -scale;
    }
  } else {
    double norm = lp_distance(pred, target, 2);
    if (norm > 0.0) {
      for (std::size_t i = 0; i < pred.size(); ++i)
        dpred[i] = scale * (pred[i] - target[i]) / norm;
    }
  }
}

struct IterationStats {
  LossPoint losses;
};

// One SGD iteration of Eq-style objective on `student`. Streams are keyed by
// (seed, iteration) so a step re-run from its initial checkpoint reproduces
// the same trajectory bit for bit.
IterationStats train_iteration(backend::ModelHandle& student,
                               const backend::ModelHandle& teacher,
                               const RemovalStepConfig& cfg,
                               const std::vector<calib::CalibrationPrompt>& calibration,
                               std::uint64_t loop_seed, int iter) {
  backend::TrainableModel& net = student.trainable();
  const std::size_t n_params = net.param_count();
  std::vector<double> grad(n_params, 0.0);
  std::vector<double> dpred;
  backend::ForwardCache cache;

  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  double loss_rm_acc = 0.0;
  double loss_reg_acc = 0.0;

  for (int b = 0; b < cfg.batch_size; ++b) {
    // Concept branch: x_t sampled from the student itself under the concept
    // prompt; the target delta_c comes from the frozen teacher only.
    {
      Rng rng(derive_seed(loop_seed, std::string_view("iter"),
                          static_cast<std::uint64_t>(iter), std::string_view("rm"),
                          static_cast<std::uint64_t>(b)));
      const auto& prompt = cfg.concept_prompts[rng.uniform_int(cfg.concept_prompts.size())];
      const int t = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(teacher.model().t_max())));
      const std::uint64_t noise_seed = rng.next_u64();
      const backend::Condition cond = backend::Condition::for_concept(prompt);
      const backend::LatentSample xt = sample_partial(student, cond, t, noise_seed);
      const backend::NoisePrediction delta = negative_guidance(teacher, xt, cond, cfg.eta);

      const std::vector<double> pred = net.forward_cached(xt.data, &cond, t, cache);
      loss_rm_acc += lp_distance(pred, delta.data, cfg.p);
      lp_grad(pred, delta.data, cfg.p, inv_batch, dpred);
      net.backward(cache, dpred, grad);
    }

    // Calibration branch.
    if (!calibration.empty()) {
      Rng rng(derive_seed(loop_seed, std::string_view("iter"),
                          static_cast<std::uint64_t>(iter), std::string_view("reg"),
                          static_cast<std::uint64_t>(b)));
      const auto& prompt = calibration[rng.uniform_int(calibration.size())];
      const int t = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(teacher.model().t_max())));
      const std::uint64_t noise_seed = rng.next_u64();
      const backend::Condition cond = backend::Condition::calibration(prompt.text);
      const backend::LatentSample xt = sample_partial(student, cond, t, noise_seed);
      const std::vector<double> teach =
          teacher.model().predict(xt.data, &cond, t);

      const std::vector<double> pred = net.forward_cached(xt.data, &cond, t, cache);
      loss_reg_acc += mse(pred, teach);
      const double n_elem = static_cast<double>(pred.size());
      dpred.assign(pred.size(), 0.0);
      for (std::size_t i = 0; i < pred.size(); ++i)
        dpred[i] = cfg.lambda * inv_batch * 2.0 * (pred[i] - teach[i]) / n_elem;
      net.backward(cache, dpred, grad);
    }
  }

  const double loss_rm = loss_rm_acc * inv_batch;
  const double loss_reg = loss_reg_acc * inv_batch;
  const double loss_total = total_loss(loss_rm, loss_reg, cfg.lambda);
  if (!std::isfinite(loss_total))
    throw TrainingFault("training diverged: non-finite loss at iteration " +
                        std::to_string(iter));

  for (double& g : grad) g *= -cfg.learning_rate;
  net.add_to_params(grad);

  return IterationStats{LossPoint{loss_rm, loss_reg, loss_total}};
}

}  // namespace

backend::ModelHandle run_warmup(const backend::ModelHandle& init,
                                const backend::ModelHandle& teacher,
                                const RemovalStepConfig& cfg, int iterations) {
  RemovalStepConfig warm = cfg;
  warm.lambda = 0.0;
  warm.seed = derive_seed(cfg.seed, std::string_view("warmup"));
  backend::ModelHandle student = backend::clone_trainable(init);
  for (int iter = 0; iter < iterations; ++iter)
    train_iteration(student, teacher, warm, {}, warm.seed, iter);
  return student;
}

StepResult run_removal_step(const backend::ModelHandle& init,
                            const backend::ModelHandle& teacher,
                            const RemovalStepConfig& cfg,
                            const std::vector<calib::CalibrationPrompt>& calibration,
                            const fs::path& run_dir, int step_index) {
  cfg.validate();
  if (cfg.lambda > 0.0 && calibration.empty())
    throw InputError("run_removal_step: calibration set required when lambda > 0");
  if (teacher.model().latent_size() != init.model().latent_size() ||
      teacher.model().t_max() != init.model().t_max())
    throw InputError("run_removal_step: teacher/init shape mismatch");

  const auto start = std::chrono::steady_clock::now();
  backend::ModelHandle student = backend::clone_trainable(init);

  fs::create_directories(run_dir / "logs");
  const fs::path log_path =
      run_dir / "logs" / ("step_" + std::to_string(step_index + 1) + ".jsonl");
  std::ofstream log(log_path, std::ios::trunc);

  StepResult result;
  result.calibration_used = calibration;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    IterationStats stats;
    try {
      stats = train_iteration(student, teacher, cfg, calibration, cfg.seed, iter);
    } catch (const BackendFault& e) {
      // Divergence shows up as non-finite latents/predictions inside the
      // iteration; the init checkpoint on disk stays the last good one.
      throw TrainingFault("training diverged at iteration " +
                          std::to_string(iter) + ": " + e.what());
    }
    result.loss_trace.push_back(stats.losses);
    if (log) {
      nlohmann::ordered_json line{{"step", step_index + 1},
                                  {"iter", iter},
                                  {"loss_rm", stats.losses.rm},
                                  {"loss_reg", stats.losses.reg},
                                  {"loss_total", stats.losses.total},
                                  {"lr", cfg.learning_rate}};
      log << line.dump() << "\n";
    }
  }
  log.close();

  result.checkpoint_id = backend::save_checkpoint(student, run_dir, cfg.concept_name);
  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ============================================================================
// Continuous chaining
// ============================================================================

namespace {

fs::path state_path(const fs::path& run_dir) { return run_dir / "state.json"; }

fs::path calibration_path(const fs::path& run_dir, int step_index) {
  return run_dir / "calibration" /
         ("step_" + std::to_string(step_index + 1) + ".jsonl");
}

}  // namespace

std::optional<RunState> read_run_state(const fs::path& run_dir) {
  std::ifstream in(state_path(run_dir));
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw CorruptionError("unreadable run state in " + run_dir.string());
  }
  RunState state;
  state.teacher_checkpoint_id = j.value("teacher_checkpoint_id", "");
  for (const auto& e : j.value("completed_steps", nlohmann::json::array()))
    state.completed.emplace_back(e.at("index").get<int>(),
                                 e.at("checkpoint_id").get<std::string>());
  return state;
}

void write_run_state(const fs::path& run_dir, const RunState& state) {
  fs::create_directories(run_dir);
  nlohmann::ordered_json j;
  j["teacher_checkpoint_id"] = state.teacher_checkpoint_id;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& [index, id] : state.completed)
    steps.push_back({{"index", index}, {"checkpoint_id", id}});
  j["completed_steps"] = steps;
  const fs::path tmp = state_path(run_dir).string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw InputError("cannot write run state");
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, state_path(run_dir));
}

std::vector<StepResult> run_continuous(const RemovalJob& job,
                                       const backend::ModelHandle& teacher,
                                       const ContinuousContext& ctx,
                                       llm::LlmGateway& gateway,
                                       const hier::Hierarchy& hierarchy) {
  job.validate();
  const std::string teacher_hash = teacher.content_hash();
  fs::create_directories(job.run_dir);

  RunState state;
  if (ctx.resume) {
    if (auto existing = read_run_state(job.run_dir)) {
      state = *existing;
      backend::ModelHandle stored =
          backend::load_checkpoint(job.run_dir, state.teacher_checkpoint_id);
      if (stored.content_hash() != teacher_hash)
        throw CorruptionError(
            "resume: configured teacher does not match the run's teacher checkpoint");
    }
  }
  if (state.teacher_checkpoint_id.empty()) {
    backend::ModelHandle teacher_copy = teacher;
    state.teacher_checkpoint_id = backend::save_checkpoint(teacher_copy, job.run_dir);
    state.completed.clear();
    write_run_state(job.run_dir, state);
  }

  backend::ModelHandle prev = teacher;
  std::vector<StepResult> results;

  for (int i = 0; i < static_cast<int>(job.steps.size()); ++i) {
    const RemovalStepConfig& step = job.steps[static_cast<std::size_t>(i)];

    if (ctx.resume) {
      auto it = std::find_if(state.completed.begin(), state.completed.end(),
                             [i](const auto& e) { return e.first == i; });
      if (it != state.completed.end()) {
        prev = backend::load_checkpoint(job.run_dir, it->second);
        StepResult done;
        done.checkpoint_id = it->second;
        const fs::path cal = calibration_path(job.run_dir, i);
        if (fs::exists(cal)) done.calibration_used = calib::read_calibration_jsonl(cal);
        results.push_back(std::move(done));
        continue;
      }
    }

    // Calibration set: a resumed run picks up the file already mined for this
    // step (written atomically, so it is either absent or complete); fresh
    // runs regenerate. reuse_calibration carries step 1's set forward.
    std::vector<calib::CalibrationPrompt> calibration;
    const fs::path cal_file = calibration_path(job.run_dir, i);
    if (ctx.resume && fs::exists(cal_file)) {
      calibration = calib::read_calibration_jsonl(cal_file);
    } else if (ctx.reuse_calibration && i > 0 &&
               fs::exists(calibration_path(job.run_dir, 0))) {
      calibration = calib::read_calibration_jsonl(calibration_path(job.run_dir, 0));
      calib::write_calibration_jsonl(cal_file, calibration);
    } else {
      calibration = generate_step_calibration(prev, teacher, step, i, ctx,
                                              gateway, hierarchy);
      calib::write_calibration_jsonl(cal_file, calibration);
    }

    StepResult result =
        run_removal_step(prev, teacher, step, calibration, job.run_dir, i);

    if (teacher.content_hash() != teacher_hash)
      throw BackendFault("teacher parameters changed during a continuous run");

    state.completed.emplace_back(i, result.checkpoint_id);
    write_run_state(job.run_dir, state);

    // Reload from disk so the next step starts from the persisted artifact.
    prev = backend::load_checkpoint(job.run_dir, result.checkpoint_id);
    results.push_back(std::move(result));
  }
  return results;
}

std::vector<calib::CalibrationPrompt> generate_step_calibration(
    const backend::ModelHandle& prev, const backend::ModelHandle& teacher,
    const RemovalStepConfig& step, int step_index, const ContinuousContext& ctx,
    llm::LlmGateway& gateway, const hier::Hierarchy& hierarchy) {
  // Step 1 bootstraps drift with a removal-only warm-up; later steps already
  // start from a drifted model.
  backend::ModelHandle md_source =
      (step_index == 0 && step.warmup_iterations > 0)
          ? run_warmup(prev, teacher, step, step.warmup_iterations)
          : prev;

  calib::GAConfig ga = ctx.ga;
  ga.seed = derive_seed(ctx.ga.seed, std::string_view("step"),
                        static_cast<std::uint64_t>(step_index));
  std::vector<calib::Individual> survivors = calib::run_ga(
      ctx.initial_entities, teacher, md_source, hierarchy, gateway, ga);
  return calib::weave_calibration_set(survivors, gateway);
}

// ============================================================================
// Gradient probe
// ============================================================================

LossProbe make_loss_probe(const backend::ModelHandle& student,
                          const backend::ModelHandle& teacher,
                          const RemovalStepConfig& cfg,
                          const std::vector<calib::CalibrationPrompt>& calibration,
                          std::uint64_t seed) {
  LossProbe probe;
  probe.lambda = cfg.lambda;
  probe.p = cfg.p;

  Rng rng(derive_seed(seed, std::string_view("loss-probe")));
  probe.concept_cond = backend::Condition::for_concept(
      cfg.concept_prompts[rng.uniform_int(cfg.concept_prompts.size())]);
  for (int b = 0; b < cfg.batch_size; ++b) {
    const int t = static_cast<int>(
        rng.uniform_int(static_cast<std::uint64_t>(teacher.model().t_max())));
    backend::LatentSample xt =
        sample_partial(student, probe.concept_cond, t, rng.next_u64());
    probe.guidance_targets.push_back(
        negative_guidance(teacher, xt, probe.concept_cond, cfg.eta).data);
    probe.concept_latents.push_back(std::move(xt));
  }

  if (!calibration.empty() && cfg.lambda > 0.0) {
    probe.calib_cond = backend::Condition::calibration(
        calibration[rng.uniform_int(calibration.size())].text);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int t = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(teacher.model().t_max())));
      backend::LatentSample xt =
          sample_partial(student, probe.calib_cond, t, rng.next_u64());
      probe.teacher_targets.push_back(
          teacher.model().predict(xt.data, &probe.calib_cond, t));
      probe.calib_latents.push_back(std::move(xt));
    }
  }
  return probe;
}

double probe_loss(const backend::TrainableModel& student, const LossProbe& probe) {
  const double inv_batch = 1.0 / static_cast<double>(probe.concept_latents.size());
  double loss_rm = 0.0;
  for (std::size_t b = 0; b < probe.concept_latents.size(); ++b) {
    const auto& xt = probe.concept_latents[b];
    const std::vector<double> pred =
        student.predict(xt.data, &probe.concept_cond, xt.timestep);
    loss_rm += lp_distance(pred, probe.guidance_targets[b], probe.p);
  }
  loss_rm *= inv_batch;

  double loss_reg = 0.0;
  if (!probe.calib_latents.empty()) {
    for (std::size_t b = 0; b < probe.calib_latents.size(); ++b) {
      const auto& xt = probe.calib_latents[b];
      const std::vector<double> pred =
          student.predict(xt.data, &probe.calib_cond, xt.timestep);
      loss_reg += mse(pred, probe.teacher_targets[b]);
    }
    loss_reg /= static_cast<double>(probe.calib_latents.size());
  }
  return total_loss(loss_rm, loss_reg, probe.lambda);
}

double probe_loss_and_grad(const backend::TrainableModel& student,
                           const LossProbe& probe, std::vector<double>& grad) {
  grad.assign(student.param_count(), 0.0);
  backend::ForwardCache cache;
  std::vector<double> dpred;

  const double inv_batch = 1.0 / static_cast<double>(probe.concept_latents.size());
  double loss_rm = 0.0;
  for (std::size_t b = 0; b < probe.concept_latents.size(); ++b) {
    const auto& xt = probe.concept_latents[b];
    const std::vector<double> pred =
        student.forward_cached(xt.data, &probe.concept_cond, xt.timestep, cache);
    loss_rm += lp_distance(pred, probe.guidance_targets[b], probe.p);
    lp_grad(pred, probe.guidance_targets[b], probe.p, inv_batch, dpred);
    student.backward(cache, dpred, grad);
  }
  loss_rm *= inv_batch;

  double loss_reg = 0.0;
  if (!probe.calib_latents.empty()) {
    const double inv_calib = 1.0 / static_cast<double>(probe.calib_latents.size());
    for (std::size_t b = 0; b < probe.calib_latents.size(); ++b) {
      const auto& xt = probe.calib_latents[b];
      const std::vector<double> pred =
          student.forward_cached(xt.data, &probe.calib_cond, xt.timestep, cache);
      loss_reg += mse(pred, probe.teacher_targets[b]);
      const double n_elem = static_cast<double>(pred.size());
      dpred.assign(pred.size(), 0.0);
      for (std::size_t i = 0; i < pred.size(); ++i)
        dpred[i] = probe.lambda * inv_calib * 2.0 *
                   (pred[i] - probe.teacher_targets[b][i]) / n_elem;
      student.backward(cache, dpred, grad);
    }
    loss_reg *= inv_calib;
  }
  return total_loss(loss_rm, loss_reg, probe.lambda);
}

}  // namespace ccrt::removal
