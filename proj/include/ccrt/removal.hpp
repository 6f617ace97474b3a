// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Concept removal by knowledge distillation.
//
// Per step, the trainable student minimizes
//
//   L = || eps_s(x_t, c, t) - delta_c ||_p  +  lambda * MSE(eps_s, eps_t)
//
// where delta_c = eps_t(x_t, t) - eta * (eps_t(x_t, c, t) - eps_t(x_t, t))
// is the teacher-derived negative guidance target (never carries gradient)
// and the MSE term pins the student to the teacher on calibration prompts.
// Steps chain memorylessly: step i starts from step i-1's checkpoint while
// the teacher stays the original frozen model throughout.
//

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccrt/backend.hpp"
#include "ccrt/calibration.hpp"
#include "ccrt/hierarchy.hpp"
#include "ccrt/llm_gateway.hpp"

namespace ccrt::removal {

struct RemovalStepConfig {
  std::string concept_name;
  std::vector<std::string> concept_prompts;  // templates mentioning the concept
  double lambda = 0.5;
  double eta = 1.0;
  int p = 1;
  int iterations = 200;
  double learning_rate = 0.05;
  int batch_size = 1;
  int warmup_iterations = 50;  // removal-only bootstrap before the step-1 GA
  std::uint64_t seed = 0;

  void validate() const;
};

struct RemovalJob {
  std::vector<RemovalStepConfig> steps;  // non-empty
  std::filesystem::path run_dir;

  void validate() const;
};

struct LossPoint {
  double rm = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct StepResult {
  std::string checkpoint_id;
  std::vector<LossPoint> loss_trace;  // one entry per iteration
  std::vector<calib::CalibrationPrompt> calibration_used;
  double wall_time_seconds = 0.0;
};

// ============================================================================
// Loss primitives
// ============================================================================

/// delta_c = eps_t(x,t) - eta * (eps_t(x,c,t) - eps_t(x,t)). Teacher only;
/// carries no gradient. Requires c.kind == concept.
backend::NoisePrediction negative_guidance(const backend::ModelHandle& teacher,
                                           const backend::LatentSample& x,
                                           const backend::Condition& c,
                                           double eta);

/// || eps_student(x,c,t) - delta_c ||_p
double removal_loss(const backend::ModelHandle& student,
                    const backend::ModelHandle& teacher,
                    const backend::LatentSample& x, const backend::Condition& c,
                    double eta, int p);

/// MSE between student and teacher predictions under a calibration prompt.
double alignment_loss(const backend::ModelHandle& student,
                      const backend::ModelHandle& teacher,
                      const backend::LatentSample& x,
                      const backend::Condition& e);

/// L_rm + lambda * L_reg. lambda must be >= 0.
double total_loss(double loss_rm, double loss_reg, double lambda);

// ============================================================================
// Training
// ============================================================================

/// Runs cfg.iterations SGD steps from a trainable clone of init. Each
/// iteration draws one concept sample and one calibration sample per batch
/// element (x_t sampled from the student itself by partial reverse
/// diffusion). The result checkpoint carries lineage appended with
/// (id, cfg.concept). Non-finite losses abort via TrainingFault with no new
/// checkpoint written.
StepResult run_removal_step(const backend::ModelHandle& init,
                            const backend::ModelHandle& teacher,
                            const RemovalStepConfig& cfg,
                            const std::vector<calib::CalibrationPrompt>& calibration,
                            const std::filesystem::path& run_dir,
                            int step_index);

/// Removal-only bootstrap: clones init and runs `iterations` steps of the
/// removal loss alone. Used before the step-1 GA, where student == teacher
/// would make every misalignment distance zero.
backend::ModelHandle run_warmup(const backend::ModelHandle& init,
                                const backend::ModelHandle& teacher,
                                const RemovalStepConfig& cfg, int iterations);

struct ContinuousContext {
  calib::GAConfig ga;
  std::vector<std::string> initial_entities;
  bool reuse_calibration = false;
  bool resume = false;
};

/// Full chain: for each step, (re)generate or load the calibration set, run
/// the distillation step from the previous checkpoint, and persist state for
/// --resume. The teacher is the original model at every step.
std::vector<StepResult> run_continuous(const RemovalJob& job,
                                       const backend::ModelHandle& teacher,
                                       const ContinuousContext& ctx,
                                       llm::LlmGateway& gateway,
                                       const hier::Hierarchy& hierarchy);

/// Calibration mining for one step: warm-up (step 1 only) + GA + weaving.
std::vector<calib::CalibrationPrompt> generate_step_calibration(
    const backend::ModelHandle& prev, const backend::ModelHandle& teacher,
    const RemovalStepConfig& step, int step_index, const ContinuousContext& ctx,
    llm::LlmGateway& gateway, const hier::Hierarchy& hierarchy);

// ============================================================================
// Gradient probe (finite-difference validation support)
// ============================================================================

/// A frozen minibatch of the combined objective: latents, conditions and
/// teacher-derived targets are captured once so the loss becomes a pure
/// function of the student parameters.
struct LossProbe {
  std::vector<backend::LatentSample> concept_latents;
  backend::Condition concept_cond;
  std::vector<std::vector<double>> guidance_targets;  // delta_c per sample
  std::vector<backend::LatentSample> calib_latents;
  backend::Condition calib_cond;
  std::vector<std::vector<double>> teacher_targets;
  double lambda = 0.5;
  int p = 1;
};

LossProbe make_loss_probe(const backend::ModelHandle& student,
                          const backend::ModelHandle& teacher,
                          const RemovalStepConfig& cfg,
                          const std::vector<calib::CalibrationPrompt>& calibration,
                          std::uint64_t seed);

double probe_loss(const backend::TrainableModel& student, const LossProbe& probe);

/// Loss plus analytic parameter gradient at the current student parameters.
double probe_loss_and_grad(const backend::TrainableModel& student,
                           const LossProbe& probe, std::vector<double>& grad);

// State file helpers shared with the CLI (resume support).
struct RunState {
  std::string teacher_checkpoint_id;
  std::vector<std::pair<int, std::string>> completed;  // (step index, checkpoint id)
};

std::optional<RunState> read_run_state(const std::filesystem::path& run_dir);
void write_run_state(const std::filesystem::path& run_dir, const RunState& state);

}  // namespace ccrt::removal
