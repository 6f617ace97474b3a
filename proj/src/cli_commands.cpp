// SPDX-License-Identifier: Apache-2.0
#include "ccrt/cli.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "ccrt/backend.hpp"
#include "ccrt/calibration.hpp"
#include "ccrt/config.hpp"
#include "ccrt/digest.hpp"
#include "ccrt/errors.hpp"
#include "ccrt/evaluation.hpp"
#include "ccrt/hierarchy.hpp"
#include "ccrt/llm_gateway.hpp"
#include "ccrt/removal.hpp"
#include "ccrt/report.hpp"

namespace ccrt::cli {

namespace fs = std::filesystem;

namespace {

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "ccrt: configuration error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "ccrt: format error: %s\n", e.what());
    return 2;
  } catch (const NotFoundError& e) {
    std::fprintf(stderr, "ccrt: not found: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ccrt: error: %s\n", e.what());
    return 1;
  }
}

config::RunConfig load_config_with_overrides(const CliOptions& options) {
  std::ifstream in(options.config_path);
  if (!in)
    throw ConfigError("cannot open config file " + options.config_path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(options.config_path.string() + ":" + std::to_string(line) +
                      ": invalid JSON: " + e.what());
  }
  // Flags override config keys before validation so derived seeds follow.
  if (options.seed) root["global_seed"] = *options.seed;
  if (options.out) root["output_dir"] = options.out->string();

  config::RunConfig cfg = config::parse_run_config(root);
  cfg.config_digest = sha256_hex(text);
  return cfg;
}

struct Pipeline {
  config::RunConfig cfg;
  backend::ModelHandle teacher;
  hier::Hierarchy hierarchy;
  std::unique_ptr<llm::LlmGateway> gateway;
};

Pipeline open_pipeline(const CliOptions& options, bool need_steps,
                       bool need_hierarchy) {
  Pipeline p;
  p.cfg = load_config_with_overrides(options);
  if (need_steps) {
    if (p.cfg.steps.empty())
      throw ConfigError("config key 'removal.steps' must list at least one step");
    if (p.cfg.initial_entities.empty())
      throw ConfigError("config key 'initial_entities' must be non-empty");
  }
  if (need_hierarchy) {
    if (p.cfg.hierarchy_path.empty())
      throw ConfigError("config key 'hierarchy.path' is required");
    p.hierarchy = hier::load_hierarchy(p.cfg.hierarchy_path);
  }
  p.teacher = backend::make_backend(p.cfg.backend_params);
  p.gateway = llm::make_gateway(p.cfg.gateway);
  return p;
}

removal::ContinuousContext make_context(const config::RunConfig& cfg, bool resume) {
  removal::ContinuousContext ctx;
  ctx.ga = cfg.ga;
  ctx.initial_entities = cfg.initial_entities;
  ctx.reuse_calibration = cfg.reuse_calibration;
  ctx.resume = resume;
  return ctx;
}

}  // namespace

int cmd_calibrate(const CliOptions& options) {
  return run_guarded([&]() {
    Pipeline p = open_pipeline(options, /*need_steps=*/true, /*need_hierarchy=*/true);
    const removal::ContinuousContext ctx = make_context(p.cfg, false);

    const auto prompts = removal::generate_step_calibration(
        p.teacher, p.teacher, p.cfg.steps[0], 0, ctx, *p.gateway, p.hierarchy);

    const fs::path file = p.cfg.output_dir / "calibration" / "step_1.jsonl";
    calib::write_calibration_jsonl(file, prompts);
    std::printf("wrote %zu calibration prompts to %s\n", prompts.size(),
                file.string().c_str());
    return 0;
  });
}

int cmd_remove(const CliOptions& options) {
  return run_guarded([&]() {
    Pipeline p = open_pipeline(options, /*need_steps=*/true, /*need_hierarchy=*/true);

    config::RunManifest manifest;
    manifest.config_digest = p.cfg.config_digest;
    manifest.tool_version = config::tool_version();
    manifest.started_at = config::iso8601_timestamp();

    removal::RemovalJob job;
    job.steps = p.cfg.steps;
    job.run_dir = p.cfg.output_dir;

    const removal::ContinuousContext ctx = make_context(p.cfg, options.resume);
    const std::vector<removal::StepResult> results =
        removal::run_continuous(job, p.teacher, ctx, *p.gateway, p.hierarchy);

    std::printf("step  concept             iters  final(total)  checkpoint\n");
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      const double final_total =
          r.loss_trace.empty() ? 0.0 : r.loss_trace.back().total;
      std::printf("%-5zu %-19s %-6zu %-13.6f %s%s\n", i + 1,
                  job.steps[i].concept_name.c_str(), r.loss_trace.size(), final_total,
                  r.checkpoint_id.c_str(), r.loss_trace.empty() ? " (resumed)" : "");
      manifest.artifacts.push_back("checkpoints/" + r.checkpoint_id);
    }
    manifest.finished_at = config::iso8601_timestamp();
    config::write_run_manifest(job.run_dir, manifest);
    return 0;
  });
}

int cmd_eval(const CliOptions& options) {
  return run_guarded([&]() {
    Pipeline p = open_pipeline(options, /*need_steps=*/false, /*need_hierarchy=*/false);
    if (options.checkpoint.empty())
      throw ConfigError("eval requires --checkpoint <id>");

    fs::path prompts_file = options.prompts;
    if (prompts_file.empty() && p.cfg.metrics_prompts)
      prompts_file = *p.cfg.metrics_prompts;
    if (prompts_file.empty())
      throw ConfigError("eval requires --prompts <file> (or metrics.prompts)");

    eval::MetricConfig mc = p.cfg.metrics;
    mc.rr_cls = false;
    mc.rr_llm = false;
    mc.align_scorers.clear();
    std::stringstream list(options.metrics_list);
    std::string token;
    while (std::getline(list, token, ',')) {
      if (token.empty()) continue;
      if (token == "rr-cls") {
        if (p.cfg.metrics.classifier_artifact.empty())
          throw ConfigError("rr-cls requires config key 'metrics.classifier_artifact'");
        mc.rr_cls = true;
      } else if (token == "rr-llm") {
        if (p.cfg.metrics.references.empty())
          throw ConfigError("rr-llm requires config key 'metrics.references'");
        if (p.cfg.metrics.concept_name.empty())
          throw ConfigError("rr-llm requires config key 'metrics.concept'");
        mc.rr_llm = true;
      } else if (token.rfind("align:", 0) == 0) {
        mc.align_scorers.push_back(token.substr(6));
      } else {
        throw ConfigError("unknown metric '" + token + "'");
      }
    }

    const eval::PromptSet prompt_set = eval::load_prompt_set(prompts_file);
    const eval::EvaluationReport report = eval::evaluate_checkpoint(
        p.cfg.output_dir, options.checkpoint, prompt_set, mc, p.gateway.get());

    const fs::path out = p.cfg.output_dir / "reports" /
                         ("eval_" + options.checkpoint + "_" + prompt_set.id + ".json");
    eval::write_report(out, report);
    for (const auto& m : report.metrics)
      std::printf("%-20s %.4f  (n=%d)\n", m.name.c_str(), m.value, m.n);
    if (!report.complete) std::printf("note: report flagged incomplete\n");
    std::printf("report written to %s\n", out.string().c_str());
    return 0;
  });
}

int cmd_report(const CliOptions& options) {
  return run_guarded([&]() {
    fs::path run_dir;
    if (options.out) {
      run_dir = *options.out;
    } else if (!options.config_path.empty()) {
      run_dir = load_config_with_overrides(options).output_dir;
    } else {
      throw ConfigError("report requires --out <run dir> or --config");
    }
    if (!fs::exists(run_dir))
      throw NotFoundError("run directory does not exist: " + run_dir.string());
    const std::string table = report::emit_report_bundle(run_dir);
    std::fputs(table.c_str(), stdout);
    std::printf("\nbundle written under %s\n", (run_dir / "reports").string().c_str());
    return 0;
  });
}

}  // namespace ccrt::cli
