// SPDX-License-Identifier: Apache-2.0
//
// ccrt — continuous concept removal toolkit.
//
//   ccrt calibrate --config run.json [--seed N] [--out DIR]
//   ccrt remove    --config run.json [--seed N] [--out DIR] [--resume]
//   ccrt eval      --config run.json --checkpoint ID --prompts FILE
//                  --metrics rr-cls,rr-llm,align:mock
//   ccrt report    [--config run.json | --out DIR]
//

#include <CLI11.hpp>

#include "ccrt/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"continuous concept removal toolkit"};
  app.require_subcommand(1);

  ccrt::cli::CliOptions options;
  std::string config_str, out_str, prompts_str;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* cmd, bool config_required,
                        const char* config_names = "--config") {
    auto* c = cmd->add_option(config_names, config_str, "run configuration file");
    if (config_required) c->required();
    cmd->add_option("--seed", seed_value, "override global_seed")
        ->each([&](const std::string&) { options.seed = seed_value; });
    cmd->add_option("--out", out_str, "override output directory");
  };

  CLI::App* calibrate = app.add_subcommand("calibrate", "mine the calibration prompt set");
  add_common(calibrate, true);

  CLI::App* remove = app.add_subcommand("remove", "run the continuous removal chain");
  add_common(remove, true, "--config,--job");  // job file == run config
  remove->add_flag("--resume", options.resume, "continue from the last completed step");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", options.checkpoint, "checkpoint id")->required();
  eval_cmd->add_option("--prompts", prompts_str, "newline-delimited prompt file");
  eval_cmd->add_option("--metrics", options.metrics_list,
                       "comma list: rr-cls, rr-llm, align:<scorer>")
      ->default_val("align:mock");

  CLI::App* report = app.add_subcommand("report", "summarize a run directory");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;  // usage errors are config errors
  }

  options.config_path = config_str;
  if (!out_str.empty()) options.out = out_str;
  options.prompts = prompts_str;

  if (calibrate->parsed()) return ccrt::cli::cmd_calibrate(options);
  if (remove->parsed()) return ccrt::cli::cmd_remove(options);
  if (eval_cmd->parsed()) return ccrt::cli::cmd_eval(options);
  if (report->parsed()) return ccrt::cli::cmd_report(options);
  return 2;
}
