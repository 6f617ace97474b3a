// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace ccrt::cli {

struct CliOptions {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;            // overrides global_seed
  std::optional<std::filesystem::path> out;     // overrides output_dir
  bool resume = false;
  std::string checkpoint;                       // eval target
  std::filesystem::path prompts;                // eval prompt set
  std::string metrics_list;                     // e.g. "rr-cls,align:mock"
};

// Exit-code contract: 0 success, 1 runtime fault, 2 configuration/validation
// error.
int cmd_calibrate(const CliOptions& options);
int cmd_remove(const CliOptions& options);
int cmd_eval(const CliOptions& options);
int cmd_report(const CliOptions& options);

}  // namespace ccrt::cli
