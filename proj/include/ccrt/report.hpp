// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Run reporting: per-step loss summaries recomputed from the JSONL training
// logs, metric values from stored evaluation reports, and SVG charts.
//

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ccrt::report {

struct Series {
  std::string label;
  std::vector<double> values;
};

/// Minimal dependency-free line chart (values vs index).
void write_line_chart_svg(const std::filesystem::path& file,
                          const std::string& title,
                          const std::vector<Series>& series);

struct StepSummary {
  int step = 0;
  int iterations = 0;
  double first10_total = 0.0;
  double last10_total = 0.0;
  double final_rm = 0.0;
  double final_reg = 0.0;
  std::vector<double> rm_trace;
  std::vector<double> reg_trace;
  std::vector<double> total_trace;
};

/// Parses <run>/logs/step_N.jsonl files.
std::vector<StepSummary> summarize_logs(const std::filesystem::path& run_dir);

struct MetricSummary {
  std::string report_file;
  std::string checkpoint;
  std::string metric;
  double value = 0.0;
  int n = 0;
};

std::vector<MetricSummary> summarize_reports(const std::filesystem::path& run_dir);

/// Emits summary.txt, per-step loss SVGs and (when evaluations exist) a
/// metric trend SVG under <run>/reports. Returns the summary text.
std::string emit_report_bundle(const std::filesystem::path& run_dir);

}  // namespace ccrt::report
