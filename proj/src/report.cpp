// SPDX-License-Identifier: Apache-2.0
#include "ccrt/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ccrt/errors.hpp"
#include "ccrt/evaluation.hpp"

namespace ccrt::report {

namespace fs = std::filesystem;

void write_line_chart_svg(const fs::path& file, const std::string& title,
                          const std::vector<Series>& series) {
  const int width = 720, height = 400;
  const int ml = 60, mr = 20, mt = 40, mb = 40;
  const int plot_w = width - ml - mr, plot_h = height - mt - mb;

  double ymin = 0.0, ymax = 1.0;
  std::size_t xmax = 1;
  bool have_data = false;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (!have_data) {
        ymin = ymax = v;
        have_data = true;
      } else {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
    xmax = std::max(xmax, s.values.size());
  }
  if (!have_data) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (ymax - ymin < 1e-12) {
    ymax += 1.0;
    ymin -= 1.0;
  }

  auto sx = [&](std::size_t i) {
    return ml + static_cast<double>(i) * plot_w /
                    static_cast<double>(std::max<std::size_t>(1, xmax - 1));
  };
  auto sy = [&](double v) { return mt + (ymax - v) / (ymax - ymin) * plot_h; };

  static const char* palette[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad",
                                  "#d35400", "#16a085"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  // Axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + plot_h << "\" stroke=\"#333\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\""
      << ml + plot_w << "\" y2=\"" << mt + plot_h << "\" stroke=\"#333\"/>\n";
  // Y ticks
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    const double y = sy(v);
    svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml
        << "\" y2=\"" << y << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    svg << buf << "</text>\n";
  }

  int color = 0;
  int legend_y = mt;
  for (const auto& s : series) {
    if (!s.values.empty()) {
      svg << "<polyline fill=\"none\" stroke=\"" << palette[color % 6]
          << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.values.size(); ++i)
        svg << sx(i) << "," << sy(s.values[i]) << " ";
      svg << "\"/>\n";
    }
    svg << "<text x=\"" << ml + plot_w - 6 << "\" y=\"" << legend_y
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
        << palette[color % 6] << "\">" << s.label << "</text>\n";
    legend_y += 16;
    ++color;
  }
  svg << "</svg>\n";

  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw InputError("cannot write chart " + file.string());
  out << svg.str();
}

std::vector<StepSummary> summarize_logs(const fs::path& run_dir) {
  std::vector<StepSummary> steps;
  const fs::path logs = run_dir / "logs";
  if (!fs::exists(logs)) return steps;

  std::map<int, fs::path> ordered;
  for (const auto& entry : fs::directory_iterator(logs)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("step_", 0) == 0 && entry.path().extension() == ".jsonl") {
      ordered[std::stoi(name.substr(5))] = entry.path();
    }
  }
  for (const auto& [step_no, path] : ordered) {
    StepSummary s;
    s.step = step_no;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;
      s.rm_trace.push_back(j.value("loss_rm", 0.0));
      s.reg_trace.push_back(j.value("loss_reg", 0.0));
      s.total_trace.push_back(j.value("loss_total", 0.0));
    }
    s.iterations = static_cast<int>(s.total_trace.size());
    if (s.iterations > 0) {
      const int head = std::min(10, s.iterations);
      double first = 0.0, last = 0.0;
      for (int i = 0; i < head; ++i) first += s.total_trace[static_cast<std::size_t>(i)];
      for (int i = s.iterations - head; i < s.iterations; ++i)
        last += s.total_trace[static_cast<std::size_t>(i)];
      s.first10_total = first / head;
      s.last10_total = last / head;
      s.final_rm = s.rm_trace.back();
      s.final_reg = s.reg_trace.back();
    }
    steps.push_back(std::move(s));
  }
  return steps;
}

std::vector<MetricSummary> summarize_reports(const fs::path& run_dir) {
  std::vector<MetricSummary> out;
  const fs::path reports = run_dir / "reports";
  if (!fs::exists(reports)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(reports)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      const eval::EvaluationReport r = eval::read_report(f);
      for (const auto& m : r.metrics)
        out.push_back({f.filename().string(), r.checkpoint_id, m.name, m.value, m.n});
    } catch (const std::exception&) {
      // Not an evaluation report; skip.
    }
  }
  return out;
}

std::string emit_report_bundle(const fs::path& run_dir) {
  const std::vector<StepSummary> steps = summarize_logs(run_dir);
  const std::vector<MetricSummary> metrics = summarize_reports(run_dir);
  if (steps.empty() && metrics.empty())
    throw NotFoundError("no logs or reports under " + run_dir.string());

  std::ostringstream table;
  table << "step  iters  first10(total)  last10(total)  final(rm)   final(reg)\n";
  for (const auto& s : steps) {
    char row[160];
    std::snprintf(row, sizeof(row), "%-5d %-6d %-15.6f %-14.6f %-11.6f %-10.6f\n",
                  s.step, s.iterations, s.first10_total, s.last10_total,
                  s.final_rm, s.final_reg);
    table << row;
  }
  if (!metrics.empty()) {
    table << "\nmetric                 value     n    checkpoint\n";
    for (const auto& m : metrics) {
      char row[200];
      std::snprintf(row, sizeof(row), "%-22s %-9.4f %-4d %s\n", m.metric.c_str(),
                    m.value, m.n, m.checkpoint.c_str());
      table << row;
    }
  }

  const fs::path reports = run_dir / "reports";
  fs::create_directories(reports);
  {
    std::ofstream out(reports / "summary.txt", std::ios::trunc);
    out << table.str();
  }

  for (const auto& s : steps) {
    if (s.iterations < 1) continue;
    write_line_chart_svg(reports / "plots" /
                             ("step_" + std::to_string(s.step) + "_loss.svg"),
                         "step " + std::to_string(s.step) + " training loss",
                         {{"total", s.total_trace},
                          {"removal", s.rm_trace},
                          {"alignment", s.reg_trace}});
  }

  if (!metrics.empty()) {
    std::map<std::string, Series> by_metric;
    for (const auto& m : metrics) {
      auto& series = by_metric[m.metric];
      series.label = m.metric;
      series.values.push_back(m.value);
    }
    std::vector<Series> all;
    for (auto& [name, series] : by_metric) all.push_back(series);
    write_line_chart_svg(reports / "plots" / "metric_trend.svg",
                         "metric trend across evaluations", all);
  }
  return table.str();
}

}  // namespace ccrt::report
