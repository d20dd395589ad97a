#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace forgetlab {

// One run's curves, pulled out of its summary.json.
struct RunSeries {
  std::string label;
  std::vector<int> after_task;
  std::vector<double> nl_omega;
  std::vector<double> nl_delta;
  std::vector<double> vl_mean;  // mean accuracy over the row's VL sets, 0 when none
};

RunSeries series_from_summary(const nlohmann::json& summary, const std::string& label);

std::string render_delta_svg(const std::vector<RunSeries>& runs);  // NL delta vs task
std::string render_vl_svg(const std::vector<RunSeries>& runs);     // VL accuracy vs task
std::string render_bars_svg(const std::vector<RunSeries>& runs);   // final NL delta per run
std::string render_plot_csv(const std::vector<RunSeries>& runs);

// forgetting.svg, vl_accuracy.svg, methods.svg and plot_data.csv under out_dir.
void write_plots(const std::vector<RunSeries>& runs, const std::filesystem::path& out_dir);

}  // namespace forgetlab
