#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace charlab {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string caption;  // optional line under the plot
  bool log_x = false;
  bool markers = false;
};

// Self-contained SVG line chart: one polyline per series plus a legend.
std::string svg_chart(const ChartSpec& spec, const std::vector<Series>& series);

// Writes accuracy.svg/.csv, emergence.svg/.csv and collapse.svg/.csv for an
// analysis report. Returns the written paths.
std::vector<std::filesystem::path> write_plots(const nlohmann::ordered_json& report, const std::filesystem::path& dir);

}  // namespace charlab
