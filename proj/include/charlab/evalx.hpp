#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlab/train.hpp"

namespace charlab {

inline constexpr double kDefaultEmergenceThreshold = 0.005;

struct CurvePoint {
  int step = 0;
  double accuracy = 0.0;
};

// First step whose accuracy exceeds the threshold.
std::optional<int> emergence_step(std::span<const CurvePoint> curve, double threshold = kDefaultEmergenceThreshold);

struct EmergencePoint {
  int vocab_size = 0;
  double k = 0.0;
  std::optional<double> step;  // none: never emerged
};

struct CollapseStats {
  double exponent = 0.5;
  double raw_cv = 0.0;
  double scaled_cv = 0.0;
  double best_exponent = 0.0;
  double best_cv = 0.0;
  size_t n_points = 0;
  std::vector<std::pair<double, double>> grid;  // (exponent, scaled cv)
};

// Population coefficient of variation (std / mean); 0 for constant input.
double coefficient_of_variation(std::span<const double> xs);

// Points without emergence are dropped; at least two must remain.
CollapseStats collapse(std::span<const EmergencePoint> points, double exponent = 0.5);

struct Monotonicity {
  double spearman = 0.0;
  bool non_decreasing = false;
};

// Spearman correlation between vocabulary size and emergence step, with
// average ranks for ties and never-emerged runs ranked last.
Monotonicity monotonicity(std::span<const EmergencePoint> points);

// Everything the analysis needs from one run directory.
struct RunData {
  std::string run_id;
  int vocab_size = 0;
  double k = 0.0;
  bool char_enabled = true;
  std::string insertion;
  std::vector<MetricsRecord> metrics;
};

RunData load_run(const std::filesystem::path& dir);

struct AnalysisOptions {
  double threshold = kDefaultEmergenceThreshold;
  double exponent = 0.5;
};

// Emergence entries for every run and task (plus the level means), curves of
// the level means, collapse statistics per architecture and the vocabulary
// monotonicity verdict per (architecture, K).
nlohmann::ordered_json analyze(std::span<const RunData> runs, const AnalysisOptions& options = {});

// One row per entry: run_id, vocab_size, K, task, emergence_step, scaled_step.
std::string report_csv(const nlohmann::ordered_json& report);

}  // namespace charlab
