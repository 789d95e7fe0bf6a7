#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/config.hpp"
#include "esc/correlation.hpp"

namespace esc::harness {

struct EdgeStats {
  std::vector<events::CorrelationSample> samples;  // random dilation per scene
  std::vector<events::CorrelationSample> levels;   // mean per dilation level
  double mean_gap = 0.0;                // mean(edge_event_ratio - edge_pixel_ratio) over samples
  double min_level_gap = 0.0;           // smallest gap among the level means
  double max_second_difference = 0.0;   // of the level curve, event ratio vs pixel ratio
  bool concave = false;                 // max_second_difference <= 0
};

// Generates `scenes` toy scenes (one window each) with simulated events and
// measures how strongly events concentrate on dilated semantic boundaries.
EdgeStats edge_statistics(const RunConfig& cfg, int scenes, int max_iters);

// Second divided differences of y(x) over consecutive points (n - 2 values).
std::vector<double> second_differences(const std::vector<std::pair<double, double>>& pts);

nlohmann::json to_json(const EdgeStats& s);
std::string edge_stats_csv(const EdgeStats& s);
std::string edge_stats_svg(const EdgeStats& s);

// Collects the JSON artefacts found in `dir` (eval, occlusion, edge stats,
// grad check, training summary) into report.json and report.md.
void write_report(const std::filesystem::path& dir);

}  // namespace esc::harness
