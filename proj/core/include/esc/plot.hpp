#pragma once

#include <string>
#include <utility>
#include <vector>

// Minimal deterministic SVG charts for reports.
namespace esc::harness {

enum class SeriesStyle { Points, Line };

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  SeriesStyle style = SeriesStyle::Points;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 420;
};

// Every series drawn in its own style on shared axes.
std::string svg_chart(const ChartSpec& spec, const std::vector<Series>& series);
// Shorthands forcing one style for all series.
std::string svg_scatter(const ChartSpec& spec, std::vector<Series> series);
std::string svg_lines(const ChartSpec& spec, std::vector<Series> series);

}  // namespace esc::harness
