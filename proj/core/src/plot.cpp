#include "esc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace esc::harness {
namespace {

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kMarginL = 64, kMarginR = 120, kMarginT = 36, kMarginB = 52;

struct Frame {
  double x0, x1, y0, y1;
  int w, h;
  [[nodiscard]] double px(double x) const { return kMarginL + (x - x0) / (x1 - x0) * (w - kMarginL - kMarginR); }
  [[nodiscard]] double py(double y) const { return h - kMarginB - (y - y0) / (y1 - y0) * (h - kMarginT - kMarginB); }
};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

Frame fit(const ChartSpec& spec, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double py = 0.05 * (y1 - y0);
  return {x0, x1, y0 - py, y1 + py, spec.width, spec.height};
}

std::string open(const ChartSpec& spec, const Frame& f, const std::vector<Series>& series) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      spec.width, spec.height);
  s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", spec.width, spec.height);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", spec.width / 2,
                   escape(spec.title));
  const double l = f.px(f.x0), r = f.px(f.x1), t = f.py(f.y1), b = f.py(f.y0);
  s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" stroke=\"#444\"/>\n", l,
                   t, r - l, b - t);
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.3g}</text>\n", f.px(xv), b + 16, xv);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", l - 6, f.py(yv) + 4, yv);
  }
  s += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (l + r) / 2, spec.height - 12,
                   escape(spec.x_label));
  s += fmt::format("<text x=\"16\" y=\"{:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2f})\">{}</text>\n",
                   (t + b) / 2, (t + b) / 2, escape(spec.y_label));
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = t + 14 + 18.0 * static_cast<double>(i);
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", r + 12, y - 9,
                     kColors[i % 6]);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", r + 26, y, escape(series[i].name));
  }
  return s;
}

}  // namespace

std::string svg_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  const Frame f = fit(spec, series);
  std::string s = open(spec, f, series);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % 6];
    if (series[i].style == SeriesStyle::Line) {
      std::string pts;
      for (const auto& [x, y] : series[i].points) pts += fmt::format("{:.2f},{:.2f} ", f.px(x), f.py(y));
      s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color);
    }
    const double r = series[i].style == SeriesStyle::Line ? 3.0 : 2.5;
    for (const auto& [x, y] : series[i].points) {
      s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{}\" fill=\"{}\" fill-opacity=\"0.7\"/>\n", f.px(x),
                       f.py(y), r, color);
    }
  }
  return s + "</svg>\n";
}

std::string svg_scatter(const ChartSpec& spec, std::vector<Series> series) {
  for (auto& s : series) s.style = SeriesStyle::Points;
  return svg_chart(spec, series);
}

std::string svg_lines(const ChartSpec& spec, std::vector<Series> series) {
  for (auto& s : series) s.style = SeriesStyle::Line;
  return svg_chart(spec, series);
}

}  // namespace esc::harness
