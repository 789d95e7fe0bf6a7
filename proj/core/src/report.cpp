#include "esc/report.hpp"

#include <algorithm>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "esc/container.hpp"
#include "esc/dataset.hpp"
#include "esc/error.hpp"
#include "esc/plot.hpp"

namespace esc::harness {
namespace fs = std::filesystem;

std::vector<double> second_differences(const std::vector<std::pair<double, double>>& pts) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const auto [x0, y0] = pts[i - 1];
    const auto [x1, y1] = pts[i];
    const auto [x2, y2] = pts[i + 1];
    if (x2 - x0 <= 0 || x1 - x0 <= 0 || x2 - x1 <= 0) throw InputError("second_differences: x must increase");
    out.push_back(2.0 * ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0));
  }
  return out;
}

EdgeStats edge_statistics(const RunConfig& cfg, int scenes, int max_iters) {
  if (scenes < 1) throw ConfigError("edge statistics need at least one scene");
  if (max_iters < 2) throw ConfigError("edge statistics need max_iters >= 2");
  data::DatasetConfig dc = cfg.dataset_config("stats");
  dc.samples_per_sequence = 1;
  std::vector<events::LabeledStream> streams;
  streams.reserve(static_cast<std::size_t>(scenes));
  for (int i = 0; i < scenes; ++i) {
    auto s = data::generate_sequence(dc, i);
    streams.push_back({std::move(s.front().events), std::move(s.front().mask)});
  }
  EdgeStats st;
  st.samples = events::correlation_experiment(streams, max_iters, derive_seed(cfg.seed, 0xed6e));
  st.levels = events::correlation_sweep(streams, max_iters);
  for (const auto& s : st.samples) st.mean_gap += s.edge_event_ratio - s.edge_pixel_ratio;
  st.mean_gap /= static_cast<double>(st.samples.size());
  st.min_level_gap = st.levels.front().edge_event_ratio - st.levels.front().edge_pixel_ratio;
  std::vector<std::pair<double, double>> curve;
  for (const auto& l : st.levels) {
    st.min_level_gap = std::min(st.min_level_gap, l.edge_event_ratio - l.edge_pixel_ratio);
    curve.emplace_back(l.edge_pixel_ratio, l.edge_event_ratio);
  }
  const auto d2 = second_differences(curve);
  st.max_second_difference = *std::max_element(d2.begin(), d2.end());
  st.concave = st.max_second_difference <= 0.0;
  return st;
}

nlohmann::json to_json(const EdgeStats& s) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : s.levels) {
    levels.push_back({{"dilation", l.dilation_iters},
                      {"edge_pixel_ratio", l.edge_pixel_ratio},
                      {"edge_event_ratio", l.edge_event_ratio}});
  }
  return {{"scenes", s.samples.size()},
          {"mean_gap", s.mean_gap},
          {"min_level_gap", s.min_level_gap},
          {"max_second_difference", s.max_second_difference},
          {"concave", s.concave},
          {"levels", levels}};
}

std::string edge_stats_csv(const EdgeStats& s) {
  std::string out = "scene,dilation_iters,edge_pixel_ratio,edge_event_ratio\n";
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    const auto& c = s.samples[i];
    out += fmt::format("{},{},{:.9f},{:.9f}\n", i, c.dilation_iters, c.edge_pixel_ratio, c.edge_event_ratio);
  }
  return out;
}

std::string edge_stats_svg(const EdgeStats& s) {
  Series scenes{"scenes", {}, SeriesStyle::Points};
  Series mean{"level mean", {}, SeriesStyle::Line};
  Series diag{"y = x", {}, SeriesStyle::Line};
  double hi = 0.0;
  for (const auto& c : s.samples) {
    scenes.points.emplace_back(c.edge_pixel_ratio, c.edge_event_ratio);
    hi = std::max({hi, c.edge_pixel_ratio, c.edge_event_ratio});
  }
  for (const auto& l : s.levels) mean.points.emplace_back(l.edge_pixel_ratio, l.edge_event_ratio);
  diag.points = {{0.0, 0.0}, {hi, hi}};
  return svg_chart({"Events concentrate on semantic edges", "edge pixel ratio", "edge event ratio"},
                   {scenes, mean, diag});
}

namespace {

std::optional<nlohmann::json> read_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(io::read_file(p));
  } catch (const nlohmann::json::exception& e) {
    spdlog::warn("report: ignoring unreadable {}: {}", p.string(), e.what());
    return std::nullopt;
  }
}

}  // namespace

void write_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("report: no such directory " + dir.string());
  nlohmann::json rep = nlohmann::json::object();
  std::string md = "# Run report\n\n";
  int found = 0;

  if (auto j = read_json(dir / "train_summary.json")) {
    ++found;
    rep["train"] = *j;
    md += "## Training\n\n";
    md += fmt::format("- steps: {}\n- best validation mIoU: {:.2f} at step {}\n- step-0 validation mIoU: {:.2f}\n\n",
                      j->value("steps", 0), j->value("best_miou", 0.0), j->value("best_step", 0),
                      j->value("step0_miou", 0.0));
  }
  if (auto j = read_json(dir / "eval.json")) {
    ++found;
    rep["eval"] = *j;
    md += "## Evaluation\n\n| gACC | mACC | mIoU | evaluated | skipped |\n|---|---|---|---|---|\n";
    md += fmt::format("| {:.2f} | {:.2f} | {:.2f} | {} | {} |\n\n", j->value("gacc", 0.0), j->value("macc", 0.0),
                      j->value("miou", 0.0), j->value("evaluated", 0), j->value("skipped", 0));
  }
  if (auto j = read_json(dir / "occlusion.json")) {
    ++found;
    rep["occlusion"] = *j;
    md += "## Occlusion sweep (mIoU)\n\n| size | none | rgb | event | both |\n|---|---|---|---|---|\n";
    for (int size : j->at("sizes")) {
      md += fmt::format("| {}", size);
      for (const char* t : {"none", "rgb", "event", "both"}) {
        for (const auto& r : j->at("rows")) {
          if (r.at("target") == t && r.at("size") == size) md += fmt::format(" | {:.2f}", r.at("miou").get<double>());
        }
      }
      md += " |\n";
    }
    md += "\n";
    for (const auto& [t, v] : j->at("trends").items()) {
      md += fmt::format("- {}: {} (largest rise {:.2f} pt, band {:.1f})\n", t,
                        v.at("monotone").get<bool>() ? "monotone" : "not monotone", v.at("worst_increase").get<double>(),
                        j->value("tolerance", 0.5));
    }
    md += "\n";
  }
  if (auto j = read_json(dir / "edge_stats.json")) {
    ++found;
    rep["edge_stats"] = *j;
    md += "## Edge / event correlation\n\n";
    md += fmt::format("- scenes: {}\n- mean(event ratio - pixel ratio): {:.4f}\n- concave: {}\n\n",
                      j->value("scenes", 0), j->value("mean_gap", 0.0), j->value("concave", false) ? "yes" : "no");
  }
  if (auto j = read_json(dir / "gradcheck.json")) {
    ++found;
    rep["grad_check"] = *j;
    md += "## Gradient check\n\n| component | max rel. error |\n|---|---|\n";
    for (const auto& [k, v] : j->at("max_rel_error").items()) md += fmt::format("| {} | {:.3e} |\n", k, v.get<double>());
    md += fmt::format("\npassed: {}\n\n", j->value("passed", false) ? "yes" : "no");
  }
  if (found == 0) throw InputError("report: no artefacts found in " + dir.string());
  io::write_file(dir / "report.json", rep.dump(2) + "\n");
  io::write_file(dir / "report.md", md);
}

}  // namespace esc::harness
