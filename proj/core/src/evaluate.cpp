#include "esc/evaluate.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "esc/error.hpp"
#include "esc/plot.hpp"

namespace esc::harness {

int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

ModelInput prepare_input(const Tensor& rgb, const events::EventStream& stream, int bins, int multiple) {
  ModelInput in{rgb, events::build_voxel_grid(stream, bins).data};
  const int h = round_up(rgb.height(), multiple), w = round_up(rgb.width(), multiple);
  if (h != rgb.height() || w != rgb.width()) {
    in.image = ag::resize_bilinear(in.image, h, w);
    in.voxels = ag::resize_bilinear(in.voxels, h, w);
  }
  return in;
}

EvalResult evaluate(const EscModel& model, std::span<const data::Sample> samples,
                    const std::vector<data::OcclusionSpec>& occlusion) {
  const auto& cfg = model.config();
  EvalResult r{metrics::ConfusionMatrix(cfg.classes), {}, 0, 0, {}};
  for (const auto& s : samples) {
    const int h = s.mask.height, w = s.mask.width;
    if (s.rgb.rank() != 3 || s.rgb.height() != h || s.rgb.width() != w || s.events.height != h ||
        s.events.width != w) {
      spdlog::warn("skipping sample {}: rgb {}, events {}x{}, mask {}x{}", s.id, shape_string(s.rgb.shape()),
                   s.events.width, s.events.height, w, h);
      ++r.skipped;
      r.skipped_ids.push_back(s.id);
      continue;
    }
    const auto [rgb, stream] = occlusion.empty() ? std::pair{s.rgb, s.events}
                                                 : data::apply_occlusions(s.rgb, s.events, occlusion);
    const ModelInput in = prepare_input(rgb, stream, cfg.encoder.voxel_bins, cfg.encoder.input_multiple);
    const auto pred = model.predict(in.image, in.voxels, h, w);
    r.confusion.accumulate(pred, s.mask);
    ++r.evaluated;
  }
  if (r.evaluated == 0) throw EvaluationError("evaluate: no sample could be evaluated");
  r.summary = metrics::summarize(r.confusion);
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j = metrics::to_json(r.summary);
  j["evaluated"] = r.evaluated;
  j["skipped"] = r.skipped;
  j["skipped_ids"] = r.skipped_ids;
  return j;
}

const SweepRow& OcclusionReport::row(data::OcclusionTarget t, int size) const {
  for (const auto& r : rows) {
    if (r.target == t && r.size == size) return r;
  }
  throw InputError("occlusion report has no row " + data::to_string(t) + "/" + std::to_string(size));
}

namespace {
constexpr data::OcclusionTarget kTargets[] = {data::OcclusionTarget::None, data::OcclusionTarget::Rgb,
                                              data::OcclusionTarget::Event, data::OcclusionTarget::Both};
}

OcclusionReport occlusion_sweep(const EscModel& model, std::span<const data::Sample> samples, double tolerance) {
  OcclusionReport rep;
  rep.sizes = data::occlusion_sweep_sizes();
  rep.tolerance = tolerance;
  const EvalResult clean = evaluate(model, samples);
  rep.clean = clean.summary;
  rep.evaluated = clean.evaluated;
  rep.skipped = clean.skipped;
  for (auto target : kTargets) {
    SweepTrend trend{target, true, 0.0};
    double prev = rep.clean.miou;
    for (int size : rep.sizes) {
      const metrics::Summary s =
          target == data::OcclusionTarget::None ? clean.summary : evaluate(model, samples, data::sweep_specs(target, size)).summary;
      rep.rows.push_back({target, size, s});
      trend.worst_increase = std::max(trend.worst_increase, s.miou - prev);
      if (s.miou > prev + tolerance) trend.monotone = false;
      prev = s.miou;
      spdlog::info("occlusion {:>5} {:>3}: mIoU {:.2f}", data::to_string(target), size, s.miou);
    }
    rep.trends.push_back(trend);
  }
  return rep;
}

nlohmann::json to_json(const OcclusionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"target", data::to_string(row.target)},
                    {"size", row.size},
                    {"miou", row.summary.miou},
                    {"gacc", row.summary.gacc},
                    {"macc", row.summary.macc}});
  }
  nlohmann::json trends = nlohmann::json::object();
  for (const auto& t : r.trends) {
    trends[data::to_string(t.target)] = {{"monotone", t.monotone}, {"worst_increase", t.worst_increase}};
  }
  return {{"sizes", r.sizes},         {"clean", metrics::to_json(r.clean)}, {"rows", rows},
          {"trends", trends},         {"tolerance", r.tolerance},           {"evaluated", r.evaluated},
          {"skipped", r.skipped}};
}

std::string degradation_csv(const OcclusionReport& r) {
  std::string out = "size";
  for (auto t : kTargets) out += "," + data::to_string(t);
  out += "\n";
  for (int size : r.sizes) {
    out += std::to_string(size);
    for (auto t : kTargets) out += fmt::format(",{:.4f}", r.row(t, size).summary.miou);
    out += "\n";
  }
  return out;
}

std::string degradation_svg(const OcclusionReport& r) {
  std::vector<Series> series;
  for (auto t : kTargets) {
    Series s{data::to_string(t), {}};
    for (int size : r.sizes) s.points.emplace_back(size, r.row(t, size).summary.miou);
    series.push_back(std::move(s));
  }
  return svg_lines({"mIoU under spatial occlusion", "mask side (px)", "mIoU (%)"}, series);
}

}  // namespace esc::harness
