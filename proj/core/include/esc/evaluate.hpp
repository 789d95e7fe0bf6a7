#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/dataset.hpp"
#include "esc/metrics.hpp"
#include "esc/model.hpp"
#include "esc/occlusion.hpp"

namespace esc::harness {

// Smallest multiple of `multiple` that is >= v.
int round_up(int v, int multiple);

struct ModelInput {
  Tensor image;   // {3, H, W}
  Tensor voxels;  // {bins, H, W}
};

// Voxelizes the events and upsamples both inputs (bilinear) so height and
// width are multiples of `multiple`. Inputs already aligned pass unchanged.
ModelInput prepare_input(const Tensor& rgb, const events::EventStream& stream, int bins, int multiple);

struct EvalResult {
  metrics::ConfusionMatrix confusion;
  metrics::Summary summary;
  int evaluated = 0;
  int skipped = 0;
  std::vector<std::string> skipped_ids;
};

// Occlusion specs (possibly none) are applied before voxelization. Samples
// whose RGB, event or mask resolutions disagree are skipped with a warning.
// Throws EvaluationError when nothing could be evaluated.
EvalResult evaluate(const EscModel& model, std::span<const data::Sample> samples,
                    const std::vector<data::OcclusionSpec>& occlusion = {});

nlohmann::json to_json(const EvalResult& r);

struct SweepRow {
  data::OcclusionTarget target = data::OcclusionTarget::None;
  int size = 0;
  metrics::Summary summary;
};

struct SweepTrend {
  data::OcclusionTarget target = data::OcclusionTarget::None;
  bool monotone = true;          // mIoU non-increasing in size within the tolerance
  double worst_increase = 0.0;   // largest mIoU rise between consecutive sizes (points)
};

struct OcclusionReport {
  std::vector<int> sizes;
  metrics::Summary clean;  // no occlusion
  std::vector<SweepRow> rows;  // {none, rgb, event, both} x sizes
  std::vector<SweepTrend> trends;
  double tolerance = 0.5;
  int evaluated = 0;
  int skipped = 0;

  [[nodiscard]] const SweepRow& row(data::OcclusionTarget t, int size) const;
};

// Evaluates every target at every sweep size. The "none" rows reuse the clean
// evaluation. Trends start from the clean score, so the first mask size must
// not beat the unmasked input either.
OcclusionReport occlusion_sweep(const EscModel& model, std::span<const data::Sample> samples, double tolerance = 0.5);

nlohmann::json to_json(const OcclusionReport& r);
// size,none,rgb,event,both mIoU table.
std::string degradation_csv(const OcclusionReport& r);
std::string degradation_svg(const OcclusionReport& r);

}  // namespace esc::harness
