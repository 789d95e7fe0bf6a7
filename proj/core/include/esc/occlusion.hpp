#pragma once

#include <string>
#include <utility>
#include <vector>

#include "esc/events.hpp"
#include "esc/tensor.hpp"

namespace esc::data {

struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  // Intersection with [0, width) x [0, height).
  [[nodiscard]] Rect clipped(int width, int height) const;
  [[nodiscard]] long area() const { return static_cast<long>(w) * h; }
  [[nodiscard]] bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

enum class OcclusionTarget { None, Rgb, Event, Both };

std::string to_string(OcclusionTarget t);
OcclusionTarget parse_occlusion_target(const std::string& s);

struct OcclusionSpec {
  Rect rect;
  OcclusionTarget target = OcclusionTarget::None;
};

inline constexpr int kDefaultOcclusionSize = 100;
OcclusionSpec default_rgb_occlusion(int size = kDefaultOcclusionSize);    // at (350, 200)
OcclusionSpec default_event_occlusion(int size = kDefaultOcclusionSize);  // at (150, 150)

// Zeroes RGB pixels and drops events inside the (frame-clipped) rectangle.
std::pair<Tensor, events::EventStream> apply_occlusion(const Tensor& rgb, const events::EventStream& stream,
                                                       const OcclusionSpec& spec);
// Applies every spec in order.
std::pair<Tensor, events::EventStream> apply_occlusions(const Tensor& rgb, const events::EventStream& stream,
                                                        const std::vector<OcclusionSpec>& specs);

// Mask sizes of the sweep: 50, 100, ..., 250.
std::vector<int> occlusion_sweep_sizes();

// Specs for one sweep cell. "both" masks RGB at the RGB default position and
// events at the event default position.
std::vector<OcclusionSpec> sweep_specs(OcclusionTarget target, int size);

}  // namespace esc::data
