#include "esc/occlusion.hpp"

#include <algorithm>

#include "esc/error.hpp"

namespace esc::data {

Rect Rect::clipped(int width, int height) const {
  const int xa = std::clamp(x0, 0, width), ya = std::clamp(y0, 0, height);
  const int xb = std::clamp(x0 + std::max(w, 0), 0, width), yb = std::clamp(y0 + std::max(h, 0), 0, height);
  return Rect{xa, ya, xb - xa, yb - ya};
}

std::string to_string(OcclusionTarget t) {
  switch (t) {
    case OcclusionTarget::None: return "none";
    case OcclusionTarget::Rgb: return "rgb";
    case OcclusionTarget::Event: return "event";
    case OcclusionTarget::Both: return "both";
  }
  return "none";
}

OcclusionTarget parse_occlusion_target(const std::string& s) {
  if (s == "none") return OcclusionTarget::None;
  if (s == "rgb") return OcclusionTarget::Rgb;
  if (s == "event") return OcclusionTarget::Event;
  if (s == "both") return OcclusionTarget::Both;
  throw ConfigError("unknown occlusion target '" + s + "' (none, rgb, event, both)");
}

OcclusionSpec default_rgb_occlusion(int size) { return {Rect{350, 200, size, size}, OcclusionTarget::Rgb}; }
OcclusionSpec default_event_occlusion(int size) { return {Rect{150, 150, size, size}, OcclusionTarget::Event}; }

std::pair<Tensor, events::EventStream> apply_occlusion(const Tensor& rgb, const events::EventStream& stream,
                                                       const OcclusionSpec& spec) {
  std::pair<Tensor, events::EventStream> out{rgb, stream};
  if (spec.target == OcclusionTarget::None) return out;
  if (spec.target == OcclusionTarget::Rgb || spec.target == OcclusionTarget::Both) {
    Tensor& img = out.first;
    const Rect r = spec.rect.clipped(img.width(), img.height());
    for (int c = 0; c < img.channels(); ++c) {
      for (int y = r.y0; y < r.y0 + r.h; ++y) {
        for (int x = r.x0; x < r.x0 + r.w; ++x) img.at(c, y, x) = 0.0;
      }
    }
  }
  if (spec.target == OcclusionTarget::Event || spec.target == OcclusionTarget::Both) {
    const Rect r = spec.rect.clipped(stream.width, stream.height);
    auto& ev = out.second.events;
    ev.erase(std::remove_if(ev.begin(), ev.end(), [&](const events::EventRecord& e) { return r.contains(e.x, e.y); }),
             ev.end());
  }
  return out;
}

std::pair<Tensor, events::EventStream> apply_occlusions(const Tensor& rgb, const events::EventStream& stream,
                                                        const std::vector<OcclusionSpec>& specs) {
  std::pair<Tensor, events::EventStream> cur{rgb, stream};
  for (const auto& s : specs) cur = apply_occlusion(cur.first, cur.second, s);
  return cur;
}

std::vector<int> occlusion_sweep_sizes() { return {50, 100, 150, 200, 250}; }

std::vector<OcclusionSpec> sweep_specs(OcclusionTarget target, int size) {
  switch (target) {
    case OcclusionTarget::None: return {};
    case OcclusionTarget::Rgb: return {default_rgb_occlusion(size)};
    case OcclusionTarget::Event: return {default_event_occlusion(size)};
    case OcclusionTarget::Both: return {default_rgb_occlusion(size), default_event_occlusion(size)};
  }
  return {};
}

}  // namespace esc::data
