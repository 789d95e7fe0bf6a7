#include "esc/correlation.hpp"

#include "esc/error.hpp"
#include "esc/rng.hpp"

namespace esc::events {

CorrelationSample edge_event_ratios(const EventStream& stream, const BoundaryMap& boundary) {
  if (stream.width != boundary.width || stream.height != boundary.height) {
    throw InputError("edge_event_ratios: stream and boundary resolution differ");
  }
  CorrelationSample s;
  const std::size_t plane = static_cast<std::size_t>(boundary.width) * boundary.height;
  s.edge_pixel_ratio = plane ? static_cast<double>(boundary.count()) / static_cast<double>(plane) : 0.0;
  if (!stream.events.empty()) {
    std::size_t on_edge = 0;
    for (const auto& e : stream.events) on_edge += boundary.at(e.y, e.x);
    s.edge_event_ratio = static_cast<double>(on_edge) / static_cast<double>(stream.events.size());
  }
  return s;
}

std::vector<CorrelationSample> correlation_experiment(std::span<const LabeledStream> samples, int max_iters,
                                                      std::uint64_t seed) {
  if (samples.empty()) throw InputError("correlation_experiment: no samples");
  if (max_iters < 0) throw ConfigError("correlation_experiment: max_iters must be >= 0");
  std::vector<CorrelationSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng = make_rng(seed, i);
    const int iters = uniform_int(rng, 0, max_iters);
    const BoundaryMap b = dilate_boundary(extract_boundary(samples[i].mask), iters);
    CorrelationSample s = edge_event_ratios(samples[i].stream, b);
    s.dilation_iters = iters;
    out.push_back(s);
  }
  return out;
}

std::vector<CorrelationSample> correlation_sweep(std::span<const LabeledStream> samples, int max_iters) {
  if (samples.empty()) throw InputError("correlation_sweep: no samples");
  std::vector<CorrelationSample> levels(static_cast<std::size_t>(max_iters) + 1);
  for (int d = 0; d <= max_iters; ++d) levels[static_cast<std::size_t>(d)].dilation_iters = d;
  for (const auto& s : samples) {
    BoundaryMap b = extract_boundary(s.mask);
    for (int d = 0; d <= max_iters; ++d) {
      if (d > 0) b = dilate_boundary(b, 1);
      const auto r = edge_event_ratios(s.stream, b);
      levels[static_cast<std::size_t>(d)].edge_pixel_ratio += r.edge_pixel_ratio;
      levels[static_cast<std::size_t>(d)].edge_event_ratio += r.edge_event_ratio;
    }
  }
  for (auto& l : levels) {
    l.edge_pixel_ratio /= static_cast<double>(samples.size());
    l.edge_event_ratio /= static_cast<double>(samples.size());
  }
  return levels;
}

}  // namespace esc::events
