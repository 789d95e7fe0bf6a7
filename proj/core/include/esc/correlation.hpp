#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "esc/boundary.hpp"
#include "esc/events.hpp"

namespace esc::events {

struct CorrelationSample {
  double edge_pixel_ratio = 0.0;
  double edge_event_ratio = 0.0;
  int dilation_iters = 0;
};

struct LabeledStream {
  EventStream stream;
  SemanticMask mask;
};

// Fraction of the plane covered by the boundary and fraction of events (both
// polarities counted together) landing on it. An empty stream yields 0.
CorrelationSample edge_event_ratios(const EventStream& stream, const BoundaryMap& boundary);

// For every sample: extract the boundary, dilate it a uniformly drawn number of
// times in [0, max_iters] and record both ratios. Draws use a per-sample seed so
// the output depends only on (samples, max_iters, seed).
std::vector<CorrelationSample> correlation_experiment(std::span<const LabeledStream> samples, int max_iters,
                                                      std::uint64_t seed);

// Mean ratios over all samples at each dilation level 0..max_iters (deterministic sweep).
std::vector<CorrelationSample> correlation_sweep(std::span<const LabeledStream> samples, int max_iters);

}  // namespace esc::events
