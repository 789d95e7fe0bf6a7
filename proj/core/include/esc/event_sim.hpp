#pragma once

#include <cstdint>
#include <vector>

#include "esc/events.hpp"
#include "esc/tensor.hpp"

namespace esc::data {

struct EventSimConfig {
  double theta_pos = 0.2;
  double theta_neg = 0.2;
  double sigma_theta = 0.05;
  double leak_rate_hz = 0.1;
  double shot_noise_rate_hz = 5.0;  // per pixel
  double refractory_s = 0.0005;
  double intensity_floor = 1e-4;

  void validate() const;
  // Thresholds only: no mismatch, leak, shot noise or refractory period.
  static EventSimConfig ideal(double theta = 0.2);
};

// Intensity frames {1, H, W} (or log intensities when `log_intensity`), with
// strictly increasing microsecond timestamps.
struct FrameSequence {
  std::vector<Tensor> frames;
  std::vector<std::int64_t> timestamps;
  bool log_intensity = false;
};

// Per pixel, log intensity is interpolated linearly between frames; an event
// fires each time it moves strictly more than one threshold away from the
// pixel's reference, which then steps by that threshold. Window is
// (timestamps.front(), timestamps.back()].
events::EventStream simulate_events(const FrameSequence& seq, const EventSimConfig& cfg, std::uint64_t seed);

// Drops events closer than `refractory_us` to the previous kept event at the same pixel.
void apply_refractory(std::vector<events::EventRecord>& sorted_events, int width, int height,
                      std::int64_t refractory_us);

// Adds Poisson(rate * duration * H * W) events, uniform in pixel and time
// with random polarity, and re-sorts.
events::EventStream inject_noise_events(const events::EventStream& stream, double rate_hz, std::uint64_t seed);

}  // namespace esc::data
