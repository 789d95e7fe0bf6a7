#include "esc/event_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "esc/error.hpp"
#include "esc/rng.hpp"

namespace esc::data {

void EventSimConfig::validate() const {
  if (!(theta_pos > 0.0) || !(theta_neg > 0.0)) throw ConfigError("event thresholds must be > 0");
  if (sigma_theta < 0.0 || leak_rate_hz < 0.0 || shot_noise_rate_hz < 0.0 || refractory_s < 0.0) {
    throw ConfigError("event simulator rates, spreads and refractory period must be >= 0");
  }
  if (!(intensity_floor > 0.0)) throw ConfigError("intensity floor must be > 0");
}

EventSimConfig EventSimConfig::ideal(double theta) {
  EventSimConfig c;
  c.theta_pos = c.theta_neg = theta;
  c.sigma_theta = 0.0;
  c.leak_rate_hz = 0.0;
  c.shot_noise_rate_hz = 0.0;
  c.refractory_s = 0.0;
  return c;
}

namespace {

constexpr double kMicro = 1e-6;

std::vector<double> log_plane(const Tensor& frame, bool is_log, double floor) {
  std::vector<double> out(frame.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = is_log ? frame[i] : std::log(std::max(frame[i], floor));
  return out;
}

std::vector<double> draw_thresholds(std::size_t n, double mean, double sigma, Rng& rng) {
  std::vector<double> t(n, mean);
  if (sigma > 0.0) {
    for (auto& v : t) v = std::max(normal(rng, mean, sigma), 0.01 * mean);
  }
  return t;
}

std::int64_t crossing_time(std::int64_t t0, std::int64_t t1, double a, double b, double level) {
  const double frac = (level - a) / (b - a);
  const auto t = static_cast<std::int64_t>(std::llround(static_cast<double>(t0) + frac * static_cast<double>(t1 - t0)));
  return std::clamp<std::int64_t>(t, t0 + 1, t1);
}

}  // namespace

void apply_refractory(std::vector<events::EventRecord>& ev, int width, int height, std::int64_t refractory_us) {
  if (refractory_us <= 0) return;
  std::vector<std::int64_t> last(static_cast<std::size_t>(width) * height, std::numeric_limits<std::int64_t>::min());
  std::size_t keep = 0;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    auto& l = last[static_cast<std::size_t>(ev[i].y) * width + ev[i].x];
    if (l != std::numeric_limits<std::int64_t>::min() && ev[i].t - l < refractory_us) continue;
    l = ev[i].t;
    ev[keep++] = ev[i];
  }
  ev.resize(keep);
}

events::EventStream simulate_events(const FrameSequence& seq, const EventSimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (seq.frames.size() < 2) throw InputError("simulate_events needs at least 2 frames");
  if (seq.timestamps.size() != seq.frames.size()) throw InputError("simulate_events: one timestamp per frame required");
  for (std::size_t i = 1; i < seq.timestamps.size(); ++i) {
    if (seq.timestamps[i] <= seq.timestamps[i - 1]) throw InputError("simulate_events: timestamps must increase");
  }
  const Tensor& first = seq.frames.front();
  if (first.rank() != 3 || first.channels() != 1) throw InputError("simulate_events expects {1,H,W} frames");
  for (const auto& f : seq.frames) {
    if (!f.same_shape(first)) throw InputError("simulate_events: frame sizes differ");
  }
  const int h = first.height(), w = first.width();
  const auto n = static_cast<std::size_t>(h) * w;

  Rng rng = make_rng(seed, 0xe7e1);
  const auto th_pos = draw_thresholds(n, cfg.theta_pos, cfg.sigma_theta, rng);
  const auto th_neg = draw_thresholds(n, cfg.theta_neg, cfg.sigma_theta, rng);

  events::EventStream out;
  out.width = w;
  out.height = h;
  out.t_start = seq.timestamps.front();
  out.t_end = seq.timestamps.back();

  // The reference leaks downward at leak_rate * theta_pos per second, which
  // surfaces as ON events in a static scene.
  std::vector<double> ref = log_plane(first, seq.log_intensity, cfg.intensity_floor);
  std::vector<double> prev = ref;
  for (std::size_t k = 1; k < seq.frames.size(); ++k) {
    const std::vector<double> cur = log_plane(seq.frames[k], seq.log_intensity, cfg.intensity_floor);
    const std::int64_t t0 = seq.timestamps[k - 1], t1 = seq.timestamps[k];
    const double dt = static_cast<double>(t1 - t0) * kMicro;
    for (std::size_t i = 0; i < n; ++i) {
      const double leak = cfg.leak_rate_hz * th_pos[i] * dt;
      // Signal relative to a fixed reference: a -> b over the interval.
      const double a = prev[i];
      const double b = cur[i] + leak;
      const auto x = static_cast<std::uint16_t>(i % static_cast<std::size_t>(w));
      const auto y = static_cast<std::uint16_t>(i / static_cast<std::size_t>(w));
      double& r = ref[i];
      if (b > a) {
        for (int m = 1; b - r > th_pos[i]; ++m) {
          const double level = r + th_pos[i];
          out.events.push_back({x, y, crossing_time(t0, t1, a, b, std::max(level, a)), std::int8_t{1}});
          r = level;
          if (m > 1'000'000) throw InputError("simulate_events: runaway crossing count");
        }
      } else if (b < a) {
        for (int m = 1; r - b > th_neg[i]; ++m) {
          const double level = r - th_neg[i];
          out.events.push_back({x, y, crossing_time(t0, t1, a, b, std::min(level, a)), std::int8_t{-1}});
          r = level;
          if (m > 1'000'000) throw InputError("simulate_events: runaway crossing count");
        }
      }
      r -= leak;
      prev[i] = cur[i];
    }
  }

  if (cfg.shot_noise_rate_hz > 0.0) {
    out = inject_noise_events(out, cfg.shot_noise_rate_hz, derive_seed(seed, 0x5407));
  } else {
    std::sort(out.events.begin(), out.events.end(), events::event_less);
  }
  apply_refractory(out.events, w, h, static_cast<std::int64_t>(std::llround(cfg.refractory_s / kMicro)));
  return out;
}

events::EventStream inject_noise_events(const events::EventStream& stream, double rate_hz, std::uint64_t seed) {
  if (rate_hz < 0.0) throw ConfigError("noise rate must be >= 0");
  events::EventStream out = stream;
  if (rate_hz == 0.0 || stream.duration() <= 0 || stream.width <= 0 || stream.height <= 0) return out;
  Rng rng = make_rng(seed, 0x9015e);
  const double mean = rate_hz * static_cast<double>(stream.duration()) * kMicro * stream.width * stream.height;
  const auto count = std::poisson_distribution<long long>(mean)(rng);
  out.events.reserve(out.events.size() + static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    events::EventRecord e;
    e.x = static_cast<std::uint16_t>(uniform_int(rng, 0, stream.width - 1));
    e.y = static_cast<std::uint16_t>(uniform_int(rng, 0, stream.height - 1));
    e.t = std::uniform_int_distribution<std::int64_t>(stream.t_start + 1, stream.t_end)(rng);
    e.p = uniform_int(rng, 0, 1) ? std::int8_t{1} : std::int8_t{-1};
    out.events.push_back(e);
  }
  std::sort(out.events.begin(), out.events.end(), events::event_less);
  return out;
}

}  // namespace esc::data
