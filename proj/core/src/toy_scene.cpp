#include "esc/toy_scene.hpp"

#include <algorithm>
#include <cmath>

#include "esc/error.hpp"
#include "esc/rng.hpp"

namespace esc::data {

void SceneConfig::validate() const {
  if (width < 8 || height < 8) throw ConfigError("scene must be at least 8x8");
  if (classes < 3 || classes > 254) throw ConfigError("scene needs 3..254 classes");
  if (frames < 1 || frame_dt_us <= 0) throw ConfigError("scene needs frames >= 1 and a positive frame step");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
  if (min_size < 2 || max_size < min_size) throw ConfigError("invalid object size range");
  if (min_speed < 0.0 || max_speed < min_speed) throw ConfigError("invalid speed range");
}

nlohmann::json SceneConfig::to_json() const {
  return {{"width", width},         {"height", height},         {"classes", classes},
          {"frames", frames},       {"frame_dt_us", frame_dt_us}, {"min_objects", min_objects},
          {"max_objects", max_objects}, {"min_size", min_size},   {"max_size", max_size},
          {"min_speed", min_speed}, {"max_speed", max_speed},     {"horizon", horizon}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.classes = j.value("classes", c.classes);
  c.frames = j.value("frames", c.frames);
  c.frame_dt_us = j.value("frame_dt_us", c.frame_dt_us);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.min_size = j.value("min_size", c.min_size);
  c.max_size = j.value("max_size", c.max_size);
  c.min_speed = j.value("min_speed", c.min_speed);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.horizon = j.value("horizon", c.horizon);
  return c;
}

const std::vector<std::array<double, 3>>& class_palette() {
  static const std::vector<std::array<double, 3>> p = {
      {0.55, 0.62, 0.70}, {0.30, 0.30, 0.32}, {0.85, 0.20, 0.15}, {0.15, 0.55, 0.20}, {0.95, 0.80, 0.20},
      {0.20, 0.30, 0.85}, {0.80, 0.45, 0.85}, {0.10, 0.80, 0.80}, {0.95, 0.55, 0.10}, {0.60, 0.40, 0.20},
      {0.95, 0.95, 0.95}, {0.05, 0.05, 0.05}};
  return p;
}

namespace {

std::array<double, 3> label_colour(int label) {
  const auto& p = class_palette();
  return p[static_cast<std::size_t>(label - 1) % p.size()];
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = ax + t * dx - px, cy = ay + t * dy - py;
  return std::sqrt(cx * cx + cy * cy);
}

bool covers(const SceneObject& o, int ox, int oy, int x, int y) {
  switch (o.kind) {
    case ShapeKind::Rect: return x >= ox && x < ox + o.w && y >= oy && y < oy + o.h;
    case ShapeKind::Disc: {
      const long dx = x - ox, dy = y - oy;
      return dx * dx + dy * dy <= static_cast<long>(o.w) * o.w;
    }
    case ShapeKind::Polyline: {
      // Zig-zag of three segments across the w x h span.
      const double ax = ox, ay = oy + o.h, bx = ox + o.w / 3.0, by = oy, cx = ox + 2.0 * o.w / 3.0, cy = oy + o.h,
                   dx = ox + o.w, dy = oy;
      const double r = o.thickness / 2.0;
      return dist_to_segment(x, y, ax, ay, bx, by) <= r || dist_to_segment(x, y, bx, by, cx, cy) <= r ||
             dist_to_segment(x, y, cx, cy, dx, dy) <= r;
    }
  }
  return false;
}

}  // namespace

std::vector<SceneObject> sample_objects(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, 0x0b7);
  const int count = uniform_int(rng, cfg.min_objects, cfg.max_objects);
  std::vector<SceneObject> objs;
  objs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 2));
    o.label = uniform_int(rng, 3, cfg.classes);
    o.w = uniform_int(rng, cfg.min_size, cfg.max_size);
    o.h = uniform_int(rng, cfg.min_size, cfg.max_size);
    if (o.kind == ShapeKind::Disc) o.w = std::max(o.w / 2, 2);
    o.thickness = uniform_int(rng, 5, 10);
    o.x = uniform(rng, 0.0, cfg.width - 1.0);
    o.y = uniform(rng, 0.0, cfg.height - 1.0);
    const double speed = uniform(rng, cfg.min_speed, cfg.max_speed);
    const double angle = uniform(rng, 0.0, 2.0 * M_PI);
    o.vx = speed * std::cos(angle);
    o.vy = speed * std::sin(angle);
    objs.push_back(o);
  }
  return objs;
}

void render_frame(const SceneConfig& cfg, const std::vector<SceneObject>& objects, double t, Tensor& rgb,
                  events::SemanticMask& mask) {
  const int w = cfg.width, h = cfg.height;
  rgb = Tensor({3, h, w});
  mask = events::SemanticMask(h, w, 1, cfg.classes);
  const int horizon = static_cast<int>(std::lround(cfg.horizon * h));
  for (int y = 0; y < h; ++y) {
    const int label = y < horizon ? 1 : 2;
    const auto col = label_colour(label);
    for (int x = 0; x < w; ++x) {
      // Static low-frequency shading.
      const double shade = 1.0 + 0.08 * std::sin(0.031 * x + 0.017 * y) + 0.05 * std::cos(0.011 * x - 0.043 * y);
      for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = std::clamp(col[static_cast<std::size_t>(c)] * shade, 0.0, 1.0);
      mask.at(y, x) = static_cast<std::uint8_t>(label);
    }
  }
  for (const auto& o : objects) {
    const int ox = static_cast<int>(std::lround(o.x + o.vx * t));
    const int oy = static_cast<int>(std::lround(o.y + o.vy * t));
    const int reach = std::max(o.w, o.h) + o.thickness + 1;
    const int x_lo = std::max(0, ox - reach), x_hi = std::min(w - 1, ox + reach);
    const int y_lo = std::max(0, oy - reach), y_hi = std::min(h - 1, oy + reach);
    const auto col = label_colour(o.label);
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        if (!covers(o, ox, oy, x, y)) continue;
        // Mild texture that moves with the object.
        const double tex = 1.0 + 0.06 * std::sin(0.5 * (x - ox) + 0.3 * (y - oy));
        for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = std::clamp(col[static_cast<std::size_t>(c)] * tex, 0.0, 1.0);
        mask.at(y, x) = static_cast<std::uint8_t>(o.label);
      }
    }
  }
}

Tensor luma(const Tensor& rgb) {
  Tensor y({1, rgb.height(), rgb.width()});
  const auto cells = static_cast<std::size_t>(rgb.cells());
  for (std::size_t i = 0; i < cells; ++i) y[i] = 0.299 * rgb[i] + 0.587 * rgb[cells + i] + 0.114 * rgb[2 * cells + i];
  return y;
}

ToySequence render_sequence(const SceneConfig& cfg, const std::vector<SceneObject>& objects) {
  cfg.validate();
  ToySequence seq;
  seq.objects = objects;
  for (int f = 0; f < cfg.frames; ++f) {
    const std::int64_t t_us = f * cfg.frame_dt_us;
    Tensor rgb;
    events::SemanticMask mask;
    render_frame(cfg, objects, static_cast<double>(t_us) * 1e-6, rgb, mask);
    seq.intensity.push_back(luma(rgb));
    seq.rgb.push_back(std::move(rgb));
    seq.masks.push_back(std::move(mask));
    seq.timestamps.push_back(t_us);
  }
  return seq;
}

ToySequence generate_toy_scene(const SceneConfig& cfg, std::uint64_t seed) {
  return render_sequence(cfg, sample_objects(cfg, seed));
}

}  // namespace esc::data
