#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/boundary.hpp"
#include "esc/tensor.hpp"

// Procedural moving-shape scenes with exact per-frame labels.
namespace esc::data {

enum class ShapeKind { Rect, Disc, Polyline };

struct SceneConfig {
  int width = 640;
  int height = 360;
  int classes = events::kDefaultClasses;
  int frames = 11;
  std::int64_t frame_dt_us = 5000;
  int min_objects = 3;
  int max_objects = 6;
  int min_size = 30;  // px
  int max_size = 110;
  double min_speed = 150.0;  // px / s
  double max_speed = 450.0;
  // Background label 1 above the horizon, label 2 (ground) below it.
  double horizon = 0.62;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

struct SceneObject {
  ShapeKind kind = ShapeKind::Rect;
  int label = 3;
  double x = 0, y = 0;    // position at t = 0 (centre for discs, corner otherwise)
  double vx = 0, vy = 0;  // px / s
  int w = 0, h = 0;       // rect extent; disc radius = w; polyline span w x h
  int thickness = 6;
};

struct ToySequence {
  std::vector<Tensor> rgb;        // {3, H, W} in [0, 1]
  std::vector<Tensor> intensity;  // {1, H, W} luma
  std::vector<events::SemanticMask> masks;
  std::vector<std::int64_t> timestamps;
  std::vector<SceneObject> objects;
};

// Base colour of each label (index 0 = label 1).
const std::vector<std::array<double, 3>>& class_palette();

std::vector<SceneObject> sample_objects(const SceneConfig& cfg, std::uint64_t seed);

// Renders one frame at time t (seconds). Object positions are rounded to whole
// pixels so rigid motion keeps pixel counts exact.
void render_frame(const SceneConfig& cfg, const std::vector<SceneObject>& objects, double t, Tensor& rgb,
                  events::SemanticMask& mask);

ToySequence generate_toy_scene(const SceneConfig& cfg, std::uint64_t seed);
ToySequence render_sequence(const SceneConfig& cfg, const std::vector<SceneObject>& objects);

Tensor luma(const Tensor& rgb);

}  // namespace esc::data
