#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/event_sim.hpp"
#include "esc/isp.hpp"
#include "esc/toy_scene.hpp"

// On-disk layout: <root>/<split>/<seq_id>/{frames/%06d.png, events.evt,
// masks/%06d.png, meta.json}. Sample i of a sequence sits at t_i = (i+1) * window
// and owns the events in (t_i - window, t_i].
namespace esc::data {

struct DatasetConfig {
  std::filesystem::path root = "data";
  std::string split = "train";
  int sequences = 4;
  int samples_per_sequence = 5;
  std::int64_t window_us = 50000;
  int substeps = 10;  // rendered sub-frames per window for event simulation
  SceneConfig scene;
  EventSimConfig sim;
  bool lowlight = false;
  LowLightConfig lowlight_cfg;
  double extra_noise_rate_hz = 0.0;  // pure-noise events overlaid after simulation
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct Sample {
  std::string id;
  Tensor rgb;  // {3, H, W}
  events::EventStream events;
  events::SemanticMask mask;
};

std::string sequence_id(int index);
std::uint64_t sequence_seed(const DatasetConfig& cfg, int index);

// In-memory generation of one sequence's samples.
std::vector<Sample> generate_sequence(const DatasetConfig& cfg, int index);

// Writes every sequence of the split; returns the sequence directories.
std::vector<std::filesystem::path> write_split(const DatasetConfig& cfg);

std::vector<Sample> load_sequence(const std::filesystem::path& dir);
// Sequences in lexicographic order of their directory names.
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);

// Label PNG (8-bit gray) I/O.
void write_mask_png(const std::filesystem::path& path, const events::SemanticMask& mask);
events::SemanticMask read_mask_png(const std::filesystem::path& path, int classes);

}  // namespace esc::data
