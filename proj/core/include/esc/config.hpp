#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/dataset.hpp"
#include "esc/model.hpp"

// Run configuration. Files are TOML with dotted sections; every training
// hyperparameter of the method lives under [paper] with its published default,
// desk-scale knobs live in the other sections.
namespace esc::harness {

struct PaperParams {
  int items = 128;  // K
  int dim = 256;    // n
  double alpha = 0.25;
  double beta = 0.1;
  int voxel_bins = 5;
  int classes = 11;
  int crop = 256;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double lr = 6e-5;
  double decoder_lr_multiplier = 10.0;
  double max_lr_factor = 1.6;
  int cycle_epochs = 10;  // length of one full triangle
  double weight_decay = 0.01;
  int epochs = 300;
  int batch = 16;
};

struct AugmentConfig {
  bool color_jitter = true;
  bool hflip = true;
  bool blur = true;
  bool resize = true;
  bool crop = true;
  double jitter = 0.2;      // max relative brightness / contrast / saturation change
  double blur_prob = 0.5;
};

enum class ScheduleKind { Constant, Cyclic, WarmupPoly };
std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule(const std::string& s);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::Cyclic;
  int half_cycle_steps = 0;  // 0: derived from paper.cycle_epochs
  int warmup_steps = 0;
  double power = 1.0;
};

struct DictStageConfig {
  int steps = 300;
  int batch = 4;
  double lr = 1e-3;
  int crop = 128;           // boundary crops fed to the tokenizer
  int crops_per_sample = 4;
};

struct DataConfig {
  int train_sequences = 4;
  int val_sequences = 2;
  int test_sequences = 2;
  int samples_per_sequence = 5;
  std::int64_t window_us = 50000;
  int substeps = 10;
  int width = 640;
  int height = 360;
  bool lowlight = false;
  double extra_noise_rate_hz = 0.0;
  // Also owns the event simulator noise parameters.
  data::EventSimConfig sim;
};

struct RunConfig {
  PaperParams paper;
  int heads = 4;
  AugmentConfig augment;
  ScheduleConfig schedule;
  DictStageConfig dict;
  DataConfig data;

  std::uint64_t seed = 0;
  int steps = 0;  // > 0 overrides paper.epochs
  int val_every = 0;  // 0: once per epoch
  int val_samples = 0;  // 0: the whole validation split
  std::filesystem::path data_root = "data";
  std::filesystem::path ckpt_dir = "checkpoints";
  std::filesystem::path out_dir = "out";

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] ModelConfig model_config() const;
  [[nodiscard]] dict::DictConfig dict_config() const;
  [[nodiscard]] data::DatasetConfig dataset_config(const std::string& split) const;
};

// Parses TOML text. Unknown keys and mistyped values throw ConfigError.
RunConfig parse_run_config(const std::string& toml_text, const std::string& origin = "<string>");
RunConfig load_run_config(const std::filesystem::path& path);

// "section.key=value" overrides; the value is parsed as a TOML value, falling
// back to a bare string. Applied on top of the file.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

// ESC_DATA_ROOT and ESC_CKPT_DIR, when set, replace run.data_root / run.ckpt_dir.
void apply_environment(RunConfig& cfg);

}  // namespace esc::harness
