#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esc/config.hpp"
#include "esc/dataset.hpp"
#include "esc/dictionary.hpp"
#include "esc/evaluate.hpp"
#include "esc/model.hpp"

namespace esc::harness {

// One training example after augmentation: aligned image, voxels and labels.
struct TrainExample {
  Tensor image;   // {3, S, S}
  Tensor voxels;  // {bins, S, S}
  events::SemanticMask mask;
};

// Random resize and crop, then flip, blur and colour jitter, driven by `rng`.
// Sides of the output are multiples of `multiple` (padding uses zeros and the
// ignore label).
TrainExample augment(const Tensor& rgb, const Tensor& voxels, const events::SemanticMask& mask, const RunConfig& cfg,
                     int multiple, Rng& rng);

// ---- dictionary stage -------------------------------------------------------

struct DictStageResult {
  std::filesystem::path checkpoint;
  std::string sha256;
  std::vector<dict::DictTrainStep> curve;
};

// Random boundary crops of the training masks; deterministic in the seed.
std::vector<events::BoundaryMap> boundary_crops(std::span<const data::Sample> samples, int crop, int per_sample,
                                                std::uint64_t seed);

// Trains, freezes and saves the dictionary to <ckpt_dir>/dict.ckpt; writes
// <out_dir>/dict_log.csv.
DictStageResult train_dictionary_stage(const RunConfig& cfg, std::span<const data::Sample> train);

// Loads a dictionary checkpoint and freezes it. Throws InputError when absent.
std::shared_ptr<const dict::EdgeDictionary> load_frozen_dictionary(const std::filesystem::path& path);

// ---- segmentation stage -----------------------------------------------------

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double total = 0.0, pred = 0.0, edge = 0.0;
  double pixel_accuracy = 0.0;  // on the augmented batch, %
};

struct ValLog {
  int step = 0;
  double miou = 0.0, gacc = 0.0, macc = 0.0;
};

struct SegTrainResult {
  std::filesystem::path best, last, initial;
  int best_step = 0;
  double best_miou = 0.0;
  std::vector<StepLog> steps;
  std::vector<ValLog> validation;
};

struct SegTrainOptions {
  std::filesystem::path dictionary;        // frozen dictionary checkpoint
  std::optional<std::filesystem::path> resume;  // checkpoint written by a previous run
  int stop_after = -1;  // >= 0: stop once this step finished (simulated interruption)
};

int total_steps(const RunConfig& cfg, std::size_t train_samples);
int steps_per_epoch(const RunConfig& cfg, std::size_t train_samples);
double learning_rate(const RunConfig& cfg, int step, std::size_t train_samples);

// Trains the segmentation model against the frozen dictionary. Per-step
// randomness is derived from (seed, step) so a resumed run replays an
// unbroken one. Writes best.ckpt, last.ckpt and step0.ckpt to ckpt_dir and
// train_log.csv / val_log.csv to out_dir. Throws DivergenceError on a
// non-finite loss.
SegTrainResult train_segmentation(const RunConfig& cfg, std::span<const data::Sample> train,
                                  std::span<const data::Sample> val, const SegTrainOptions& opts);

}  // namespace esc::harness
