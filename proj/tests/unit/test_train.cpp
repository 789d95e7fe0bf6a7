#include <gtest/gtest.h>

#include <algorithm>

#include "esc/container.hpp"
#include "esc/error.hpp"
#include "esc/train.hpp"
#include "test_util.hpp"

using namespace esc;
using namespace esc::harness;
namespace fs = std::filesystem;

namespace {

RunConfig smoke(const fs::path& root) {
  RunConfig c = load_run_config(ESC_SOURCE_DIR "/configs/smoke.toml");
  c.data_root = root / "data";
  c.ckpt_dir = root / "ck";
  c.out_dir = root / "out";
  return c;
}

}  // namespace

TEST(Augment, DeterministicAndAligned) {
  RunConfig c;
  c.paper.crop = 64;
  const auto mask = test::random_mask(90, 120, 11, 1);
  const Tensor rgb = test::random_tensor({3, 90, 120}, 2, 0, 1), vox = test::random_tensor({5, 90, 120}, 3);
  Rng a = make_rng(5), b = make_rng(5);
  const auto x = augment(rgb, vox, mask, c, 32, a), y = augment(rgb, vox, mask, c, 32, b);
  EXPECT_EQ(x.image, y.image);
  EXPECT_EQ(x.mask, y.mask);
  EXPECT_EQ(x.image.shape(), (std::vector<int>{3, 64, 64}));
  EXPECT_EQ(x.voxels.shape(), (std::vector<int>{5, 64, 64}));
  EXPECT_EQ(x.mask.height, 64);
  EXPECT_EQ(x.mask.width, 64);
}

TEST(Augment, DisabledAugmentationPadsToMultiple) {
  RunConfig c;
  c.augment = {false, false, false, false, false, 0.0, 0.0};
  const auto mask = test::random_mask(40, 50, 11, 1);
  const Tensor rgb = test::random_tensor({3, 40, 50}, 2, 0, 1), vox = test::random_tensor({5, 40, 50}, 3);
  Rng r = make_rng(1);
  const auto x = augment(rgb, vox, mask, c, 32, r);
  EXPECT_EQ(x.image.shape(), (std::vector<int>{3, 64, 64}));
  EXPECT_EQ(x.image.at(1, 10, 20), rgb.at(1, 10, 20));
  EXPECT_EQ(x.mask.at(10, 20), mask.at(10, 20));
  EXPECT_EQ(x.mask.at(50, 60), events::kIgnoreLabel);
  EXPECT_EQ(x.image.at(0, 50, 60), 0.0);
}

TEST(Schedule, CyclicTriangleBetweenBaseAndPeak) {
  RunConfig c;
  c.paper.lr = 1e-3;
  c.schedule.half_cycle_steps = 10;
  double peak = 0;
  for (int s = 0; s < 60; ++s) {
    const double lr = learning_rate(c, s, 8);
    EXPECT_GE(lr, 1e-3 - 1e-15);
    EXPECT_LE(lr, 1.6e-3 + 1e-15);
    peak = std::max(peak, lr);
  }
  EXPECT_NEAR(peak, 1.6e-3, 1e-15);
  EXPECT_NEAR(learning_rate(c, 0, 8), 1e-3, 1e-15);
  EXPECT_NEAR(learning_rate(c, 10, 8), 1.6e-3, 1e-15);
  EXPECT_NEAR(learning_rate(c, 20, 8), 1e-3, 1e-15);
  c.schedule.kind = ScheduleKind::Constant;
  EXPECT_EQ(learning_rate(c, 13, 8), 1e-3);
}

TEST(Schedule, StepsFromEpochs) {
  RunConfig c;
  c.paper.batch = 4;
  c.paper.epochs = 3;
  EXPECT_EQ(steps_per_epoch(c, 10), 3);
  EXPECT_EQ(total_steps(c, 10), 9);
  c.steps = 5;
  EXPECT_EQ(total_steps(c, 10), 5);
}

TEST(BoundaryCrops, DeterministicInSeed) {
  data::Sample s;
  s.mask = test::random_mask(100, 120, 4, 3);
  const std::vector<data::Sample> v{s};
  const auto a = boundary_crops(v, 64, 3, 9), b = boundary_crops(v, 64, 3, 9);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].edges, b[i].edges);
}

TEST(TrainSegmentation, MissingDictionaryIsAnInputError) {
  test::TempDir dir("nodict");
  const RunConfig c = smoke(dir.path());
  data::write_split(c.dataset_config("train"));
  const auto train = data::load_split(c.data_root, "train");
  EXPECT_THROW(train_segmentation(c, train, train, {dir.path() / "missing.ckpt"}), InputError);
  EXPECT_THROW(train_dictionary_stage(c, {}), InputError);
}

TEST(TrainSegmentation, ResumedRunMatchesUnbrokenRun) {
  test::TempDir dir("resume");
  RunConfig c = smoke(dir.path());
  for (const char* s : {"train", "val"}) data::write_split(c.dataset_config(s));
  const auto train = data::load_split(c.data_root, "train");
  const auto val = data::load_split(c.data_root, "val");
  const auto dict = train_dictionary_stage(c, train);

  const auto whole = train_segmentation(c, train, val, {dict.checkpoint});
  EXPECT_EQ(whole.steps.size(), 4u);
  EXPECT_EQ(io::sha256_file(whole.initial).size(), 64u);

  RunConfig broken = c;
  broken.ckpt_dir = dir.path() / "ck2";
  broken.out_dir = dir.path() / "out2";
  const auto first = train_segmentation(broken, train, val, {dict.checkpoint, std::nullopt, 2});
  EXPECT_EQ(first.steps.size(), 2u);
  const auto second = train_segmentation(broken, train, val, {dict.checkpoint, first.last});
  // The checkpoints echo their own directories, so compare contents.
  const auto d = load_frozen_dictionary(dict.checkpoint);
  const auto a = load_model(whole.last, d), b = load_model(second.last, d);
  ASSERT_EQ(a.model.params().params().size(), b.model.params().params().size());
  for (std::size_t i = 0; i < a.model.params().params().size(); ++i) {
    EXPECT_EQ(a.model.params().params()[i].var.value(), b.model.params().params()[i].var.value());
  }
  EXPECT_EQ(a.extra.extra.size(), b.extra.extra.size());
  EXPECT_EQ(second.best_step, whole.best_step);
  EXPECT_EQ(io::read_file(broken.out_dir / "train_log.csv"), io::read_file(c.out_dir / "train_log.csv"));
}
