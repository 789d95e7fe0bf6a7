#include <benchmark/benchmark.h>

#include <algorithm>
#include <memory>

#include "esc/autograd.hpp"
#include "esc/boundary.hpp"
#include "esc/dictionary.hpp"
#include "esc/event_sim.hpp"
#include "esc/events.hpp"
#include "esc/fusion.hpp"
#include "esc/model.hpp"
#include "esc/nn.hpp"
#include "esc/rng.hpp"
#include "esc/toy_scene.hpp"

using namespace esc;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng = make_rng(seed);
  for (auto& v : t.storage()) v = uniform(rng, -1.0, 1.0);
  return t;
}

events::EventStream random_events(int count, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  events::EventStream s;
  s.width = 640;
  s.height = 360;
  s.t_end = 50'000;
  for (int i = 0; i < count; ++i) {
    s.events.push_back({static_cast<std::uint16_t>(uniform_int(rng, 0, 639)),
                        static_cast<std::uint16_t>(uniform_int(rng, 0, 359)), uniform_int(rng, 1, 50'000),
                        static_cast<std::int8_t>(uniform(rng) < 0.5 ? -1 : 1)});
  }
  std::sort(s.events.begin(), s.events.end(), events::event_less);
  return s;
}

}  // namespace

static void BM_Quantize(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const Tensor codebook = random_tensor({k, 32}, 1);
  const Tensor g = random_tensor({32, 90, 160}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(dict::quantize(g, codebook));
  state.SetItemsProcessed(state.iterations() * 90 * 160);
}
BENCHMARK(BM_Quantize)->Arg(32)->Arg(128);

static void BM_VoxelGrid(benchmark::State& state) {
  const auto s = random_events(static_cast<int>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(events::build_voxel_grid(s, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_VoxelGrid)->Arg(10'000)->Arg(100'000);

static void BM_BoundaryExtraction(benchmark::State& state) {
  const auto scene = data::generate_toy_scene(data::SceneConfig{}, 4);
  const auto& mask = scene.masks.front();
  for (auto _ : state) benchmark::DoNotOptimize(events::extract_boundary(mask));
}
BENCHMARK(BM_BoundaryExtraction);

static void BM_Conv3x3Forward(benchmark::State& state) {
  nn::ParameterSet ps;
  Rng rng = make_rng(5);
  const nn::Conv2d conv(ps, "conv", 32, 32, 3, 1, 1, rng);
  const ag::Var x(random_tensor({32, 90, 160}, 6));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
}
BENCHMARK(BM_Conv3x3Forward)->Unit(benchmark::kMillisecond);

static void BM_RecodedConsolidation(benchmark::State& state) {
  nn::ParameterSet ps;
  Rng rng = make_rng(7);
  const fusion::RecodedConsolidation rc(ps, 32, 4, rng);
  const ag::Var f(random_tensor({32, 90, 160}, 8)), gi(random_tensor({32, 90, 160}, 9)), ge(random_tensor({32, 90, 160}, 10));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(rc.forward(f, gi, ge));
}
BENCHMARK(BM_RecodedConsolidation)->Unit(benchmark::kMillisecond);

static void BM_EventSimulation(benchmark::State& state) {
  data::SceneConfig cfg;
  cfg.frames = 11;
  const auto scene = data::generate_toy_scene(cfg, 11);
  data::FrameSequence seq{scene.intensity, scene.timestamps, false};
  const data::EventSimConfig sim;
  for (auto _ : state) benchmark::DoNotOptimize(data::simulate_events(seq, sim, 12));
}
BENCHMARK(BM_EventSimulation)->Unit(benchmark::kMillisecond);

static void BM_ModelTrainStep(benchmark::State& state) {
  auto d = std::make_shared<dict::EdgeDictionary>(dict::DictConfig{128, 32, 0.25}, 13);
  d->freeze();
  ModelConfig mc;
  mc.dim = 32;
  const EscModel model(mc, d, 14);
  const Tensor image = random_tensor({3, 128, 128}, 15), vox = random_tensor({5, 128, 128}, 16);
  const auto scene = data::generate_toy_scene(data::SceneConfig{128, 128}, 17);
  for (auto _ : state) {
    const auto out = model.forward(image, vox);
    ag::backward(model.loss(out, scene.masks.front(), 0.1).total);
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
