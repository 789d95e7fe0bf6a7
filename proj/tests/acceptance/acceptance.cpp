// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
// Criteria 9 and 10 run the desk-scale toy pipeline (several minutes).

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "esc/config.hpp"
#include "esc/container.hpp"
#include "esc/dictionary.hpp"
#include "esc/elr.hpp"
#include "esc/evaluate.hpp"
#include "esc/event_sim.hpp"
#include "esc/fusion.hpp"
#include "esc/gradcheck.hpp"
#include "esc/isp.hpp"
#include "esc/metrics.hpp"
#include "esc/occlusion.hpp"
#include "esc/report.hpp"
#include "esc/train.hpp"
#include "test_util.hpp"

using namespace esc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Nearest codebook row by exhaustive scan, lowest index on ties.
int nearest_row(const Tensor& g, int cell, const Tensor& codebook) {
  const int n = g.channels(), cells = g.cells();
  int best = 0;
  double best_d = 1e300;
  for (int k = 0; k < codebook.dim(0); ++k) {
    double d = 0;
    for (int i = 0; i < n; ++i) {
      const double diff = g[static_cast<std::size_t>(i) * cells + cell] - codebook[static_cast<std::size_t>(k) * n + i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Outcome quantization_oracle() {
  const Tensor codebook = test::random_tensor({32, 16}, 101);
  const Tensor g = test::random_tensor({16, 25, 40}, 102, -1.5, 1.5);
  const auto t0 = Clock::now();
  const auto q = dict::quantize(g, codebook);
  int mismatches = 0;
  for (int c = 0; c < 1000; ++c) mismatches += q.keys.keys[static_cast<std::size_t>(c)] != nearest_row(g, c, codebook);
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < 5.0, fmt::format("{} of 1000 keys differ from the scan, {:.3f} s", mismatches, s)};
}

Outcome recoding_chain() {
  auto d = std::make_shared<dict::EdgeDictionary>(dict::DictConfig{128, 32, 0.25}, 7);
  d->freeze();
  int equal = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scene = data::generate_toy_scene(test::small_scene(), 1000 + seed);
    const auto b = events::extract_boundary(scene.masks[seed % scene.masks.size()]);
    const auto keys = elr::key_map(elr::prior_distribution(b, *d));
    equal += keys == dict::quantize(d->tokenizer().tokenize(b), d->codebook().value()).keys;
  }
  return {equal == 50, fmt::format("{} of 50 maps re-code to the quantized keys", equal)};
}

Outcome analytic_losses() {
  const int k = 128;
  dict::KeyGrid keys{3, 3, {}};
  for (int i = 0; i < 9; ++i) keys.keys.push_back((i * 37) % k);
  const auto prior = elr::one_hot(keys, k);
  const ag::Var uniform(Tensor({k, 3, 3}, 1.0 / k));
  const double lu = elr::edge_loss(prior, {uniform}, {uniform}).item();
  const double lm = elr::edge_loss(prior, prior, prior).item();
  const double expect = 2.0 * std::log(128.0);
  return {std::abs(lu - expect) <= 1e-6 && std::abs(lm) <= 1e-9,
          fmt::format("uniform {:.9f} (2 ln 128 = {:.9f}), matching one-hot {:.3g}", lu, expect, lm)};
}

Outcome gradient_suite() {
  harness::GradCheckOptions opts;
  const auto rep = harness::run_grad_check(opts);
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : rep.max_rel_error) {
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  std::string contracts;
  for (const auto& [name, ok] : rep.contracts) contracts += fmt::format(" {}={}", name, ok ? "ok" : "broken");
  return {rep.passed(), fmt::format("max rel error {:.2e} ({}),{}", worst, worst_name, contracts)};
}

void zero_param(nn::ParameterSet& ps, const std::string& name) {
  ag::Var v = ps.find(name)->var;
  v.mutable_value().fill(0.0);
}

Outcome fusion_invariants() {
  std::vector<std::string> broken;
  auto feat = [](int n, int h, int w, std::uint64_t seed) { return ag::Var(test::random_tensor({n, h, w}, seed)); };
  {
    nn::ParameterSet ps;
    Rng rng = make_rng(1);
    fusion::RecodedConsolidation rc(ps, 16, 4, rng);
    zero_param(ps, "rc.attn.w_o.weight");
    const ag::Var f = feat(16, 2, 2, 2);
    if (!(rc.forward(f, feat(16, 2, 2, 3), feat(16, 2, 2, 4)).value() == f.value())) broken.push_back("RC residual");
  }
  {
    nn::ParameterSet ps;
    Rng rng = make_rng(2);
    fusion::UncertaintyOptimization uo(ps, 16, 4, rng);
    const fusion::ConfidenceMaps sym{Tensor({1, 2, 2}, 0.4), Tensor({1, 2, 2}, 0.6)};
    const auto out = uo.forward(feat(16, 2, 2, 5), feat(16, 2, 2, 6), sym, sym);
    for (std::size_t i = 0; i < out.psi.value().size(); ++i) {
      if (std::abs(out.psi.value()[i] - (out.psi_img.value()[i] + out.psi_evt.value()[i]) / 2) > 1e-9) {
        broken.push_back("UO symmetric average");
        break;
      }
    }
    const auto ci = fusion::uo_confidence(elr::distribution_from_logits(feat(32, 2, 2, 7)));
    const auto ce = fusion::uo_confidence(elr::distribution_from_logits(feat(32, 2, 2, 8)));
    const auto mix = uo.forward(feat(16, 2, 2, 5), feat(16, 2, 2, 6), ci, ce);
    for (std::size_t i = 0; i < mix.weight_img.size(); ++i) {
      if (mix.weight_img[i] < 0 || mix.weight_evt[i] < 0 || std::abs(mix.weight_img[i] + mix.weight_evt[i] - 1) > 1e-12) {
        broken.push_back("UO convex coefficients");
        break;
      }
    }
  }
  {
    nn::ParameterSet ps;
    Rng rng = make_rng(3);
    fusion::RecodedConsolidation rc(ps, 16, 4, rng);
    zero_param(ps, "rc.noise_k");
    zero_param(ps, "rc.noise_v");
    const ag::Var f = feat(16, 2, 3, 9), gi = feat(16, 2, 3, 10), ge = feat(16, 2, 3, 11);
    const std::array<ag::Var, 3> kv{f, gi, ge};
    if (!(rc.forward(f, gi, ge).value() == ag::add(f, rc.attention().attend(f, kv, kv)).value())) {
      broken.push_back("RC noise ablation");
    }
  }
  {
    nn::ParameterSet ps;
    Rng rng = make_rng(4);
    fusion::UncertaintyOptimization uo(ps, 16, 4, rng);
    for (const char* n : {"uo.noise_k_img", "uo.noise_k_evt", "uo.noise_v_img", "uo.noise_v_evt"}) zero_param(ps, n);
    nn::ParameterSet ps2;
    Rng rng2 = make_rng(4);
    fusion::AttentionParams ai(ps2, "uo.attn_img", 16, 4, rng2), ae(ps2, "uo.attn_evt", 16, 4, rng2);
    const ag::Var ei = feat(16, 2, 2, 12), ee = feat(16, 2, 2, 13);
    const fusion::ConfidenceMaps ci{Tensor({1, 2, 2}, 0.7), Tensor({1, 2, 2}, 0.3)};
    const fusion::ConfidenceMaps ce{Tensor({1, 2, 2}, 0.2), Tensor({1, 2, 2}, 0.8)};
    const auto out = uo.forward(ei, ee, ci, ce);
    const std::array<ag::Var, 2> ki{ei, ag::mul_cells(ei, ag::Var(ci.u))}, vi{ei, ee};
    const std::array<ag::Var, 2> ke{ee, ag::mul_cells(ee, ag::Var(ce.u))}, ve{ee, ei};
    if (!(out.psi_img.value() == ag::add(ei, ai.attend(ei, ki, vi)).value()) ||
        !(out.psi_evt.value() == ag::add(ee, ae.attend(ee, ke, ve)).value())) {
      broken.push_back("UO noise ablation");
    }
  }
  std::string detail = "RC residual, UO average/convexity, noise ablation";
  if (!broken.empty()) {
    detail = "broken:";
    for (const auto& b : broken) detail += " " + b + ";";
  }
  return {broken.empty(), detail};
}

Outcome edge_shape(const harness::RunConfig& toy) {
  const auto t0 = Clock::now();
  const auto st = harness::edge_statistics(toy, 50, 10);
  const double s = seconds_since(t0);
  return {st.mean_gap > 0.05 && st.concave && s < 120.0,
          fmt::format("mean gap {:.4f}, max second difference {:.3g}, {:.1f} s", st.mean_gap, st.max_second_difference, s)};
}

data::FrameSequence log_sequence(const std::vector<double>& values, std::int64_t dt = 1000, int w = 1, int h = 1) {
  data::FrameSequence s;
  s.log_intensity = true;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s.frames.emplace_back(std::vector<int>{1, h, w}, values[i]);
    s.timestamps.push_back(static_cast<std::int64_t>(i) * dt);
  }
  return s;
}

Outcome event_simulator() {
  const double theta = 0.2;
  const auto ideal = data::EventSimConfig::ideal(theta);
  const auto at_theta = data::simulate_events(log_sequence({0.0, theta}), ideal, 1).events.size();
  const auto past_theta = data::simulate_events(log_sequence({0.0, theta + 1e-9}), ideal, 1).events.size();
  // Under the strict inequality the fifth crossing needs the ramp to pass 5 theta.
  std::vector<double> ramp;
  for (int i = 0; i <= 10; ++i) ramp.push_back(i * (5 * theta + 1e-6) / 10);
  const auto ramp_events = data::simulate_events(log_sequence(ramp), ideal, 1).events.size();

  std::vector<double> flicker;
  for (int i = 0; i < 80; ++i) flicker.push_back(i % 2 ? 1.0 : 0.0);
  auto cfg = ideal;
  cfg.refractory_s = 0.0005;
  const auto fl = data::simulate_events(log_sequence(flicker, 100, 4, 3), cfg, 2);
  std::map<int, std::int64_t> last;
  std::int64_t min_gap = 1LL << 60;
  for (const auto& e : fl.events) {
    const int key = e.y * 4 + e.x;
    if (last.count(key)) min_gap = std::min(min_gap, e.t - last[key]);
    last[key] = e.t;
  }

  events::EventStream base;
  base.width = 16;
  base.height = 16;
  base.t_end = 100'000;
  const double expected = 5.0 * 0.1 * 256;
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    mean += static_cast<double>(data::inject_noise_events(base, 5.0, seed).events.size()) / 20.0;
  }
  const bool poisson_ok = std::abs(mean - expected) <= 3.0 * std::sqrt(expected / 20.0);
  return {at_theta == 0 && past_theta == 1 && ramp_events == 5 && min_gap >= 500 && poisson_ok,
          fmt::format("step theta -> {}, theta+eps -> {}, 5 theta ramp -> {}, min refractory gap {} us, noise mean {:.1f} "
                      "(expected {:.0f})",
                      at_theta, past_theta, ramp_events, min_gap, mean, expected)};
}

Outcome isp_round_trip() {
  double worst = 1e300;
  for (const auto& img : test::isp_fixtures()) {
    worst = std::min(worst, data::psnr(img, data::isp_forward(data::isp_unprocess(img))));
  }
  const Tensor gray({3, 6, 8}, 0.42);
  double gray_err = 0;
  const Tensor back = data::isp_forward(data::isp_unprocess(gray));
  for (double v : back.values()) gray_err = std::max(gray_err, std::abs(v - 0.42));
  return {worst >= 40.0 && gray_err <= 1e-12,
          fmt::format("worst fixture PSNR {:.2f} dB, gray round-trip error {:.2g}", worst, gray_err)};
}

Outcome metrics_oracle() {
  int bad = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto gt = test::random_mask(24, 31, 11, seed, 0.15);
    Rng rng = make_rng(seed, 5);
    std::vector<std::uint8_t> pred(gt.labels.size());
    for (auto& v : pred) v = static_cast<std::uint8_t>(uniform_int(rng, 1, 11));
    metrics::ConfusionMatrix cm(11);
    cm.accumulate(pred, gt);
    const auto s = metrics::summarize(cm);

    long correct = 0, counted = 0;
    std::vector<long> tp(12), gn(12), pn(12);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (gt.labels[i] == events::kIgnoreLabel) continue;
      ++counted;
      ++gn[gt.labels[i]];
      ++pn[pred[i]];
      if (gt.labels[i] == pred[i]) {
        ++correct;
        ++tp[pred[i]];
      }
    }
    double acc = 0, iou = 0;
    int na = 0, ni = 0;
    for (int c = 1; c <= 11; ++c) {
      if (gn[c] > 0) acc += 100.0 * tp[c] / gn[c], ++na;
      if (gn[c] + pn[c] > 0) iou += 100.0 * tp[c] / (gn[c] + pn[c] - tp[c]), ++ni;
    }
    if (std::abs(s.gacc - 100.0 * correct / counted) > 1e-9 || std::abs(s.macc - acc / na) > 1e-9 ||
        std::abs(s.miou - iou / ni) > 1e-9 || cm.total() != static_cast<std::uint64_t>(counted)) {
      ++bad;
    }
    // Any prediction under an ignored pixel leaves the matrix unchanged.
    auto moved = pred;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      if (gt.labels[i] == events::kIgnoreLabel) moved[i] = static_cast<std::uint8_t>(moved[i] % 11 + 1);
    }
    metrics::ConfusionMatrix cm2(11);
    cm2.accumulate(moved, gt);
    if (!(cm2 == cm)) ++bad;
  }
  return {bad == 0, fmt::format("{} of 10 random fixtures disagree with the scalar loop", bad)};
}

int run_cli(std::vector<std::string> args, const fs::path& root) {
  for (const std::string& a : std::vector<std::string>{"--data-root", (root / "data").string(), "--ckpt-dir",
                                                       (root / "ck").string(), "--out", (root / "out").string(),
                                                       "--log-level", "warn"}) {
    args.push_back(a);
  }
  // Keep the subcommands' console summaries out of the PASS/FAIL listing.
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run(args);
  std::cout.rdbuf(old);
  return code;
}

struct ToyRun {
  bool ok = false;
  std::string error;
  double pipeline_seconds = 0;
  double step0_miou = 0, best_miou = 0, train_gacc = 0;
  int best_step = 0;
  harness::OcclusionReport occlusion;
};

ToyRun toy_pipeline(const fs::path& root) {
  ToyRun r;
  const std::string cfg_path = ESC_SOURCE_DIR "/configs/toy.toml";
  if (run_cli({"gen-data", "-c", cfg_path}, root) != 0) {
    r.error = "gen-data failed";
    return r;
  }
  const auto t0 = Clock::now();
  if (run_cli({"train-dict", "-c", cfg_path}, root) != 0 || run_cli({"train", "-c", cfg_path}, root) != 0) {
    r.error = "training failed";
    return r;
  }
  r.pipeline_seconds = seconds_since(t0);

  const auto summary = nlohmann::json::parse(io::read_file(root / "out" / "train_summary.json"));
  r.step0_miou = summary.at("step0_miou").get<double>();
  r.best_miou = summary.at("best_miou").get<double>();
  r.best_step = summary.at("best_step").get<int>();

  const auto dictionary = harness::load_frozen_dictionary(root / "ck" / "dict.ckpt");
  const auto last = load_model(root / "ck" / "last.ckpt", dictionary);
  const auto train = data::load_split(root / "data", "train");
  r.train_gacc = harness::evaluate(last.model, train).summary.gacc;

  const auto best = load_model(root / "ck" / "best.ckpt", dictionary);
  const auto test = data::load_split(root / "data", "test");
  r.occlusion = harness::occlusion_sweep(best.model, test, 0.5);
  r.ok = true;
  return r;
}

Outcome occlusion_protocol(const ToyRun& run) {
  const bool rgb_default = data::default_rgb_occlusion().rect == data::Rect{350, 200, 100, 100} &&
                           data::default_rgb_occlusion().target == data::OcclusionTarget::Rgb;
  const bool evt_default = data::default_event_occlusion().rect == data::Rect{150, 150, 100, 100} &&
                           data::default_event_occlusion().target == data::OcclusionTarget::Event;
  const bool clip = data::Rect{350, 200, 250, 250}.clipped(640, 360) == data::Rect{350, 200, 250, 160} &&
                    data::Rect{-20, 300, 100, 100}.clipped(640, 360) == data::Rect{0, 300, 80, 60};
  if (!run.ok) return {false, "toy pipeline: " + run.error};
  const auto& rep = run.occlusion;
  bool grid = rep.rows.size() == 20 && rep.sizes == std::vector<int>{50, 100, 150, 200, 250};
  for (auto t : {data::OcclusionTarget::None, data::OcclusionTarget::Rgb, data::OcclusionTarget::Event,
                 data::OcclusionTarget::Both}) {
    for (int s : {50, 100, 150, 200, 250}) {
      try {
        grid = grid && rep.row(t, s).size == s;
      } catch (const std::exception&) {
        grid = false;
      }
    }
  }
  bool monotone = false;
  double worst = 0;
  for (const auto& tr : rep.trends) {
    if (tr.target == data::OcclusionTarget::Both) {
      monotone = tr.monotone;
      worst = tr.worst_increase;
    }
  }
  std::string both;
  for (int s : rep.sizes) both += fmt::format(" {:.2f}", rep.row(data::OcclusionTarget::Both, s).summary.miou);
  return {rgb_default && evt_default && clip && grid && monotone,
          fmt::format("defaults {}, clipping {}, grid {}, both-masked mIoU clean {:.2f} ->{} (worst rise {:.3f})",
                      rgb_default && evt_default ? "ok" : "wrong", clip ? "ok" : "wrong", grid ? "complete" : "incomplete",
                      rep.clean.miou, both, worst)};
}

Outcome toy_overfit(const ToyRun& run) {
  if (!run.ok) return {false, "toy pipeline: " + run.error};
  const double gain = run.best_miou - run.step0_miou;
  return {run.train_gacc >= 95.0 && gain >= 30.0 && run.pipeline_seconds < 600.0,
          fmt::format("train gACC {:.2f}% after 200 steps, best val mIoU {:.2f} at step {} vs {:.2f} at step 0 (+{:.2f}), "
                      "{:.0f} s",
                      run.train_gacc, run.best_miou, run.best_step, run.step0_miou, gain, run.pipeline_seconds)};
}

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::sha256_file(e.path());
  }
  return out;
}

Outcome determinism(const fs::path& scratch) {
  const std::string cfg = ESC_SOURCE_DIR "/configs/smoke.toml";
  const std::vector<std::vector<std::string>> commands = {
      {"gen-data", "-c", cfg},         {"train-dict", "-c", cfg},
      {"train", "-c", cfg},            {"eval", "-c", cfg},
      {"eval-occlusion", "-c", cfg},   {"stats-edge", "-c", cfg, "--scenes", "4"},
      {"grad-check", "-c", cfg},       {"report", "-c", cfg}};
  const fs::path run = scratch / "run";
  std::array<std::map<std::string, std::string>, 2> hashes;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(run);
    for (const auto& c : commands) {
      if (run_cli(c, run) != 0) return {false, fmt::format("`esc {}` failed on pass {}", c[0], pass + 1)};
    }
    hashes[static_cast<std::size_t>(pass)] = tree_hashes(run);
  }
  int differing = 0;
  std::string first;
  for (const auto& [path, h] : hashes[0]) {
    const auto it = hashes[1].find(path);
    if (it == hashes[1].end() || it->second != h) {
      if (differing++ == 0) first = path;
    }
  }
  differing += static_cast<int>(hashes[1].size() > hashes[0].size());
  return {differing == 0 && !hashes[0].empty(),
          differing == 0 ? fmt::format("{} artefacts from {} subcommands hash-identical across reruns", hashes[0].size(),
                                       commands.size())
                         : fmt::format("{} artefacts differ, first {}", differing, first)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path scratch = fs::temp_directory_path() / fmt::format("esc_acceptance_{}", ::getpid());
  fs::create_directories(scratch);

  const harness::RunConfig toy = harness::load_run_config(ESC_SOURCE_DIR "/configs/toy.toml");
  ToyRun toy_run;
  try {
    toy_run = toy_pipeline(scratch / "toy");
  } catch (const std::exception& e) {
    toy_run.error = e.what();
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"quantization oracle", quantization_oracle},
      {"re-coding chain", recoding_chain},
      {"analytic loss values", analytic_losses},
      {"gradient suite", gradient_suite},
      {"fusion invariants", fusion_invariants},
      {"edge/event correlation shape", [&] { return edge_shape(toy); }},
      {"event simulator", event_simulator},
      {"ISP round trip", isp_round_trip},
      {"occlusion protocol", [&] { return occlusion_protocol(toy_run); }},
      {"toy overfit sanity", [&] { return toy_overfit(toy_run); }},
      {"metrics oracle", metrics_oracle},
      {"CLI determinism", [&] { return determinism(scratch / "det"); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
