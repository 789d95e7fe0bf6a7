#include "cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "esc/config.hpp"
#include "esc/container.hpp"
#include "esc/error.hpp"
#include "esc/evaluate.hpp"
#include "esc/gradcheck.hpp"
#include "esc/report.hpp"
#include "esc/train.hpp"

namespace esc::cli {
namespace fs = std::filesystem;
using harness::RunConfig;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string data_root, ckpt_dir, out_dir;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "TOML run configuration");
    app->add_option("--set", overrides, "Override a config key, e.g. --set paper.beta=0")->take_all();
    app->add_option("--seed", seed, "Run seed (run.seed)");
    app->add_option("--data-root", data_root, "Dataset root (run.data_root)");
    app->add_option("--ckpt-dir", ckpt_dir, "Checkpoint directory (run.ckpt_dir)");
    app->add_option("--out", out_dir, "Artefact directory (run.out_dir)");
  }

  // Precedence: defaults < file < environment < --set < dedicated flags.
  [[nodiscard]] RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : harness::load_run_config(config);
    harness::apply_environment(cfg);
    cfg = harness::apply_overrides(cfg, overrides);
    if (seed) cfg.seed = *seed;
    if (!data_root.empty()) cfg.data_root = data_root;
    if (!ckpt_dir.empty()) cfg.ckpt_dir = ckpt_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  io::write_file(p, text);
  spdlog::info("wrote {}", p.string());
}

std::vector<data::Sample> load_limited(const RunConfig& cfg, const std::string& split, int limit) {
  auto samples = data::load_split(cfg.data_root, split);
  if (limit > 0 && static_cast<std::size_t>(limit) < samples.size()) samples.resize(static_cast<std::size_t>(limit));
  spdlog::info("loaded {} samples from {}/{}", samples.size(), cfg.data_root.string(), split);
  return samples;
}

struct ModelArgs {
  std::string model, dict;
  void attach(CLI::App* app) {
    app->add_option("--model", model, "Segmentation checkpoint (default <ckpt_dir>/best.ckpt)");
    app->add_option("--dict", dict, "Dictionary checkpoint (default <ckpt_dir>/dict.ckpt)");
  }
  [[nodiscard]] LoadedModel load(const RunConfig& cfg) const {
    const fs::path dict_path = dict.empty() ? cfg.ckpt_dir / "dict.ckpt" : fs::path(dict);
    const fs::path model_path = model.empty() ? cfg.ckpt_dir / "best.ckpt" : fs::path(model);
    auto d = harness::load_frozen_dictionary(dict_path);
    if (!fs::exists(model_path)) throw InputError("model checkpoint not found: " + model_path.string());
    auto loaded = load_model(model_path, d);
    if (loaded.dictionary_sha256 != io::sha256_file(dict_path)) {
      throw InputError("model " + model_path.string() + " was trained against a different dictionary");
    }
    return loaded;
  }
};

data::Rect parse_rect(const std::string& s) {
  data::Rect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream is(s);
  if (!(is >> r.x0 >> c1 >> r.y0 >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',' || r.w <= 0 ||
      r.h <= 0) {
    throw ConfigError("--mask-rect expects x,y,w,h with positive size, got '" + s + "'");
  }
  return r;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Edge-aware RGB/event semantic segmentation toolkit", "esc"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  Common common;
  std::vector<std::string> splits{"train", "val", "test"};
  auto* gen = app.add_subcommand("gen-data", "Generate toy RGB/event/label splits");
  common.attach(gen);
  gen->add_option("--splits", splits, "Splits to write")->delimiter(',');

  auto* tdict = app.add_subcommand("train-dict", "Train and freeze the edge dictionary");
  common.attach(tdict);

  auto* train = app.add_subcommand("train", "Train the segmentation model against a frozen dictionary");
  common.attach(train);
  std::string dict_path, resume;
  int stop_after = -1;
  train->add_option("--dict", dict_path, "Dictionary checkpoint (default <ckpt_dir>/dict.ckpt)");
  train->add_option("--resume", resume, "Continue from a last.ckpt");
  train->add_option("--stop-after", stop_after, "Stop after this many completed steps");

  ModelArgs model_args;
  std::string split = "test";
  int limit = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, optionally under occlusion");
  common.attach(eval);
  model_args.attach(eval);
  eval->add_option("--split", split, "Dataset split");
  eval->add_option("--limit", limit, "Evaluate only the first N samples");
  bool mask_rgb = false, mask_event = false;
  std::string mask_rect;
  int mask_size = data::kDefaultOcclusionSize;
  eval->add_flag("--mask-rgb", mask_rgb, "Occlude the RGB frame");
  eval->add_flag("--mask-event", mask_event, "Drop events inside the occluder");
  eval->add_option("--mask-rect", mask_rect, "Occluder x,y,w,h (default: per-modality position)");
  eval->add_option("--mask-size", mask_size, "Side of the default occluders");

  double tolerance = 0.5;
  auto* occ = app.add_subcommand("eval-occlusion", "Occlusion sweep: {none,rgb,event,both} x sizes 50..250");
  common.attach(occ);
  model_args.attach(occ);
  occ->add_option("--split", split, "Dataset split");
  occ->add_option("--limit", limit, "Evaluate only the first N samples");
  occ->add_option("--tolerance", tolerance, "Monotonicity band in mIoU points");

  int scenes = 50, max_iters = 10;
  auto* stats = app.add_subcommand("stats-edge", "Edge pixel ratio vs edge event ratio on toy scenes");
  common.attach(stats);
  stats->add_option("--scenes", scenes, "Number of generated scenes");
  stats->add_option("--max-iters", max_iters, "Largest dilation iteration count");

  harness::GradCheckOptions gopts;
  auto* grad = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  common.attach(grad);
  grad->add_option("--tolerance", gopts.tolerance, "Maximum relative error");
  grad->add_option("--step", gopts.step, "Initial finite-difference step");
  grad->add_option("--entries", gopts.max_entries_per_tensor, "Probed entries per tensor");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize artefacts into report.md / report.json");
  common.attach(report);
  report->add_option("--in", report_dir, "Artefact directory (default run.out_dir)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return kExitOk;
    }
    std::cerr << app.help() << "\n";
    app.exit(e);
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    const RunConfig cfg = common.resolve();
    if (gen->parsed()) {
      for (const auto& s : splits) {
        const auto dirs = data::write_split(cfg.dataset_config(s));
        spdlog::info("split {}: {} sequences under {}", s, dirs.size(), (cfg.data_root / s).string());
      }
      write_text(cfg.data_root / "config.json", cfg.to_json().dump(2) + "\n");
    } else if (tdict->parsed()) {
      const auto train_set = data::load_split(cfg.data_root, "train");
      const auto res = harness::train_dictionary_stage(cfg, train_set);
      nlohmann::json j = {{"checkpoint", res.checkpoint.filename().string()},
                          {"sha256", res.sha256},
                          {"steps", res.curve.size()},
                          {"final_loss", res.curve.empty() ? 0.0 : res.curve.back().total}};
      write_text(cfg.out_dir / "dict_summary.json", j.dump(2) + "\n");
    } else if (train->parsed()) {
      const auto train_set = data::load_split(cfg.data_root, "train");
      const auto val_set = data::load_split(cfg.data_root, "val");
      harness::SegTrainOptions o;
      o.dictionary = dict_path.empty() ? cfg.ckpt_dir / "dict.ckpt" : fs::path(dict_path);
      if (!resume.empty()) o.resume = resume;
      o.stop_after = stop_after;
      const auto res = harness::train_segmentation(cfg, train_set, val_set, o);
      nlohmann::json j = {{"steps", res.steps.empty() ? 0 : res.steps.back().step},
                          {"best_miou", res.best_miou},
                          {"best_step", res.best_step},
                          {"step0_miou", res.validation.empty() ? 0.0 : res.validation.front().miou},
                          {"final_loss", res.steps.empty() ? 0.0 : res.steps.back().total},
                          {"config", cfg.to_json()}};
      write_text(cfg.out_dir / "train_summary.json", j.dump(2) + "\n");
    } else if (eval->parsed()) {
      const auto loaded = model_args.load(cfg);
      const auto samples = load_limited(cfg, split, limit);
      std::vector<data::OcclusionSpec> specs;
      for (auto [on, target] : {std::pair{mask_rgb, data::OcclusionTarget::Rgb}, std::pair{mask_event, data::OcclusionTarget::Event}}) {
        if (!on) continue;
        data::OcclusionSpec s = target == data::OcclusionTarget::Rgb ? data::default_rgb_occlusion(mask_size)
                                                                      : data::default_event_occlusion(mask_size);
        if (!mask_rect.empty()) s.rect = parse_rect(mask_rect);
        specs.push_back(s);
      }
      if (!mask_rect.empty() && specs.empty()) throw ConfigError("--mask-rect needs --mask-rgb and/or --mask-event");
      const auto r = harness::evaluate(loaded.model, samples, specs);
      nlohmann::json j = harness::to_json(r);
      j["split"] = split;
      nlohmann::json occl = nlohmann::json::array();
      for (const auto& s : specs) {
        occl.push_back({{"target", data::to_string(s.target)}, {"rect", {s.rect.x0, s.rect.y0, s.rect.w, s.rect.h}}});
      }
      j["occlusion"] = occl;
      write_text(cfg.out_dir / "eval.json", j.dump(2) + "\n");
      std::cout << fmt::format("gACC {:.2f}  mACC {:.2f}  mIoU {:.2f}  ({} evaluated, {} skipped)\n", r.summary.gacc,
                               r.summary.macc, r.summary.miou, r.evaluated, r.skipped);
    } else if (occ->parsed()) {
      const auto loaded = model_args.load(cfg);
      const auto samples = load_limited(cfg, split, limit);
      const auto rep = harness::occlusion_sweep(loaded.model, samples, tolerance);
      write_text(cfg.out_dir / "occlusion.json", harness::to_json(rep).dump(2) + "\n");
      write_text(cfg.out_dir / "occlusion.csv", harness::degradation_csv(rep));
      write_text(cfg.out_dir / "occlusion.svg", harness::degradation_svg(rep));
      std::cout << harness::degradation_csv(rep);
    } else if (stats->parsed()) {
      const auto st = harness::edge_statistics(cfg, scenes, max_iters);
      write_text(cfg.out_dir / "edge_stats.json", harness::to_json(st).dump(2) + "\n");
      write_text(cfg.out_dir / "edge_stats.csv", harness::edge_stats_csv(st));
      write_text(cfg.out_dir / "edge_stats.svg", harness::edge_stats_svg(st));
      std::cout << fmt::format("mean gap {:.4f}, concave {}\n", st.mean_gap, st.concave ? "yes" : "no");
    } else if (grad->parsed()) {
      gopts.seed = cfg.seed;
      const auto rep = harness::run_grad_check(gopts);
      write_text(cfg.out_dir / "gradcheck.json", rep.to_json().dump(2) + "\n");
      for (const auto& [k, v] : rep.max_rel_error) std::cout << fmt::format("{:<14} {:.3e}\n", k, v);
      for (const auto& [k, v] : rep.contracts) std::cout << fmt::format("{:<40} {}\n", k, v ? "ok" : "FAILED");
      if (!rep.passed()) {
        spdlog::error("gradient check failed (tolerance {:g})", gopts.tolerance);
        return kExitRuntime;
      }
    } else if (report->parsed()) {
      const fs::path dir = report_dir.empty() ? cfg.out_dir : fs::path(report_dir);
      harness::write_report(dir);
      spdlog::info("wrote {}", (dir / "report.md").string());
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace esc::cli
