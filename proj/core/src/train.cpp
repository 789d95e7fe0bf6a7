#include "esc/train.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "esc/container.hpp"
#include "esc/error.hpp"
#include "esc/rng.hpp"

namespace esc::harness {
namespace fs = std::filesystem;
namespace {

events::SemanticMask resize_nearest(const events::SemanticMask& m, int h, int w) {
  events::SemanticMask out(h, w, events::kIgnoreLabel, m.classes);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / h));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / w));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

// Window [y0, y0+h) x [x0, x0+w); outside the source reads as zero.
Tensor crop_tensor(const Tensor& t, int y0, int x0, int h, int w) {
  Tensor out({t.channels(), h, w});
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = y0 + y;
      if (sy < 0 || sy >= t.height()) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x0 + x;
        if (sx >= 0 && sx < t.width()) out.at(c, y, x) = t.at(c, sy, sx);
      }
    }
  }
  return out;
}

events::SemanticMask crop_mask(const events::SemanticMask& m, int y0, int x0, int h, int w) {
  events::SemanticMask out(h, w, events::kIgnoreLabel, m.classes);
  for (int y = 0; y < h; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= m.height) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x0 + x;
      if (sx >= 0 && sx < m.width) out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

void flip_tensor(Tensor& t) {
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width() / 2; ++x) std::swap(t.at(c, y, x), t.at(c, y, t.width() - 1 - x));
    }
  }
}

// Separable [1 2 1] / 4 blur with clamped borders.
void blur3(Tensor& t) {
  const int h = t.height(), w = t.width();
  Tensor tmp = t;
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        tmp.at(c, y, x) = 0.25 * t.at(c, y, std::max(0, x - 1)) + 0.5 * t.at(c, y, x) + 0.25 * t.at(c, y, std::min(w - 1, x + 1));
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        t.at(c, y, x) = 0.25 * tmp.at(c, std::max(0, y - 1), x) + 0.5 * tmp.at(c, y, x) + 0.25 * tmp.at(c, std::min(h - 1, y + 1), x);
      }
    }
  }
}

void color_jitter(Tensor& rgb, double strength, Rng& rng) {
  const double brightness = uniform(rng, 1.0 - strength, 1.0 + strength);
  const double contrast = uniform(rng, 1.0 - strength, 1.0 + strength);
  const double saturation = uniform(rng, 1.0 - strength, 1.0 + strength);
  const int cells = rgb.cells();
  double mean = 0.0;
  for (std::size_t i = 0; i < rgb.size(); ++i) mean += rgb[i];
  mean = brightness * mean / static_cast<double>(rgb.size());
  double* r = rgb.data();
  double* g = r + cells;
  double* b = g + cells;
  for (int i = 0; i < cells; ++i) {
    double px[3] = {r[i] * brightness, g[i] * brightness, b[i] * brightness};
    const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    for (double& v : px) {
      v = gray + (v - gray) * saturation;
      v = std::clamp(mean + (v - mean) * contrast, 0.0, 1.0);
    }
    r[i] = px[0];
    g[i] = px[1];
    b[i] = px[2];
  }
}

nlohmann::json logs_json(const std::vector<StepLog>& steps, const std::vector<ValLog>& val) {
  nlohmann::json s = nlohmann::json::array(), v = nlohmann::json::array();
  for (const auto& l : steps) s.push_back({l.step, l.lr, l.total, l.pred, l.edge, l.pixel_accuracy});
  for (const auto& l : val) v.push_back({l.step, l.miou, l.gacc, l.macc});
  return {{"steps", s}, {"validation", v}};
}

void logs_from_json(const nlohmann::json& j, std::vector<StepLog>& steps, std::vector<ValLog>& val) {
  for (const auto& r : j.at("steps")) {
    steps.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(), r[4].get<double>(),
                     r[5].get<double>()});
  }
  for (const auto& r : j.at("validation")) {
    val.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()});
  }
}

}  // namespace

TrainExample augment(const Tensor& rgb, const Tensor& voxels, const events::SemanticMask& mask, const RunConfig& cfg,
                     int multiple, Rng& rng) {
  const auto& a = cfg.augment;
  TrainExample ex{rgb, voxels, mask};
  if (a.resize) {
    const double s = uniform(rng, cfg.paper.scale_min, cfg.paper.scale_max);
    const int h = std::max(1, static_cast<int>(std::lround(mask.height * s)));
    const int w = std::max(1, static_cast<int>(std::lround(mask.width * s)));
    ex.image = ag::resize_bilinear(ex.image, h, w);
    ex.voxels = ag::resize_bilinear(ex.voxels, h, w);
    ex.mask = resize_nearest(ex.mask, h, w);
  }
  const int h = ex.mask.height, w = ex.mask.width;
  int ch = round_up(h, multiple), cw = round_up(w, multiple);
  int y0 = 0, x0 = 0;
  if (a.crop) {
    ch = cw = cfg.paper.crop;
    y0 = h > ch ? uniform_int(rng, 0, h - ch) : 0;
    x0 = w > cw ? uniform_int(rng, 0, w - cw) : 0;
  }
  if (ch != h || cw != w || y0 != 0 || x0 != 0) {
    ex.image = crop_tensor(ex.image, y0, x0, ch, cw);
    ex.voxels = crop_tensor(ex.voxels, y0, x0, ch, cw);
    ex.mask = crop_mask(ex.mask, y0, x0, ch, cw);
  }
  if (a.hflip && uniform(rng) < 0.5) {
    flip_tensor(ex.image);
    flip_tensor(ex.voxels);
    for (int y = 0; y < ex.mask.height; ++y) {
      auto row = ex.mask.labels.begin() + static_cast<std::ptrdiff_t>(y) * ex.mask.width;
      std::reverse(row, row + ex.mask.width);
    }
  }
  if (a.blur && uniform(rng) < a.blur_prob) blur3(ex.image);
  if (a.color_jitter && a.jitter > 0) color_jitter(ex.image, a.jitter, rng);
  return ex;
}

std::vector<events::BoundaryMap> boundary_crops(std::span<const data::Sample> samples, int crop, int per_sample,
                                                std::uint64_t seed) {
  std::vector<events::BoundaryMap> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const events::BoundaryMap full = events::extract_boundary(samples[i].mask);
    Rng rng = make_rng(seed, 0xb0c0000ULL + i);
    for (int k = 0; k < per_sample; ++k) {
      const int y0 = full.height > crop ? uniform_int(rng, 0, full.height - crop) : 0;
      const int x0 = full.width > crop ? uniform_int(rng, 0, full.width - crop) : 0;
      events::BoundaryMap b(crop, crop);
      for (int y = 0; y < crop && y0 + y < full.height; ++y) {
        for (int x = 0; x < crop && x0 + x < full.width; ++x) b.at(y, x) = full.at(y0 + y, x0 + x);
      }
      out.push_back(std::move(b));
    }
  }
  return out;
}

DictStageResult train_dictionary_stage(const RunConfig& cfg, std::span<const data::Sample> train) {
  if (train.empty()) throw InputError("dictionary stage: training split is empty");
  const auto crops = boundary_crops(train, cfg.dict.crop, cfg.dict.crops_per_sample, derive_seed(cfg.seed, 0xd1c7));
  dict::DictTrainConfig tc;
  tc.dict = cfg.dict_config();
  tc.steps = cfg.dict.steps;
  tc.batch = cfg.dict.batch;
  tc.lr = cfg.dict.lr;
  tc.weight_decay = cfg.paper.weight_decay;
  tc.seed = derive_seed(cfg.seed, 0xd1c0);
  spdlog::info("dictionary stage: {} boundary crops, {} steps, K={} n={}", crops.size(), tc.steps, tc.dict.items,
               tc.dict.dim);
  auto res = dict::train_dictionary(crops, tc, [&](int step, const dict::DictTrainStep& s) {
    if (step % 50 == 0 || step + 1 == tc.steps) {
      spdlog::info("dict step {:>5}: total {:.5f} recon {:.5f} embed {:.5f} commit {:.5f}", step, s.total,
                   s.reconstruction, s.embedding, s.commitment);
    }
  });
  res.dictionary.freeze();
  fs::create_directories(cfg.ckpt_dir);
  fs::create_directories(cfg.out_dir);
  DictStageResult out;
  out.checkpoint = cfg.ckpt_dir / "dict.ckpt";
  res.dictionary.save(out.checkpoint);
  out.sha256 = io::sha256_file(out.checkpoint);
  out.curve = std::move(res.curve);
  std::string csv = "step,total,reconstruction,embedding,commitment\n";
  for (std::size_t i = 0; i < out.curve.size(); ++i) {
    const auto& s = out.curve[i];
    csv += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", i, s.total, s.reconstruction, s.embedding, s.commitment);
  }
  io::write_file(cfg.out_dir / "dict_log.csv", csv);
  return out;
}

std::shared_ptr<const dict::EdgeDictionary> load_frozen_dictionary(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("dictionary checkpoint not found: " + path.string() + " (run train-dict first)");
  auto d = dict::EdgeDictionary::load(path);
  d.freeze();
  return std::make_shared<const dict::EdgeDictionary>(std::move(d));
}

int steps_per_epoch(const RunConfig& cfg, std::size_t n) {
  return std::max(1, static_cast<int>((n + cfg.paper.batch - 1) / cfg.paper.batch));
}

int total_steps(const RunConfig& cfg, std::size_t n) {
  return cfg.steps > 0 ? cfg.steps : cfg.paper.epochs * steps_per_epoch(cfg, n);
}

double learning_rate(const RunConfig& cfg, int step, std::size_t n) {
  switch (cfg.schedule.kind) {
    case ScheduleKind::Constant: return cfg.paper.lr;
    case ScheduleKind::Cyclic: {
      const long half = cfg.schedule.half_cycle_steps > 0
                            ? cfg.schedule.half_cycle_steps
                            : std::max(1L, static_cast<long>(cfg.paper.cycle_epochs) * steps_per_epoch(cfg, n) / 2);
      return nn::cyclic_lr(step, cfg.paper.lr, cfg.paper.lr * cfg.paper.max_lr_factor, half);
    }
    case ScheduleKind::WarmupPoly:
      return nn::warmup_poly_lr(step, cfg.paper.lr, cfg.schedule.warmup_steps, total_steps(cfg, n), cfg.schedule.power);
  }
  return cfg.paper.lr;
}

SegTrainResult train_segmentation(const RunConfig& cfg, std::span<const data::Sample> train,
                                  std::span<const data::Sample> val, const SegTrainOptions& opts) {
  if (train.empty()) throw InputError("train: training split is empty");
  if (val.empty()) throw InputError("train: validation split is empty");
  auto dictionary = load_frozen_dictionary(opts.dictionary);
  const std::string dict_sha = io::sha256_file(opts.dictionary);
  const ModelConfig mc = cfg.model_config();
  const int multiple = mc.encoder.input_multiple;
  const std::size_t n = train.size();
  const int steps = total_steps(cfg, n);
  const int val_every = cfg.val_every > 0 ? cfg.val_every : steps_per_epoch(cfg, n);
  const auto val_set = val.subspan(0, cfg.val_samples > 0 ? std::min<std::size_t>(cfg.val_samples, val.size()) : val.size());

  // Voxel grids are fixed per sample; only the geometry is augmented.
  std::vector<Tensor> voxels;
  voxels.reserve(n);
  for (const auto& s : train) {
    if (s.rgb.height() != s.mask.height || s.rgb.width() != s.mask.width || s.events.height != s.mask.height ||
        s.events.width != s.mask.width) {
      throw InputError("train: sample " + s.id + " has mismatched modalities");
    }
    voxels.push_back(events::build_voxel_grid(s.events, mc.encoder.voxel_bins).data);
  }

  SegTrainResult res;
  int start = 0;
  std::unique_ptr<EscModel> model;
  nn::AdamWConfig oc;
  oc.lr = cfg.paper.lr;
  oc.weight_decay = cfg.paper.weight_decay;
  oc.group_lr_multiplier["decoder"] = cfg.paper.decoder_lr_multiplier;
  std::unique_ptr<nn::AdamW> opt;

  if (opts.resume) {
    auto loaded = load_model(*opts.resume, dictionary);
    if (loaded.dictionary_sha256 != dict_sha) throw InputError("resume: checkpoint was trained against another dictionary");
    model = std::make_unique<EscModel>(std::move(loaded.model));
    opt = std::make_unique<nn::AdamW>(model->params(), oc);
    const auto& meta = loaded.extra.meta;
    start = meta.at("completed_steps").get<int>();
    opt->set_steps(meta.at("optimizer_steps").get<long>());
    res.best_miou = meta.at("best_miou").get<double>();
    res.best_step = meta.at("best_step").get<int>();
    logs_from_json(meta.at("logs"), res.steps, res.validation);
    auto& m = opt->first_moments();
    auto& v = opt->second_moments();
    for (const auto& [name, t] : loaded.extra.extra) {
      const auto slash = name.find('/');
      const auto idx = static_cast<std::size_t>(std::stoul(name.substr(slash + 1)));
      auto& dst = name.rfind("adam_m/", 0) == 0 ? m : v;
      if (idx >= dst.size() || !dst[idx].same_shape(t)) throw FormatError("resume: optimizer state does not match the model");
      dst[idx] = t;
    }
    spdlog::info("resuming from {} at step {}", opts.resume->string(), start);
  } else {
    model = std::make_unique<EscModel>(mc, dictionary, derive_seed(cfg.seed, 0x30));
    opt = std::make_unique<nn::AdamW>(model->params(), oc);
  }

  fs::create_directories(cfg.ckpt_dir);
  fs::create_directories(cfg.out_dir);
  res.best = cfg.ckpt_dir / "best.ckpt";
  res.last = cfg.ckpt_dir / "last.ckpt";
  res.initial = cfg.ckpt_dir / "step0.ckpt";

  auto snapshot = [&](int completed, bool with_optimizer) {
    SegCheckpoint ck;
    ck.meta["completed_steps"] = completed;
    ck.meta["optimizer_steps"] = opt->steps();
    ck.meta["best_miou"] = res.best_miou;
    ck.meta["best_step"] = res.best_step;
    ck.meta["run_config"] = cfg.to_json();
    if (with_optimizer) {
      ck.meta["logs"] = logs_json(res.steps, res.validation);
      for (std::size_t i = 0; i < opt->first_moments().size(); ++i) {
        ck.extra.emplace_back("adam_m/" + std::to_string(i), opt->first_moments()[i]);
        ck.extra.emplace_back("adam_v/" + std::to_string(i), opt->second_moments()[i]);
      }
    }
    return ck;
  };
  auto validate = [&](int completed) {
    const EvalResult r = evaluate(*model, val_set);
    res.validation.push_back({completed, r.summary.miou, r.summary.gacc, r.summary.macc});
    spdlog::info("val @ {:>5}: mIoU {:.2f} gACC {:.2f} mACC {:.2f}", completed, r.summary.miou, r.summary.gacc,
                 r.summary.macc);
    if (completed == 0 || r.summary.miou > res.best_miou) {
      res.best_miou = r.summary.miou;
      res.best_step = completed;
      save_model(res.best, *model, dict_sha, snapshot(completed, false));
    }
  };

  if (start == 0) {
    save_model(res.initial, *model, dict_sha, snapshot(0, false));
    validate(0);
  }

  const double beta = cfg.paper.beta;
  for (int step = start; step < steps; ++step) {
    Rng rng = make_rng(cfg.seed, 0x7a170000ULL + static_cast<std::uint64_t>(step));
    const double lr = learning_rate(cfg, step, n);
    model->params().zero_grad();
    StepLog log{step + 1, lr, 0, 0, 0, 0};
    ag::Var total;
    std::uint64_t correct = 0, counted = 0;
    for (int b = 0; b < cfg.paper.batch; ++b) {
      const auto idx = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1));
      const TrainExample ex = augment(train[idx].rgb, voxels[idx], train[idx].mask, cfg, multiple, rng);
      const ModelOutput out = model->forward(ex.image, ex.voxels);
      const LossBreakdown l = model->loss(out, ex.mask, beta);
      total = total.defined() ? ag::add(total, l.total) : l.total;
      log.pred += l.pred.item() / cfg.paper.batch;
      log.edge += l.edge.item() / cfg.paper.batch;
      const dict::KeyGrid arg = elr::key_map(out.logits.value());
      for (std::size_t i = 0; i < arg.keys.size(); ++i) {
        const auto gt = ex.mask.labels[i];
        if (gt == events::kIgnoreLabel) continue;
        ++counted;
        correct += (arg.keys[i] + 1 == gt);
      }
    }
    total = ag::scale(total, 1.0 / cfg.paper.batch);
    log.total = total.item();
    log.pixel_accuracy = counted ? 100.0 * static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    if (!std::isfinite(log.total)) {
      throw DivergenceError(fmt::format("segmentation training diverged at step {}: total {} (pred {}, edge {}), lr {}",
                                        step + 1, log.total, log.pred, log.edge, lr));
    }
    ag::backward(total);
    opt->step(lr);
    res.steps.push_back(log);
    if (step % 10 == 0 || step + 1 == steps) {
      spdlog::info("step {:>5}/{}: lr {:.3g} loss {:.4f} (pred {:.4f} edge {:.4f}) acc {:.1f}%", step + 1, steps, lr,
                   log.total, log.pred, log.edge, log.pixel_accuracy);
    }
    const int completed = step + 1;
    const bool interrupt = opts.stop_after >= 0 && completed >= opts.stop_after;
    if (completed % val_every == 0 || completed == steps) validate(completed);
    if (completed % val_every == 0 || completed == steps || interrupt) {
      save_model(res.last, *model, dict_sha, snapshot(completed, true));
    }
    if (interrupt) break;
  }

  std::string csv = "step,lr,total,pred,edge,pixel_accuracy\n";
  for (const auto& l : res.steps) {
    csv += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.6f}\n", l.step, l.lr, l.total, l.pred, l.edge, l.pixel_accuracy);
  }
  io::write_file(cfg.out_dir / "train_log.csv", csv);
  std::string vcsv = "step,miou,gacc,macc\n";
  for (const auto& l : res.validation) vcsv += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", l.step, l.miou, l.gacc, l.macc);
  io::write_file(cfg.out_dir / "val_log.csv", vcsv);
  return res;
}

}  // namespace esc::harness
