#include "esc/dataset.hpp"

#include <algorithm>
#include <cstdio>

#include <fmt/format.h>

#include "esc/container.hpp"
#include "esc/error.hpp"
#include "esc/image_io.hpp"
#include "esc/rng.hpp"

namespace esc::data {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  scene.validate();
  sim.validate();
  if (sequences < 1 || samples_per_sequence < 1) throw ConfigError("dataset needs >= 1 sequence and sample");
  if (window_us <= 0 || substeps < 1 || window_us % substeps != 0) {
    throw ConfigError("window must be positive and divisible by the substep count");
  }
  if (extra_noise_rate_hz < 0.0) throw ConfigError("noise rate must be >= 0");
}

nlohmann::json DatasetConfig::to_json() const {
  return {{"split", split},
          {"sequences", sequences},
          {"samples_per_sequence", samples_per_sequence},
          {"window_us", window_us},
          {"substeps", substeps},
          {"scene", scene.to_json()},
          {"sim",
           {{"theta_pos", sim.theta_pos},
            {"theta_neg", sim.theta_neg},
            {"sigma_theta", sim.sigma_theta},
            {"leak_rate_hz", sim.leak_rate_hz},
            {"shot_noise_rate_hz", sim.shot_noise_rate_hz},
            {"refractory_s", sim.refractory_s}}},
          {"lowlight", lowlight},
          {"lowlight_attenuation", lowlight_cfg.attenuation},
          {"lowlight_shot_noise_scale", lowlight_cfg.shot_noise_scale},
          {"extra_noise_rate_hz", extra_noise_rate_hz},
          {"seed", seed}};
}

std::string sequence_id(int index) { return fmt::format("seq{:04d}", index); }

std::uint64_t sequence_seed(const DatasetConfig& cfg, int index) {
  // FNV-1a of the split name keeps splits independent.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : cfg.split) h = (h ^ ch) * 1099511628211ULL;
  return derive_seed(cfg.seed ^ h, static_cast<std::uint64_t>(index));
}

std::vector<Sample> generate_sequence(const DatasetConfig& cfg, int index) {
  cfg.validate();
  const std::uint64_t seed = sequence_seed(cfg, index);
  SceneConfig scene = cfg.scene;
  scene.frame_dt_us = cfg.window_us / cfg.substeps;
  scene.frames = cfg.samples_per_sequence * cfg.substeps + 1;
  const ToySequence seq = generate_toy_scene(scene, seed);

  FrameSequence fs_in{seq.intensity, seq.timestamps, false};
  events::EventStream all = simulate_events(fs_in, cfg.sim, derive_seed(seed, 1));
  if (cfg.extra_noise_rate_hz > 0.0) all = inject_noise_events(all, cfg.extra_noise_rate_hz, derive_seed(seed, 2));

  std::vector<Sample> out;
  for (int i = 0; i < cfg.samples_per_sequence; ++i) {
    const auto f = static_cast<std::size_t>((i + 1) * cfg.substeps);
    const std::int64_t t1 = seq.timestamps[f];
    Sample s;
    s.id = sequence_id(index) + fmt::format("/{:06d}", i);
    s.rgb = cfg.lowlight ? lowlight_simulate(seq.rgb[f], cfg.lowlight_cfg, derive_seed(seed, 100 + i)) : seq.rgb[f];
    s.events = all.slice(t1 - cfg.window_us, t1);
    s.mask = seq.masks[f];
    out.push_back(std::move(s));
  }
  return out;
}

void write_mask_png(const fs::path& path, const events::SemanticMask& mask) {
  io::Image8 img{mask.width, mask.height, 1, mask.labels};
  io::write_png(path, img);
}

events::SemanticMask read_mask_png(const fs::path& path, int classes) {
  const io::Image8 img = io::read_png(path);
  if (img.channels != 1) throw FormatError("mask " + path.string() + " is not single-channel");
  events::SemanticMask m(img.height, img.width, 1, classes);
  m.labels = img.pixels;
  m.validate();
  return m;
}

std::vector<fs::path> write_split(const DatasetConfig& cfg) {
  cfg.validate();
  std::vector<fs::path> dirs;
  for (int s = 0; s < cfg.sequences; ++s) {
    const std::vector<Sample> samples = generate_sequence(cfg, s);
    const fs::path dir = cfg.root / cfg.split / sequence_id(s);
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");

    // The whole sequence's events go into one file.
    events::EventStream all;
    all.width = cfg.scene.width;
    all.height = cfg.scene.height;
    all.t_start = 0;
    all.t_end = cfg.window_us * cfg.samples_per_sequence;
    std::vector<std::int64_t> stamps;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& smp = samples[i];
      all.events.insert(all.events.end(), smp.events.events.begin(), smp.events.events.end());
      stamps.push_back(smp.events.t_end);
      io::write_png(dir / "frames" / fmt::format("{:06d}.png", i), io::to_image8(smp.rgb));
      write_mask_png(dir / "masks" / fmt::format("{:06d}.png", i), smp.mask);
    }
    events::write_event_file(dir / "events.evt", all);

    nlohmann::json meta = cfg.to_json();
    meta["sequence"] = sequence_id(s);
    meta["sequence_seed"] = sequence_seed(cfg, s);
    meta["width"] = cfg.scene.width;
    meta["height"] = cfg.scene.height;
    meta["classes"] = cfg.scene.classes;
    meta["t_start"] = all.t_start;
    meta["t_end"] = all.t_end;
    meta["timestamps"] = stamps;
    io::write_file(dir / "meta.json", meta.dump(2) + "\n");
    dirs.push_back(dir);
  }
  return dirs;
}

std::vector<Sample> load_sequence(const fs::path& dir) {
  const auto meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
  const int classes = meta.at("classes").get<int>();
  const auto window = meta.at("window_us").get<std::int64_t>();
  const auto stamps = meta.at("timestamps").get<std::vector<std::int64_t>>();
  const events::EventStream all =
      events::read_event_file(dir / "events.evt", meta.at("t_start").get<std::int64_t>(),
                              meta.at("t_end").get<std::int64_t>());
  std::vector<Sample> out;
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    Sample s;
    s.id = dir.filename().string() + fmt::format("/{:06d}", i);
    s.rgb = io::from_image8(io::read_png(dir / "frames" / fmt::format("{:06d}.png", i)));
    s.mask = read_mask_png(dir / "masks" / fmt::format("{:06d}.png", i), classes);
    s.events = all.slice(stamps[i] - window, stamps[i]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) throw InputError("dataset split not found: " + dir.string());
  std::vector<fs::path> seqs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) seqs.push_back(e.path());
  }
  std::sort(seqs.begin(), seqs.end());
  std::vector<Sample> out;
  for (const auto& s : seqs) {
    auto part = load_sequence(s);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  if (out.empty()) throw InputError("dataset split " + dir.string() + " holds no samples");
  return out;
}

}  // namespace esc::data
