#include "esc/config.hpp"

#include <cstdlib>
#include <sstream>
#include <variant>

#include <toml.hpp>

#include "esc/container.hpp"
#include "esc/error.hpp"

namespace esc::harness {
namespace {

using Slot = std::variant<int*, double*, bool*, std::uint64_t*, std::int64_t*, std::filesystem::path*, ScheduleKind*>;

struct Binding {
  std::string key;
  Slot slot;
};

std::vector<Binding> bindings(RunConfig& c) {
  return {
      {"paper.K", &c.paper.items},
      {"paper.n", &c.paper.dim},
      {"paper.alpha", &c.paper.alpha},
      {"paper.beta", &c.paper.beta},
      {"paper.voxel_bins", &c.paper.voxel_bins},
      {"paper.classes", &c.paper.classes},
      {"paper.crop", &c.paper.crop},
      {"paper.scale_min", &c.paper.scale_min},
      {"paper.scale_max", &c.paper.scale_max},
      {"paper.lr", &c.paper.lr},
      {"paper.decoder_lr_multiplier", &c.paper.decoder_lr_multiplier},
      {"paper.max_lr_factor", &c.paper.max_lr_factor},
      {"paper.cycle_epochs", &c.paper.cycle_epochs},
      {"paper.weight_decay", &c.paper.weight_decay},
      {"paper.epochs", &c.paper.epochs},
      {"paper.batch", &c.paper.batch},
      {"model.heads", &c.heads},
      {"augment.color_jitter", &c.augment.color_jitter},
      {"augment.hflip", &c.augment.hflip},
      {"augment.blur", &c.augment.blur},
      {"augment.resize", &c.augment.resize},
      {"augment.crop", &c.augment.crop},
      {"augment.jitter", &c.augment.jitter},
      {"augment.blur_prob", &c.augment.blur_prob},
      {"schedule.kind", &c.schedule.kind},
      {"schedule.half_cycle_steps", &c.schedule.half_cycle_steps},
      {"schedule.warmup_steps", &c.schedule.warmup_steps},
      {"schedule.power", &c.schedule.power},
      {"dict.steps", &c.dict.steps},
      {"dict.batch", &c.dict.batch},
      {"dict.lr", &c.dict.lr},
      {"dict.crop", &c.dict.crop},
      {"dict.crops_per_sample", &c.dict.crops_per_sample},
      {"data.train_sequences", &c.data.train_sequences},
      {"data.val_sequences", &c.data.val_sequences},
      {"data.test_sequences", &c.data.test_sequences},
      {"data.samples_per_sequence", &c.data.samples_per_sequence},
      {"data.window_us", &c.data.window_us},
      {"data.substeps", &c.data.substeps},
      {"data.width", &c.data.width},
      {"data.height", &c.data.height},
      {"data.lowlight", &c.data.lowlight},
      {"data.extra_noise_rate_hz", &c.data.extra_noise_rate_hz},
      {"sim.theta_pos", &c.data.sim.theta_pos},
      {"sim.theta_neg", &c.data.sim.theta_neg},
      {"sim.sigma_theta", &c.data.sim.sigma_theta},
      {"sim.leak_rate_hz", &c.data.sim.leak_rate_hz},
      {"sim.shot_noise_rate_hz", &c.data.sim.shot_noise_rate_hz},
      {"sim.refractory_s", &c.data.sim.refractory_s},
      {"run.seed", &c.seed},
      {"run.steps", &c.steps},
      {"run.val_every", &c.val_every},
      {"run.val_samples", &c.val_samples},
      {"run.data_root", &c.data_root},
      {"run.ckpt_dir", &c.ckpt_dir},
      {"run.out_dir", &c.out_dir},
  };
}

Binding* find_binding(std::vector<Binding>& bs, const std::string& key) {
  for (auto& b : bs) {
    if (b.key == key) return &b;
  }
  return nullptr;
}

[[noreturn]] void type_error(const std::string& key, const char* want) {
  throw ConfigError("config key '" + key + "' expects " + want);
}

void assign(const Binding& b, const toml::node& node) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          auto v = node.value<bool>();
          if (!v) type_error(b.key, "a boolean");
          *p = *v;
        } else if constexpr (std::is_same_v<T, double>) {
          auto v = node.value<double>();  // accepts integers too
          if (!v) type_error(b.key, "a number");
          *p = *v;
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
          auto v = node.value<std::string>();
          if (!v) type_error(b.key, "a string");
          *p = *v;
        } else if constexpr (std::is_same_v<T, ScheduleKind>) {
          auto v = node.value<std::string>();
          if (!v) type_error(b.key, "a string");
          *p = parse_schedule(*v);
        } else {
          if (!node.is_integer()) type_error(b.key, "an integer");
          const std::int64_t v = *node.value<std::int64_t>();
          if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (v < 0) type_error(b.key, "a non-negative integer");
          }
          *p = static_cast<T>(v);
        }
      },
      b.slot);
}

void walk(const toml::table& t, const std::string& prefix, std::vector<Binding>& bs, const std::string& origin) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      walk(*sub, key, bs, origin);
      continue;
    }
    Binding* b = find_binding(bs, key);
    if (!b) throw ConfigError(origin + ": unknown config key '" + key + "'");
    assign(*b, node);
  }
}

}  // namespace

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Cyclic: return "cyclic";
    case ScheduleKind::WarmupPoly: return "warmup_poly";
  }
  return "?";
}

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "cyclic") return ScheduleKind::Cyclic;
  if (s == "warmup_poly") return ScheduleKind::WarmupPoly;
  throw ConfigError("unknown schedule kind '" + s + "' (constant, cyclic, warmup_poly)");
}

void RunConfig::validate() const {
  if (paper.items < 2 || paper.dim < 8 || paper.dim % 8 != 0) throw ConfigError("paper.K >= 2 and paper.n a multiple of 8 required");
  if (heads < 1 || paper.dim % heads != 0) throw ConfigError("model.heads must divide paper.n");
  if (paper.alpha < 0 || paper.beta < 0) throw ConfigError("paper.alpha and paper.beta must be >= 0");
  if (paper.classes < 2 || paper.classes > 254) throw ConfigError("paper.classes must be in 2..254");
  if (paper.crop < 32 || paper.crop % 32 != 0) throw ConfigError("paper.crop must be a positive multiple of 32");
  if (!(paper.scale_min > 0 && paper.scale_min <= paper.scale_max)) throw ConfigError("need 0 < scale_min <= scale_max");
  if (paper.lr <= 0 || paper.max_lr_factor < 1.0 || paper.decoder_lr_multiplier <= 0) {
    throw ConfigError("learning rates must be positive and max_lr_factor >= 1");
  }
  if (paper.batch < 1 || paper.epochs < 0 || steps < 0) throw ConfigError("batch >= 1, epochs and steps >= 0 required");
  if (paper.cycle_epochs < 1) throw ConfigError("paper.cycle_epochs must be >= 1");
  if (augment.jitter < 0 || augment.jitter >= 1 || augment.blur_prob < 0 || augment.blur_prob > 1) {
    throw ConfigError("augment.jitter in [0, 1) and augment.blur_prob in [0, 1] required");
  }
  if (dict.steps < 0 || dict.batch < 1 || dict.lr <= 0 || dict.crop < 4 || dict.crop % 4 != 0 || dict.crops_per_sample < 1) {
    throw ConfigError("invalid [dict] section");
  }
  if (val_every < 0 || val_samples < 0) throw ConfigError("run.val_every and run.val_samples must be >= 0");
  for (const auto& split : {"train", "val", "test"}) dataset_config(split).validate();
}

nlohmann::json RunConfig::to_json() const {
  RunConfig copy = *this;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& b : bindings(copy)) {
    const auto dot = b.key.find('.');
    auto& slot = j[b.key.substr(0, dot)][b.key.substr(dot + 1)];
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::filesystem::path>) {
            slot = p->generic_string();
          } else if constexpr (std::is_same_v<T, ScheduleKind>) {
            slot = to_string(*p);
          } else {
            slot = *p;
          }
        },
        b.slot);
  }
  return j;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.items = paper.items;
  m.dim = paper.dim;
  m.heads = heads;
  m.classes = paper.classes;
  m.beta = paper.beta;
  m.encoder.dim = paper.dim;
  m.encoder.voxel_bins = paper.voxel_bins;
  return m;
}

dict::DictConfig RunConfig::dict_config() const { return {paper.items, paper.dim, paper.alpha}; }

data::DatasetConfig RunConfig::dataset_config(const std::string& split) const {
  data::DatasetConfig d;
  d.root = data_root;
  d.split = split;
  d.sequences = split == "train" ? data.train_sequences : split == "val" ? data.val_sequences : data.test_sequences;
  d.samples_per_sequence = data.samples_per_sequence;
  d.window_us = data.window_us;
  d.substeps = data.substeps;
  d.scene.width = data.width;
  d.scene.height = data.height;
  d.scene.classes = paper.classes;
  d.sim = data.sim;
  d.lowlight = data.lowlight;
  d.extra_noise_rate_hz = data.extra_noise_rate_hz;
  d.seed = seed;
  return d;
}

RunConfig parse_run_config(const std::string& toml_text, const std::string& origin) {
  toml::table t;
  try {
    t = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ": " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  RunConfig cfg;
  auto bs = bindings(cfg);
  walk(t, "", bs, origin);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_run_config(io::read_file(path), path.string());
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  RunConfig cfg = base;
  auto bs = bindings(cfg);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: '" + a + "'");
    const std::string key = a.substr(0, eq);
    const std::string value = a.substr(eq + 1);
    Binding* b = find_binding(bs, key);
    if (!b) throw ConfigError("unknown config key '" + key + "'");
    toml::table parsed;
    try {
      parsed = toml::parse("v = " + value);
    } catch (const toml::parse_error&) {
      parsed = toml::table{{"v", value}};
    }
    assign(*b, *parsed.get("v"));
  }
  cfg.validate();
  return cfg;
}

void apply_environment(RunConfig& cfg) {
  if (const char* d = std::getenv("ESC_DATA_ROOT"); d && *d) cfg.data_root = d;
  if (const char* c = std::getenv("ESC_CKPT_DIR"); c && *c) cfg.ckpt_dir = c;
}

}  // namespace esc::harness
