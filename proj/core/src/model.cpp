#include "esc/model.hpp"

#include "esc/container.hpp"
#include "esc/error.hpp"

namespace esc {

nlohmann::json ModelConfig::to_json() const {
  const auto& e = encoder;
  return {{"K", items},
          {"n", dim},
          {"heads", heads},
          {"classes", classes},
          {"beta", beta},
          {"encoder",
           {{"image_widths", e.image_widths},
            {"event_widths", e.event_widths},
            {"depths", e.depths},
            {"image_channels", e.image_channels},
            {"voxel_bins", e.voxel_bins},
            {"input_multiple", e.input_multiple}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.items = j.at("K").get<int>();
  c.dim = j.at("n").get<int>();
  c.heads = j.at("heads").get<int>();
  c.classes = j.at("classes").get<int>();
  c.beta = j.at("beta").get<double>();
  const auto& e = j.at("encoder");
  c.encoder.dim = c.dim;
  c.encoder.image_widths = e.at("image_widths").get<std::array<int, 4>>();
  c.encoder.event_widths = e.at("event_widths").get<std::array<int, 4>>();
  c.encoder.depths = e.at("depths").get<std::array<int, 4>>();
  c.encoder.image_channels = e.at("image_channels").get<int>();
  c.encoder.voxel_bins = e.at("voxel_bins").get<int>();
  c.encoder.input_multiple = e.at("input_multiple").get<int>();
  return c;
}

namespace {

ModelConfig checked(ModelConfig cfg, const dict::EdgeDictionary* d) {
  if (!d) throw ConfigError("model needs an edge dictionary");
  if (!d->frozen()) throw ContractError("the edge dictionary must be frozen before building the model");
  if (d->config().items != cfg.items || d->config().dim != cfg.dim) {
    throw ConfigError("model K/n (" + std::to_string(cfg.items) + "/" + std::to_string(cfg.dim) +
                      ") differ from the dictionary (" + std::to_string(d->config().items) + "/" +
                      std::to_string(d->config().dim) + ")");
  }
  if (cfg.classes < 1) throw ConfigError("class count must be >= 1");
  if (cfg.encoder.input_multiple % 4 != 0) throw ConfigError("input multiple must be divisible by 4");
  cfg.encoder.dim = cfg.dim;
  return cfg;
}

}  // namespace

EscModel::EscModel(const ModelConfig& cfg, std::shared_ptr<const dict::EdgeDictionary> dictionary, std::uint64_t seed)
    : cfg_(checked(cfg, dictionary.get())), seed_(seed), dict_(std::move(dictionary)) {
  Rng rng = make_rng(seed, 0x5e6);
  const int n = cfg_.dim;
  image_encoder_ = enc::ImageEncoder(params_, cfg_.encoder, rng);
  event_encoder_ = enc::EventEncoder(params_, cfg_.encoder, rng);
  resolver_ = enc::EdgeResolver(params_, cfg_.encoder.resolved_image_widths(), n, rng);
  edge_img_ = enc::EdgeEncoder(params_, "edge_encoder_img", n, n, rng);
  edge_evt_ = enc::EdgeEncoder(params_, "edge_encoder_evt", cfg_.encoder.resolved_event_widths()[0], n, rng);
  head_img_ = elr::ModalityHead(params_, "modality_head_img", n, cfg_.items, rng);
  head_evt_ = elr::ModalityHead(params_, "modality_head_evt", n, cfg_.items, rng);
  rc_ = fusion::RecodedConsolidation(params_, n, cfg_.heads, rng);
  uo_ = fusion::UncertaintyOptimization(params_, n, cfg_.heads, rng);
  head_ = fusion::PredictionHead(params_, n, cfg_.classes, rng);
}

ModelOutput EscModel::forward(const Tensor& image, const Tensor& voxels) const { return run(image, voxels, nullptr); }

ModelOutput EscModel::forward_frozen(const Tensor& image, const Tensor& voxels, const ModelOutput& base) const {
  return run(image, voxels, &base);
}

ModelOutput EscModel::run(const Tensor& image, const Tensor& voxels, const ModelOutput* frozen) const {
  if (image.rank() != 3 || voxels.rank() != 3 || image.height() != voxels.height() ||
      image.width() != voxels.width()) {
    throw InputError("image " + shape_string(image.shape()) + " and voxels " + shape_string(voxels.shape()) +
                     " must share H x W");
  }
  const int h = image.height(), w = image.width();
  const int lh = h / 4, lw = w / 4;
  ModelOutput o;
  o.image_pyramid = image_encoder_.forward(ag::Var(image));
  o.event_pyramid = event_encoder_.forward(ag::Var(voxels));
  const enc::ResolvedImage resolved = resolver_.forward(o.image_pyramid);
  o.f_img = resolved.context;
  o.e_img = edge_img_.forward(resolved.edges, lh, lw);
  o.e_evt = edge_evt_.forward(o.event_pyramid[0].data, lh, lw);
  if (o.f_img.value().height() != lh || o.f_img.value().width() != lw) {
    o.f_img = ag::resize_bilinear(o.f_img, lh, lw);
  }

  o.logits_img = head_img_.logits(o.e_img);
  o.logits_evt = head_evt_.logits(o.e_evt);
  o.p_img = elr::distribution_from_logits(o.logits_img);
  o.p_evt = elr::distribution_from_logits(o.logits_evt);
  o.k_img = frozen ? frozen->k_img : elr::key_map(o.p_img);
  o.k_evt = frozen ? frozen->k_evt : elr::key_map(o.p_evt);
  o.g_img = elr::recode_features(o.k_img, dict_->codebook());
  o.g_evt = elr::recode_features(o.k_evt, dict_->codebook());
  o.c_img = frozen ? frozen->c_img : fusion::uo_confidence(o.p_img);
  o.c_evt = frozen ? frozen->c_evt : fusion::uo_confidence(o.p_evt);

  o.phi = rc_.forward(o.f_img, o.g_img, o.g_evt);
  o.uo = uo_.forward(o.e_img, o.e_evt, o.c_img, o.c_evt);
  o.logits = head_.forward(o.phi, o.uo.psi, h, w);
  return o;
}

LossBreakdown EscModel::loss(const ModelOutput& out, const events::SemanticMask& mask, double beta) const {
  return loss(out, mask, beta, elr::prior_distribution(events::extract_boundary(mask), *dict_));
}

LossBreakdown EscModel::loss(const ModelOutput& out, const events::SemanticMask& mask, double beta,
                             const elr::EdgeDistribution& prior) const {
  LossBreakdown l;
  l.prior = prior;
  l.edge = elr::edge_loss(l.prior, out.p_img, out.p_evt);
  const fusion::TotalLoss t = fusion::total_loss(out.logits, mask, l.edge, beta);
  l.pred = t.pred;
  l.total = t.total;
  return l;
}

std::vector<std::uint8_t> EscModel::predict(const Tensor& image, const Tensor& voxels, int out_h, int out_w) const {
  ag::NoGradGuard guard;
  const ModelOutput o = forward(image, voxels);
  Tensor logits = o.logits.value();
  if (logits.height() != out_h || logits.width() != out_w) logits = ag::resize_bilinear(logits, out_h, out_w);
  const dict::KeyGrid arg = elr::key_map(logits);
  std::vector<std::uint8_t> labels(arg.keys.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(arg.keys[i] + 1);
  return labels;
}

void save_model(const std::filesystem::path& path, const EscModel& model, const std::string& dictionary_sha256,
                const SegCheckpoint& extra) {
  io::Container c;
  c.magic = kSegMagic;
  c.meta = extra.meta;
  c.meta["config"] = model.config().to_json();
  c.meta["seed"] = model.seed();
  c.meta["dictionary_sha256"] = dictionary_sha256;
  c.meta["alpha"] = model.dictionary().config().alpha;
  for (const auto& p : model.params().params()) c.put("param/" + p.name, p.var.value());
  for (const auto& [name, t] : extra.extra) c.put("extra/" + name, t);
  io::write_container(path, c);
}

LoadedModel load_model(const std::filesystem::path& path, std::shared_ptr<const dict::EdgeDictionary> dictionary) {
  io::Container c = io::read_container(path, kSegMagic);
  const ModelConfig cfg = ModelConfig::from_json(c.meta.at("config"));
  LoadedModel out{EscModel(cfg, std::move(dictionary), c.meta.at("seed").get<std::uint64_t>()), {}, {}};
  out.dictionary_sha256 = c.meta.at("dictionary_sha256").get<std::string>();
  for (auto& p : out.model.params().params()) {
    const std::string key = "param/" + p.name;
    if (!c.has(key)) throw FormatError("checkpoint lacks tensor " + p.name);
    const Tensor& t = c.tensor(key);
    if (!t.same_shape(p.var.value())) throw FormatError("checkpoint tensor " + p.name + " has the wrong shape");
    p.var.mutable_value() = t;
  }
  for (auto& [name, t] : c.tensors) {
    if (name.rfind("extra/", 0) == 0) out.extra.extra.emplace_back(name.substr(6), std::move(t));
  }
  out.extra.meta = c.meta;
  return out;
}

}  // namespace esc
