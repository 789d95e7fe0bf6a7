#include "esc/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "esc/container.hpp"
#include "esc/error.hpp"

namespace esc::dict {

Quantized quantize(const Tensor& g, const Tensor& codebook) {
  if (g.rank() != 3 || codebook.rank() != 2) throw InputError("quantize: expected {n,H,W} embeddings and {K,n} codebook");
  const int n = g.channels();
  const int k_items = codebook.dim(0);
  if (codebook.dim(1) != n) {
    throw InputError("quantize: embedding dim " + std::to_string(n) + " != codebook dim " + std::to_string(codebook.dim(1)));
  }
  const std::size_t cells = static_cast<std::size_t>(g.cells());
  Quantized q{Tensor(g.shape()), KeyGrid{g.height(), g.width(), std::vector<int>(cells)}};
  std::vector<double> cell(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < cells; ++i) {
    for (int d = 0; d < n; ++d) cell[static_cast<std::size_t>(d)] = g[d * cells + i];
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_items; ++k) {
      const double* row = codebook.data() + static_cast<std::size_t>(k) * n;
      double dist = 0.0;
      for (int d = 0; d < n; ++d) {
        const double diff = cell[static_cast<std::size_t>(d)] - row[d];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    q.keys.keys[i] = best;
    const double* row = codebook.data() + static_cast<std::size_t>(best) * n;
    for (int d = 0; d < n; ++d) q.values[d * cells + i] = row[d];
  }
  return q;
}

Tensor boundary_tensor(const events::BoundaryMap& b) {
  Tensor t({1, b.height, b.width});
  for (std::size_t i = 0; i < b.edges.size(); ++i) t[i] = b.edges[i];
  return t;
}

Tensor probability_map(const Tensor& decoded) {
  Tensor out = decoded;
  for (auto& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tokenizer::Tokenizer(nn::ParameterSet& ps, const DictConfig& cfg, Rng& rng, const std::string& prefix) {
  const int half = std::max(cfg.dim / 2, 1);
  down1_ = nn::Conv2d(ps, prefix + ".down1", 1, half, 4, 2, 1, rng);
  down2_ = nn::Conv2d(ps, prefix + ".down2", half, cfg.dim, 4, 2, 1, rng);
  res1_ = nn::ResidualBlock(ps, prefix + ".res1", cfg.dim, 3, rng);
  res2_ = nn::ResidualBlock(ps, prefix + ".res2", cfg.dim, 3, rng);
  proj_ = nn::Conv2d(ps, prefix + ".proj", cfg.dim, cfg.dim, 1, 1, 0, rng);
}

ag::Var Tokenizer::forward(const ag::Var& boundary) const {
  const auto& s = boundary.shape();
  if (s.size() != 3 || s[0] != 1) throw InputError("tokenizer expects a {1,H,W} boundary tensor");
  if (s[1] < 8 || s[2] < 8) throw InputError("tokenizer input must be at least 8x8, got " + shape_string(s));
  ag::Var h = ag::relu(down1_.forward(boundary));
  h = ag::relu(down2_.forward(h));
  h = res2_.forward(res1_.forward(h));
  return proj_.forward(h);
}

Tensor Tokenizer::tokenize(const events::BoundaryMap& b) const {
  ag::NoGradGuard guard;
  return forward(ag::Var(boundary_tensor(b))).value();
}

Detokenizer::Detokenizer(nn::ParameterSet& ps, const DictConfig& cfg, Rng& rng, const std::string& prefix) {
  const int half = std::max(cfg.dim / 2, 1);
  proj_ = nn::Conv2d(ps, prefix + ".proj", cfg.dim, cfg.dim, 1, 1, 0, rng);
  res1_ = nn::ResidualBlock(ps, prefix + ".res1", cfg.dim, 3, rng);
  res2_ = nn::ResidualBlock(ps, prefix + ".res2", cfg.dim, 3, rng);
  up1_ = nn::ConvTranspose2d(ps, prefix + ".up1", cfg.dim, half, 4, 2, 1, rng);
  up2_ = nn::ConvTranspose2d(ps, prefix + ".up2", half, half, 4, 2, 1, rng);
  head_ = nn::Conv2d(ps, prefix + ".head", half, 1, 3, 1, 1, rng);
}

ag::Var Detokenizer::forward(const ag::Var& quantized) const {
  const auto& s = quantized.shape();
  if (s.size() != 3 || s[1] < 1 || s[2] < 1) throw InputError("detokenizer expects {n,H',W'} input");
  ag::Var h = ag::relu(proj_.forward(quantized));
  h = res2_.forward(res1_.forward(h));
  h = ag::relu(up1_.forward(h));
  h = ag::relu(up2_.forward(h));
  return head_.forward(h);
}

namespace {

// Crops a {1, H, W} target to the reconstruction's {1, 4H', 4W'} extent.
Tensor crop_to(const Tensor& b, int h, int w) {
  if (b.height() == h && b.width() == w) return b;
  if (b.height() < h || b.width() < w) throw InputError("dict_loss: reconstruction larger than target");
  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(0, y, x) = b.at(0, y, x);
  }
  return out;
}

double cell_sq_dist_mean(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(std::max(a.cells(), 1));
}

// Squared L2 distance per latent cell, averaged over cells.
ag::Var cell_sq_dist_mean(const ag::Var& a, const ag::Var& b) {
  return ag::scale(ag::mse(a, b), static_cast<double>(a.value().channels()));
}

}  // namespace

DictLossParts dict_loss(const Tensor& b, const Tensor& b_recon, const Tensor& g, const Tensor& g_quantized,
                        double alpha) {
  if (!g.same_shape(g_quantized)) throw InputError("dict_loss: embedding shapes differ");
  if (b_recon.rank() != 3 || b.rank() != 3) throw InputError("dict_loss: boundary tensors must be {1,H,W}");
  const Tensor target = crop_to(b, b_recon.height(), b_recon.width());
  DictLossParts parts;
  parts.alpha = alpha;
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) acc += (target[i] - b_recon[i]) * (target[i] - b_recon[i]);
  parts.reconstruction = acc / static_cast<double>(std::max<std::size_t>(target.size(), 1));
  parts.embedding = cell_sq_dist_mean(g_quantized, g);
  parts.commitment = parts.embedding;
  return parts;
}

DictLossGraph dict_loss(const ag::Var& b, const ag::Var& b_recon, const ag::Var& g, const ag::Var& g_quantized,
                        double alpha) {
  if (g.shape() != g_quantized.shape()) throw InputError("dict_loss: embedding shapes differ");
  const ag::Var target(crop_to(b.value(), b_recon.value().height(), b_recon.value().width()));
  DictLossGraph out;
  out.reconstruction = ag::mse(target, b_recon);
  out.embedding = cell_sq_dist_mean(g_quantized, ag::detach(g));
  out.commitment = cell_sq_dist_mean(ag::detach(g_quantized), g);
  out.total = ag::add(ag::add(out.reconstruction, out.embedding), ag::scale(out.commitment, alpha));
  return out;
}

EdgeDictionary::EdgeDictionary(const DictConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  if (cfg.items < 1 || cfg.dim < 2) throw ConfigError("dictionary needs K >= 1 and n >= 2");
  Rng rng = make_rng(seed, 0x0d1c7);
  tokenizer_ = Tokenizer(params_, cfg, rng);
  detokenizer_ = Detokenizer(params_, cfg, rng);
  const double bound = 1.0 / cfg.items;
  codebook_ = params_.add("codebook", nn::uniform_tensor({cfg.items, cfg.dim}, -bound, bound, rng));
}

EdgeDictionary::Pass EdgeDictionary::forward(const events::BoundaryMap& b) const {
  Pass p;
  const ag::Var input(boundary_tensor(b));
  p.embeddings = tokenizer_.forward(input);
  Quantized q = quantize(p.embeddings.value(), codebook_.value());
  p.keys = q.keys;
  p.quantized = ag::gather_rows(codebook_, p.keys.keys, p.keys.height, p.keys.width);
  p.logits = detokenizer_.forward(ag::straight_through(p.embeddings, p.quantized));
  p.recon = ag::Var(probability_map(p.logits.value()));
  p.loss = dict_loss(input, p.logits, p.embeddings, p.quantized, cfg_.alpha);
  return p;
}

EdgeDictionary::Pass EdgeDictionary::forward_frozen(const events::BoundaryMap& b, const Pass& base) const {
  Pass p;
  const ag::Var input(boundary_tensor(b));
  p.embeddings = tokenizer_.forward(input);
  p.keys = base.keys;
  p.quantized = ag::gather_rows(codebook_, p.keys.keys, p.keys.height, p.keys.width);
  Tensor offset = base.quantized.value();
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= base.embeddings.value()[i];
  p.logits = detokenizer_.forward(ag::add(p.embeddings, ag::Var(std::move(offset))));
  p.recon = ag::Var(probability_map(p.logits.value()));
  const Tensor target = crop_to(input.value(), p.logits.value().height(), p.logits.value().width());
  p.loss.reconstruction = ag::mse(ag::Var(target), p.logits);
  p.loss.embedding = cell_sq_dist_mean(p.quantized, ag::Var(base.embeddings.value()));
  p.loss.commitment = cell_sq_dist_mean(ag::Var(base.quantized.value()), p.embeddings);
  p.loss.total = ag::add(ag::add(p.loss.reconstruction, p.loss.embedding), ag::scale(p.loss.commitment, cfg_.alpha));
  return p;
}

void EdgeDictionary::freeze() { params_.set_requires_grad(false); }

bool EdgeDictionary::frozen() const {
  for (const auto& p : params_.params()) {
    if (p.var.requires_grad()) return false;
  }
  return true;
}

void EdgeDictionary::save(const std::filesystem::path& path) const {
  io::Container c;
  c.magic = "ESCDICT1";
  c.meta = {{"K", cfg_.items}, {"n", cfg_.dim}, {"alpha", cfg_.alpha}, {"seed", seed_}};
  for (const auto& p : params_.params()) c.put(p.name, p.var.value());
  io::write_container(path, c);
}

EdgeDictionary EdgeDictionary::load(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, "ESCDICT1");
  DictConfig cfg;
  cfg.items = c.meta.at("K").get<int>();
  cfg.dim = c.meta.at("n").get<int>();
  cfg.alpha = c.meta.at("alpha").get<double>();
  EdgeDictionary d(cfg, c.meta.at("seed").get<std::uint64_t>());
  for (auto& p : d.params_.params()) {
    const Tensor& t = c.tensor(p.name);
    if (!t.same_shape(p.var.value())) throw FormatError("dictionary tensor " + p.name + " has the wrong shape");
    p.var.mutable_value() = t;
  }
  return d;
}

DictTrainResult train_dictionary(std::span<const events::BoundaryMap> boundaries, const DictTrainConfig& cfg,
                                 const std::function<void(int, const DictTrainStep&)>& on_step) {
  if (boundaries.empty()) throw InputError("train_dictionary: empty dataset");
  if (cfg.batch < 1 || cfg.steps < 0) throw ConfigError("train_dictionary: batch >= 1 and steps >= 0 required");
  DictTrainResult result{EdgeDictionary(cfg.dict, cfg.seed), {}};
  EdgeDictionary& d = result.dictionary;
  nn::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  nn::AdamW opt(d.params(), ocfg);
  result.curve.reserve(static_cast<std::size_t>(cfg.steps));

  const int items = cfg.dict.items, dim = cfg.dict.dim;
  std::vector<int> last_used(static_cast<std::size_t>(items), 0);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng = make_rng(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(step));
    d.params().zero_grad();
    ag::Var total;
    DictTrainStep rec{0, 0, 0, 0};
    std::vector<Tensor> batch_embeddings;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(boundaries.size()) - 1));
      const auto pass = d.forward(boundaries[idx]);
      total = total.defined() ? ag::add(total, pass.loss.total) : pass.loss.total;
      rec.reconstruction += pass.loss.reconstruction.item() / cfg.batch;
      rec.embedding += pass.loss.embedding.item() / cfg.batch;
      rec.commitment += pass.loss.commitment.item() / cfg.batch;
      for (int k : pass.keys.keys) last_used[static_cast<std::size_t>(k)] = step;
      batch_embeddings.push_back(pass.embeddings.value());
    }
    total = ag::scale(total, 1.0 / cfg.batch);
    rec.total = total.item();
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("dictionary training diverged at step " + std::to_string(step) +
                            ": total loss " + std::to_string(rec.total));
    }
    ag::backward(total);
    opt.step(cfg.lr);

    // Dead items never receive a gradient; move them onto live embeddings.
    if (cfg.restart_after > 0) {
      ag::Var codebook = d.codebook();  // shares the parameter node
      Tensor& cb = codebook.mutable_value();
      for (int k = 0; k < items; ++k) {
        if (step - last_used[static_cast<std::size_t>(k)] < cfg.restart_after) continue;
        const Tensor& g = batch_embeddings[static_cast<std::size_t>(uniform_int(rng, 0, cfg.batch - 1))];
        const int cell = uniform_int(rng, 0, g.cells() - 1);
        for (int i = 0; i < dim; ++i) {
          cb[static_cast<std::size_t>(k) * dim + i] = g[static_cast<std::size_t>(i) * g.cells() + cell];
        }
        last_used[static_cast<std::size_t>(k)] = step;
      }
    }
    result.curve.push_back(rec);
    if (on_step) on_step(step, rec);
  }
  return result;
}

}  // namespace esc::dict
