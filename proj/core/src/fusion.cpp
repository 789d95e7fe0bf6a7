#include "esc/fusion.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "esc/error.hpp"

namespace esc::fusion {

AttentionParams::AttentionParams(nn::ParameterSet& ps, const std::string& name, int dim, int heads, Rng& rng,
                                 const std::string& group)
    : w_q_(ps, name + ".w_q", dim, dim, rng, group, false),
      w_k_(ps, name + ".w_k", dim, dim, rng, group, false),
      w_v_(ps, name + ".w_v", dim, dim, rng, group, false),
      w_o_(ps, name + ".w_o", dim, dim, rng, group, false),
      dim_(dim),
      heads_(heads) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("attention: n=" + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

ag::Var AttentionParams::attend(const ag::Var& q, std::span<const ag::Var> keys, std::span<const ag::Var> values) const {
  std::vector<ag::Var> k, v;
  k.reserve(keys.size());
  v.reserve(values.size());
  for (const auto& x : keys) k.push_back(w_k_.forward(x));
  for (const auto& x : values) v.push_back(w_v_.forward(x));
  return w_o_.forward(ag::cell_attention(w_q_.forward(q), k, v, heads_));
}

Tensor AttentionParams::weights(const ag::Var& q, std::span<const ag::Var> keys) const {
  ag::NoGradGuard guard;
  std::vector<Tensor> k;
  for (const auto& x : keys) k.push_back(w_k_.forward(x).value());
  return ag::cell_attention_weights(w_q_.forward(q).value(), k, heads_);
}

ConfidenceMaps uo_confidence(const elr::EdgeDistribution& p) {
  const Tensor& probs = p.probs.value();
  const int k = probs.channels();
  const auto cells = static_cast<std::size_t>(probs.cells());
  ConfidenceMaps m{Tensor({1, probs.height(), probs.width()}), Tensor({1, probs.height(), probs.width()})};
  for (std::size_t i = 0; i < cells; ++i) {
    double best = probs[i];
    for (int c = 1; c < k; ++c) best = std::max(best, probs[c * cells + i]);
    m.c[i] = best;
    m.u[i] = 1.0 - best;
  }
  return m;
}

namespace {

void require_aligned(const ag::Var& a, const ag::Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(what) + ": inputs not aligned (" + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()) + ")");
  }
}

ag::Var noise_param(nn::ParameterSet& ps, const std::string& name, int dim, Rng& rng, const std::string& group) {
  Tensor t({dim});
  for (auto& v : t.values()) v = normal(rng, 0.0, 0.02);
  return ps.add(name, std::move(t), group);
}

}  // namespace

RecodedConsolidation::RecodedConsolidation(nn::ParameterSet& ps, int dim, int heads, Rng& rng,
                                           const std::string& group)
    : attn_(ps, "rc.attn", dim, heads, rng, group) {
  noise_k_ = noise_param(ps, "rc.noise_k", dim, rng, group);
  noise_v_ = noise_param(ps, "rc.noise_v", dim, rng, group);
}

ag::Var RecodedConsolidation::forward(const ag::Var& f_img, const ag::Var& g_img, const ag::Var& g_evt) const {
  require_aligned(f_img, g_img, "rc");
  require_aligned(f_img, g_evt, "rc");
  const std::array<ag::Var, 3> keys{ag::add_channel_vector(f_img, noise_k_), g_img, g_evt};
  const std::array<ag::Var, 3> values{ag::add_channel_vector(f_img, noise_v_), g_img, g_evt};
  return ag::add(f_img, attn_.attend(f_img, keys, values));
}

Tensor RecodedConsolidation::attention_weights(const ag::Var& f_img, const ag::Var& g_img,
                                               const ag::Var& g_evt) const {
  const std::array<ag::Var, 3> keys{ag::add_channel_vector(f_img, noise_k_), g_img, g_evt};
  return attn_.weights(f_img, keys);
}

UncertaintyOptimization::UncertaintyOptimization(nn::ParameterSet& ps, int dim, int heads, Rng& rng,
                                                 const std::string& group)
    : attn_img_(ps, "uo.attn_img", dim, heads, rng, group), attn_evt_(ps, "uo.attn_evt", dim, heads, rng, group) {
  nk_img_ = noise_param(ps, "uo.noise_k_img", dim, rng, group);
  nk_evt_ = noise_param(ps, "uo.noise_k_evt", dim, rng, group);
  nv_img_ = noise_param(ps, "uo.noise_v_img", dim, rng, group);
  nv_evt_ = noise_param(ps, "uo.noise_v_evt", dim, rng, group);
}

ag::Var UncertaintyOptimization::branch(const AttentionParams& attn, const ag::Var& e, const ag::Var& e_other,
                                        const Tensor& u, const ag::Var& nk, const ag::Var& nv) const {
  const std::array<ag::Var, 2> keys{ag::add_channel_vector(e, nk), ag::mul_cells(e, ag::Var(u))};
  const std::array<ag::Var, 2> values{ag::add_channel_vector(e, nv), e_other};
  return ag::add(e, attn.attend(e, keys, values));
}

UoOutput UncertaintyOptimization::forward(const ag::Var& e_img, const ag::Var& e_evt, const ConfidenceMaps& conf_img,
                                          const ConfidenceMaps& conf_evt) const {
  require_aligned(e_img, e_evt, "uo");
  const Tensor& v = e_img.value();
  const std::vector<int> cell_shape{1, v.height(), v.width()};
  if (conf_img.c.shape() != cell_shape || conf_evt.c.shape() != cell_shape) {
    throw InputError("uo: confidence maps do not match the feature grid");
  }
  UoOutput out;
  out.psi_img = branch(attn_img_, e_img, e_evt, conf_img.u, nk_img_, nv_img_);
  out.psi_evt = branch(attn_evt_, e_evt, e_img, conf_evt.u, nk_evt_, nv_evt_);
  out.weight_img = Tensor(cell_shape);
  out.weight_evt = Tensor(cell_shape);
  for (std::size_t i = 0; i < out.weight_img.size(); ++i) {
    const double denom = conf_img.c[i] + conf_evt.c[i];
    if (!(denom > 0.0)) throw ContractError("uo: confidences sum to zero");
    out.weight_img[i] = conf_img.c[i] / denom;
    out.weight_evt[i] = conf_evt.c[i] / denom;
  }
  out.psi = ag::add(ag::mul_cells(out.psi_img, ag::Var(out.weight_img)),
                    ag::mul_cells(out.psi_evt, ag::Var(out.weight_evt)));
  return out;
}

PredictionHead::PredictionHead(nn::ParameterSet& ps, int dim, int classes, Rng& rng, const std::string& group)
    : hidden_(ps, "head.hidden", 2 * dim, dim, rng, group), out_(ps, "head.out", dim, classes, rng, group) {}

ag::Var PredictionHead::forward(const ag::Var& phi, const ag::Var& psi, int out_h, int out_w) const {
  require_aligned(phi, psi, "predict_mask");
  const std::array<ag::Var, 2> parts{phi, psi};
  ag::Var logits = out_.forward(ag::relu(hidden_.forward(ag::concat_channels(parts))));
  if (logits.value().height() == out_h && logits.value().width() == out_w) return logits;
  return ag::resize_bilinear(logits, out_h, out_w);
}

std::vector<int> zero_based_labels(const events::SemanticMask& mask) {
  std::vector<int> out(mask.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int v = mask.labels[i];
    out[i] = v == events::kIgnoreLabel ? events::kIgnoreLabel : v - 1;
  }
  return out;
}

TotalLoss total_loss(const ag::Var& logits, const events::SemanticMask& mask, const ag::Var& l_edge, double beta) {
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  const Tensor& v = logits.value();
  if (v.rank() != 3 || v.height() != mask.height || v.width() != mask.width) {
    throw InputError("total_loss: logits " + shape_string(v.shape()) + " do not match mask " +
                     std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  if (v.channels() != mask.classes) throw InputError("total_loss: logit channels differ from class count");
  const auto labels = zero_based_labels(mask);
  if (std::all_of(labels.begin(), labels.end(), [](int l) { return l == events::kIgnoreLabel; })) {
    spdlog::warn("total_loss: every pixel carries the ignore label; L_pred = 0");
  }
  TotalLoss out;
  out.pred = ag::cross_entropy(logits, labels, events::kIgnoreLabel);
  out.total = beta == 0.0 ? out.pred : ag::add(out.pred, ag::scale(l_edge, beta));
  return out;
}

}  // namespace esc::fusion
