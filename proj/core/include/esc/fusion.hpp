#pragma once

#include <span>
#include <string>

#include "esc/autograd.hpp"
#include "esc/boundary.hpp"
#include "esc/elr.hpp"
#include "esc/nn.hpp"

// Re-coded consolidation (RC), uncertainty optimization (UO), the segmentation
// head and the training objective.
namespace esc::fusion {

// Per-head projections packed as n -> n maps (head i owns rows i*d_k..(i+1)*d_k)
// plus the output projection. Bias-free.
class AttentionParams {
 public:
  AttentionParams() = default;
  AttentionParams(nn::ParameterSet& ps, const std::string& name, int dim, int heads, Rng& rng,
                  const std::string& group = "decoder");

  // W_O(MultiHead(W_Q q, W_K keys, W_V values)), without the residual.
  [[nodiscard]] ag::Var attend(const ag::Var& q, std::span<const ag::Var> keys, std::span<const ag::Var> values) const;
  // Attention weights {heads, L, H, W}, for inspection.
  [[nodiscard]] Tensor weights(const ag::Var& q, std::span<const ag::Var> keys) const;

  [[nodiscard]] int heads() const noexcept { return heads_; }
  [[nodiscard]] int head_dim() const noexcept { return dim_ / heads_; }
  [[nodiscard]] const nn::Linear& w_q() const { return w_q_; }
  [[nodiscard]] const nn::Linear& w_k() const { return w_k_; }
  [[nodiscard]] const nn::Linear& w_v() const { return w_v_; }
  [[nodiscard]] const nn::Linear& w_o() const { return w_o_; }

 private:
  nn::Linear w_q_, w_k_, w_v_, w_o_;
  int dim_ = 0, heads_ = 1;
};

struct ConfidenceMaps {
  Tensor c;  // {1, H', W'}, max probability
  Tensor u;  // 1 - c
};

ConfidenceMaps uo_confidence(const elr::EdgeDistribution& p);

// Phi = F + W_O * MHA(F W_Q, [F + N_K, G_img, G_evt] W_K, [F + N_V, G_img, G_evt] W_V).
class RecodedConsolidation {
 public:
  RecodedConsolidation() = default;
  RecodedConsolidation(nn::ParameterSet& ps, int dim, int heads, Rng& rng, const std::string& group = "decoder");
  [[nodiscard]] ag::Var forward(const ag::Var& f_img, const ag::Var& g_img, const ag::Var& g_evt) const;
  [[nodiscard]] Tensor attention_weights(const ag::Var& f_img, const ag::Var& g_img, const ag::Var& g_evt) const;
  [[nodiscard]] const AttentionParams& attention() const { return attn_; }

 private:
  AttentionParams attn_;
  ag::Var noise_k_, noise_v_;
};

struct UoOutput {
  ag::Var psi;      // confidence-weighted combination
  ag::Var psi_img;  // per-modality branches
  ag::Var psi_evt;
  Tensor weight_img;  // {1, H', W'} mixing coefficients, weight_img + weight_evt = 1
  Tensor weight_evt;
};

// For modality M with counterpart M':
//   Psi^M = E^M + W_O^M MHA(E^M W_Q, [E^M + N_K^M, U^M E^M] W_K, [E^M + N_V^M, E^M'] W_V)
//   Psi = (C^I Psi^I + C^E Psi^E) / (C^I + C^E), with C treated as a constant.
class UncertaintyOptimization {
 public:
  UncertaintyOptimization() = default;
  UncertaintyOptimization(nn::ParameterSet& ps, int dim, int heads, Rng& rng, const std::string& group = "decoder");
  [[nodiscard]] UoOutput forward(const ag::Var& e_img, const ag::Var& e_evt, const ConfidenceMaps& conf_img,
                                 const ConfidenceMaps& conf_evt) const;

 private:
  [[nodiscard]] ag::Var branch(const AttentionParams& attn, const ag::Var& e, const ag::Var& e_other, const Tensor& u,
                               const ag::Var& nk, const ag::Var& nv) const;
  AttentionParams attn_img_, attn_evt_;
  ag::Var nk_img_, nk_evt_, nv_img_, nv_evt_;
};

// concat[Phi, Psi] -> 1x1 (2n -> n) -> ReLU -> 1x1 (n -> c) -> bilinear resize to out_h x out_w.
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(nn::ParameterSet& ps, int dim, int classes, Rng& rng, const std::string& group = "decoder");
  [[nodiscard]] ag::Var forward(const ag::Var& phi, const ag::Var& psi, int out_h, int out_w) const;

 private:
  nn::Linear hidden_, out_;
};

// Semantic labels 1..c become 0-based class channels; 255 stays the ignore marker.
std::vector<int> zero_based_labels(const events::SemanticMask& mask);

struct TotalLoss {
  ag::Var total;
  ag::Var pred;
};

// L = L_pred + beta * L_edge with L_pred the per-pixel cross-entropy over
// non-ignored pixels (0, with a warning, when every pixel is ignored).
TotalLoss total_loss(const ag::Var& logits, const events::SemanticMask& mask, const ag::Var& l_edge, double beta);

}  // namespace esc::fusion
