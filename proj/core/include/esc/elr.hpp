#pragma once

#include "esc/autograd.hpp"
#include "esc/dictionary.hpp"
#include "esc/nn.hpp"

// Latent re-coding: boundary priors, per-modality distributions over the
// dictionary items, key maps and re-coded features.
namespace esc::elr {

inline constexpr double kLogEps = 1e-8;

enum class DistributionKind { PriorOneHot, ModalitySoftmax };

struct EdgeDistribution {
  ag::Var probs;  // {K, H', W'}
  DistributionKind kind = DistributionKind::ModalitySoftmax;

  [[nodiscard]] int items() const { return probs.value().channels(); }
  [[nodiscard]] int height() const { return probs.value().height(); }
  [[nodiscard]] int width() const { return probs.value().width(); }
  // Throws InputError unless entries are >= 0 and each cell sums to 1 within tol.
  void validate(double tol = 1e-6) const;
};

// One-hot distribution at the given 0-based keys.
EdgeDistribution one_hot(const dict::KeyGrid& keys, int items);

// q(K|B): one-hot at the nearest codebook item of each tokenized cell. Throws
// ContractError when the dictionary is not frozen.
EdgeDistribution prior_distribution(const events::BoundaryMap& b, const dict::EdgeDictionary& dictionary);

// Two-layer perceptron n -> n -> K per cell (softmax applied by modality_distribution).
class ModalityHead {
 public:
  ModalityHead() = default;
  ModalityHead(nn::ParameterSet& ps, const std::string& name, int dim, int items, Rng& rng,
               const std::string& group = "decoder");
  [[nodiscard]] ag::Var logits(const ag::Var& e) const;

 private:
  nn::Linear hidden_, out_;
};

EdgeDistribution distribution_from_logits(const ag::Var& logits);
EdgeDistribution modality_distribution(const ag::Var& e_encoded, const ModalityHead& head);

// Per-cell argmax; ties go to the lowest index.
dict::KeyGrid key_map(const EdgeDistribution& p);
dict::KeyGrid key_map(const Tensor& probs);

// Codebook rows selected by `keys`, as {n, H', W'}. The lookup carries no
// gradient back into the distribution. Out-of-range keys throw ContractError.
ag::Var recode_features(const dict::KeyGrid& keys, const ag::Var& codebook);

// Mean over cells of -[log p_img(k*) + log p_evt(k*)], k* the one-hot index of
// q, logs clamped at log(eps).
ag::Var edge_loss(const EdgeDistribution& q, const EdgeDistribution& p_img, const EdgeDistribution& p_evt,
                  double eps = kLogEps);
double edge_loss_value(const Tensor& q, const Tensor& p_img, const Tensor& p_evt, double eps = kLogEps);

}  // namespace esc::elr
