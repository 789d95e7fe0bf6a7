#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "esc/autograd.hpp"
#include "esc/boundary.hpp"
#include "esc/nn.hpp"

// The edge dictionary: a VQ-VAE over semantic boundary maps. Dictionary item
// indices are 0-based throughout the code (index 0 is the first item).
namespace esc::dict {

struct DictConfig {
  int items = 128;       // K
  int dim = 256;         // n
  double alpha = 0.25;   // commitment weight
};

// Per-cell dictionary indices on the latent grid.
struct KeyGrid {
  int height = 0;
  int width = 0;
  std::vector<int> keys;

  [[nodiscard]] int at(int y, int x) const { return keys[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const KeyGrid&, const KeyGrid&) = default;
};

struct Quantized {
  Tensor values;  // {n, H', W'}, every cell a codebook row
  KeyGrid keys;
};

// Nearest codebook row (squared L2) per cell of g {n, H', W'}; ties go to the
// lowest index. codebook is {K, n}.
Quantized quantize(const Tensor& g, const Tensor& codebook);

// Decoder output squashed into [0, 1] for inspection.
Tensor probability_map(const Tensor& decoded);
// Boundary map as a {1, H, W} tensor of 0/1.
Tensor boundary_tensor(const events::BoundaryMap& b);

// conv4x4/2 -> ReLU -> conv4x4/2 -> ReLU -> 2 residual blocks (three 3x3 convs
// each) -> 1x1 conv to n channels. {1, H, W} -> {n, H/4, W/4} (floor).
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(nn::ParameterSet& ps, const DictConfig& cfg, Rng& rng, const std::string& prefix = "tokenizer");
  [[nodiscard]] ag::Var forward(const ag::Var& boundary) const;
  [[nodiscard]] Tensor tokenize(const events::BoundaryMap& b) const;

 private:
  nn::Conv2d down1_, down2_, proj_;
  nn::ResidualBlock res1_, res2_;
};

// Mirror of the tokenizer: 1x1 conv -> ReLU -> 2 residual blocks -> two
// transposed 4x4/2 convs with ReLU -> 3x3 conv to one output channel.
// {n, H', W'} -> {1, 4H', 4W'}. The output is regressed onto the 0/1 map.
class Detokenizer {
 public:
  Detokenizer() = default;
  Detokenizer(nn::ParameterSet& ps, const DictConfig& cfg, Rng& rng, const std::string& prefix = "detokenizer");
  [[nodiscard]] ag::Var forward(const ag::Var& quantized) const;

 private:
  nn::Conv2d proj_, head_;
  nn::ResidualBlock res1_, res2_;
  nn::ConvTranspose2d up1_, up2_;
};

struct DictLossParts {
  double reconstruction = 0.0;
  double embedding = 0.0;
  double commitment = 0.0;
  double alpha = 0.25;
  [[nodiscard]] double total() const { return reconstruction + embedding + alpha * commitment; }
};

// reconstruction = mean over pixels of (B - B')^2, with B' the raw decoder output;
// embedding and commitment = mean over latent cells of the squared L2 distance
// between the cell embedding and its codebook row. Value-level evaluation.
DictLossParts dict_loss(const Tensor& b, const Tensor& b_recon, const Tensor& g, const Tensor& g_quantized,
                        double alpha);

struct DictLossGraph {
  ag::Var total, reconstruction, embedding, commitment;
};

// Differentiable form: embedding loss reaches only the codebook (tokenizer
// output detached), commitment only the tokenizer (codebook rows detached).
DictLossGraph dict_loss(const ag::Var& b, const ag::Var& b_recon, const ag::Var& g, const ag::Var& g_quantized,
                        double alpha);

// Forward value g_quantized, gradient routed to g unchanged.
inline ag::Var straight_through(const ag::Var& g, const ag::Var& g_quantized) {
  return ag::straight_through(g, g_quantized);
}

// Tokenizer + codebook + detokenizer with their parameters.
class EdgeDictionary {
 public:
  EdgeDictionary(const DictConfig& cfg, std::uint64_t seed);
  EdgeDictionary(const EdgeDictionary&) = delete;
  EdgeDictionary& operator=(const EdgeDictionary&) = delete;
  EdgeDictionary(EdgeDictionary&&) = default;
  EdgeDictionary& operator=(EdgeDictionary&&) = default;

  struct Pass {
    ag::Var embeddings;   // Gamma
    ag::Var quantized;    // v(K), gradient to the codebook
    ag::Var logits;       // detokenizer output B', the reconstruction term's operand
    ag::Var recon;        // probability_map(logits), no graph
    KeyGrid keys;
    DictLossGraph loss;
  };
  [[nodiscard]] Pass forward(const events::BoundaryMap& b) const;
  // Same loss with the keys and every stop-gradient operand fixed to the values
  // of `base`: the smooth function whose derivative the straight-through
  // backward pass computes. Used by finite-difference checks.
  [[nodiscard]] Pass forward_frozen(const events::BoundaryMap& b, const Pass& base) const;

  [[nodiscard]] const DictConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
  [[nodiscard]] const Detokenizer& detokenizer() const noexcept { return detokenizer_; }
  [[nodiscard]] const ag::Var& codebook() const noexcept { return codebook_; }
  [[nodiscard]] nn::ParameterSet& params() noexcept { return params_; }
  [[nodiscard]] const nn::ParameterSet& params() const noexcept { return params_; }

  // Disables gradients on every dictionary tensor; required before the
  // dictionary serves as the prior for segmentation training.
  void freeze();
  [[nodiscard]] bool frozen() const;

  // "ESCDICT1" container: codebook, tokenizer and detokenizer tensors, config, seed.
  void save(const std::filesystem::path& path) const;
  static EdgeDictionary load(const std::filesystem::path& path);

 private:
  DictConfig cfg_;
  std::uint64_t seed_;
  nn::ParameterSet params_;
  Tokenizer tokenizer_;
  Detokenizer detokenizer_;
  ag::Var codebook_;
};

struct DictTrainConfig {
  DictConfig dict;
  int steps = 300;
  int batch = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Items no cell has selected for this many steps are re-seeded from a random
  // cell embedding of the current batch (0 disables the restart).
  int restart_after = 20;
};

struct DictTrainStep {
  double total, reconstruction, embedding, commitment;
};

struct DictTrainResult {
  EdgeDictionary dictionary;
  std::vector<DictTrainStep> curve;
};

// Minimizes the dictionary loss with AdamW over random mini-batches. Throws
// DivergenceError on a non-finite loss. `on_step` (optional) sees each step.
DictTrainResult train_dictionary(std::span<const events::BoundaryMap> boundaries, const DictTrainConfig& cfg,
                                 const std::function<void(int, const DictTrainStep&)>& on_step = {});

}  // namespace esc::dict
