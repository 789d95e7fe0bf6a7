#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "esc/tensor.hpp"

// Tape-based reverse-mode differentiation over esc::Tensor. Each op allocates a
// Node holding its value and a closure that scatters the output gradient into
// its parents. Feature maps are {C, H, W}; per-cell ops act on the channel axis.
namespace esc::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-initialized on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  [[nodiscard]] const Tensor& value() const { return node_->value; }
  [[nodiscard]] Tensor& mutable_value() { return node_->value; }
  [[nodiscard]] const Tensor& grad() const { return node_->grad; }
  [[nodiscard]] Tensor& grad_buffer() { return node_->grad_buffer(); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }
  [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
  [[nodiscard]] const std::vector<int>& shape() const { return node_->value.shape(); }
  [[nodiscard]] double item() const { return node_->value[0]; }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(loss)/d(loss) = 1 and runs every reachable backward closure once, in
// reverse topological order. Gradients accumulate into leaf grad buffers.
void backward(const Var& loss);

[[nodiscard]] bool grad_enabled();

// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var detach(const Var& a);

// Forward value is `quantized`; the backward pass hands the incoming gradient to
// `continuous` unchanged and nothing to `quantized`.
Var straight_through(const Var& continuous, const Var& quantized);

// Convolutions on {C, H, W}. Weights: conv {Cout, Cin, k, k}; transposed conv
// {Cin, Cout, k, k}. Bias {Cout} may be undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
int conv_out_size(int in, int kernel, int stride, int pad);
int conv_transpose_out_size(int in, int kernel, int stride, int pad);

// Per-cell affine map over channels: w {Cout, Cin}, b {Cout} (may be undefined).
Var channel_linear(const Var& x, const Var& w, const Var& b);

// x {C, H, W} + v {C} broadcast over cells.
Var add_channel_vector(const Var& x, const Var& v);
// x {C, H, W} * s {1, H, W} broadcast over channels.
Var mul_cells(const Var& x, const Var& s);
Var concat_channels(std::span<const Var> parts);

// Bilinear resampling with half-pixel centers (edge-clamped).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// Softmax over the channel axis at every cell.
Var softmax_channels(const Var& x);

// Per-cell multi-head scaled dot-product attention over a short sequence of
// key/value positions. q and every key/value are {n, H, W}; n divisible by heads.
Var cell_attention(const Var& q, std::span<const Var> keys, std::span<const Var> values, int heads);
// Attention weights {heads, L, H, W} of the same computation (no graph).
Tensor cell_attention_weights(const Tensor& q, std::span<const Tensor> keys, int heads);

// Rows of table {K, n} selected per cell by 0-based `keys` (size H*W), as {n, H, W}.
// Gradient flows into the selected rows of the table only.
Var gather_rows(const Var& table, std::span<const int> keys, int h, int w);

// Mean of squared differences.
Var mse(const Var& a, const Var& b);

// Mean over non-ignored cells of -log softmax(logits)[label]; labels are 0-based
// channel indices, `ignore` marks excluded cells. Returns 0 when every cell is ignored.
Var cross_entropy(const Var& logits, std::span<const int> labels, int ignore);

// Mean over cells of -log(max(p[key], eps)) for probabilities {K, H, W}.
Var nll_clamped(const Var& probs, std::span<const int> keys, double eps);

}  // namespace esc::ag
