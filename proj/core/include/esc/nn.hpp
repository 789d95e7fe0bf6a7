#pragma once

#include <map>
#include <string>
#include <vector>

#include "esc/autograd.hpp"
#include "esc/rng.hpp"

namespace esc::nn {

struct NamedParam {
  std::string name;
  ag::Var var;
  // Parameter group; the optimizer scales the learning rate per group.
  std::string group;
};

// Ordered registry of trainable tensors. Names are hierarchical ("rc.w_q").
class ParameterSet {
 public:
  ag::Var add(const std::string& name, Tensor init, const std::string& group = "default");
  [[nodiscard]] const std::vector<NamedParam>& params() const noexcept { return params_; }
  [[nodiscard]] std::vector<NamedParam>& params() noexcept { return params_; }
  [[nodiscard]] const NamedParam* find(const std::string& name) const;
  [[nodiscard]] std::size_t scalar_count() const;
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<NamedParam> params_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv and linear layers.
Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng);
Tensor uniform_tensor(std::vector<int> shape, double lo, double hi, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng,
         const std::string& group = "default");
  [[nodiscard]] ag::Var forward(const ag::Var& x) const;
  [[nodiscard]] int out_channels() const { return weight_.shape()[0]; }

 private:
  ag::Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride, int pad,
                  Rng& rng, const std::string& group = "default");
  [[nodiscard]] ag::Var forward(const ag::Var& x) const;

 private:
  ag::Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

// Per-cell affine map over channels (a 1x1 convolution).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, const std::string& group = "default",
         bool bias = true);
  [[nodiscard]] ag::Var forward(const ag::Var& x) const;
  [[nodiscard]] const ag::Var& weight() const { return weight_; }

 private:
  ag::Var weight_, bias_;
};

// x + f(x) with f = `depth` rounds of (3x3 conv, ReLU); width preserved.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterSet& ps, const std::string& name, int channels, int depth, Rng& rng,
                const std::string& group = "default");
  [[nodiscard]] ag::Var forward(const ag::Var& x) const;

 private:
  std::vector<Conv2d> convs_;
};

struct AdamWConfig {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::map<std::string, double> group_lr_multiplier;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig config);
  void step(double lr);
  [[nodiscard]] long steps() const noexcept { return t_; }
  [[nodiscard]] const AdamWConfig& config() const noexcept { return cfg_; }

  // Moment buffers in parameter order, for checkpointing.
  [[nodiscard]] std::vector<Tensor>& first_moments() noexcept { return m_; }
  [[nodiscard]] std::vector<Tensor>& second_moments() noexcept { return v_; }
  void set_steps(long t) noexcept { t_ = t; }

 private:
  ParameterSet* params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Triangular cyclic schedule between base and max with `half_cycle` steps per ramp.
double cyclic_lr(long step, double base, double max, long half_cycle);
// Linear warmup from 0 then polynomial decay to 0 at `total`.
double warmup_poly_lr(long step, double base, long warmup, long total, double power);

}  // namespace esc::nn
