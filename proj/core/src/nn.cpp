#include "esc/nn.hpp"

#include <algorithm>
#include <cmath>

#include "esc/error.hpp"

namespace esc::nn {

ag::Var ParameterSet::add(const std::string& name, Tensor init, const std::string& group) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  ag::Var v(std::move(init), true);
  params_.push_back({name, v, group});
  return v;
}

const NamedParam* ParameterSet::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const NamedParam& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.node()->requires_grad = on;
}

Tensor uniform_tensor(std::vector<int> shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  return uniform_tensor(std::move(shape), -bound, bound, rng);
}

Conv2d::Conv2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng,
               const std::string& group)
    : stride_(stride), pad_(pad) {
  const int fan_in = in * kernel * kernel;
  weight_ = ps.add(name + ".weight", fan_in_uniform({out, in, kernel, kernel}, fan_in, rng), group);
  bias_ = ps.add(name + ".bias", fan_in_uniform({out}, fan_in, rng), group);
}

ag::Var Conv2d::forward(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, stride_, pad_); }

ConvTranspose2d::ConvTranspose2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride,
                                 int pad, Rng& rng, const std::string& group)
    : stride_(stride), pad_(pad) {
  const int fan_in = out * kernel * kernel;
  weight_ = ps.add(name + ".weight", fan_in_uniform({in, out, kernel, kernel}, fan_in, rng), group);
  bias_ = ps.add(name + ".bias", fan_in_uniform({out}, fan_in, rng), group);
}

ag::Var ConvTranspose2d::forward(const ag::Var& x) const {
  return ag::conv_transpose2d(x, weight_, bias_, stride_, pad_);
}

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, const std::string& group,
               bool bias) {
  weight_ = ps.add(name + ".weight", fan_in_uniform({out, in}, in, rng), group);
  if (bias) bias_ = ps.add(name + ".bias", fan_in_uniform({out}, in, rng), group);
}

ag::Var Linear::forward(const ag::Var& x) const { return ag::channel_linear(x, weight_, bias_); }

ResidualBlock::ResidualBlock(ParameterSet& ps, const std::string& name, int channels, int depth, Rng& rng,
                             const std::string& group) {
  for (int i = 0; i < depth; ++i) {
    convs_.emplace_back(ps, name + ".conv" + std::to_string(i), channels, channels, 3, 1, 1, rng, group);
  }
}

ag::Var ResidualBlock::forward(const ag::Var& x) const {
  // Pre-activation branch: the sum is not rectified, so blocks can also
  // subtract from their input instead of only growing it.
  ag::Var h = x;
  for (const auto& c : convs_) h = c.forward(ag::relu(h));
  return ag::add(x, h);
}

AdamW::AdamW(ParameterSet& params, AdamWConfig config) : params_(&params), cfg_(std::move(config)) {
  for (const auto& p : params_->params()) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& ps = params_->params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (!p.var.requires_grad() || p.var.grad().empty()) continue;
    double group_lr = lr;
    if (auto it = cfg_.group_lr_multiplier.find(p.group); it != cfg_.group_lr_multiplier.end()) group_lr *= it->second;
    Tensor& w = p.var.mutable_value();
    const Tensor& g = p.var.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= group_lr * cfg_.weight_decay * w[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= group_lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

double cyclic_lr(long step, double base, double max, long half_cycle) {
  if (half_cycle <= 0) return base;
  const double cycle = std::floor(1.0 + static_cast<double>(step) / (2.0 * half_cycle));
  const double x = std::abs(static_cast<double>(step) / half_cycle - 2.0 * cycle + 1.0);
  return base + (max - base) * std::max(0.0, 1.0 - x);
}

double warmup_poly_lr(long step, double base, long warmup, long total, double power) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= 0) return base;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return base * std::pow(1.0 - frac, power);
}

}  // namespace esc::nn
