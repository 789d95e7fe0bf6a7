#include "esc/encoders.hpp"

#include <spdlog/spdlog.h>

#include "esc/error.hpp"

namespace esc::enc {

namespace {

std::array<int, 4> fill_widths(std::array<int, 4> w, int dim, const std::array<int, 4>& divisors) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (w[i] <= 0) w[i] = std::max(dim / divisors[i], 1);
  }
  return w;
}

}  // namespace

std::array<int, 4> EncoderConfig::resolved_image_widths() const { return fill_widths(image_widths, dim, {4, 2, 1, 1}); }
std::array<int, 4> EncoderConfig::resolved_event_widths() const { return fill_widths(event_widths, dim, {8, 4, 2, 1}); }

PyramidEncoder::PyramidEncoder(nn::ParameterSet& ps, const std::string& prefix, int in_channels,
                               const std::array<int, 4>& widths, const std::array<int, 4>& depths, int input_multiple,
                               Rng& rng, const std::string& group)
    : in_channels_(in_channels), input_multiple_(input_multiple), widths_(widths) {
  int prev = in_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s);
    down_[s] = s == 0 ? nn::Conv2d(ps, stage + ".down", prev, widths[s], 7, 4, 3, rng, group)
                      : nn::Conv2d(ps, stage + ".down", prev, widths[s], 3, 2, 1, rng, group);
    for (int d = 0; d < depths[s]; ++d) {
      blocks_[s].emplace_back(ps, stage + ".block" + std::to_string(d), widths[s], 2, rng, group);
    }
    prev = widths[s];
  }
}

Pyramid PyramidEncoder::forward(const ag::Var& x) const {
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] != in_channels_) {
    throw InputError("encoder expects " + std::to_string(in_channels_) + " input channels, got " + shape_string(s));
  }
  if (s[1] % input_multiple_ != 0 || s[2] % input_multiple_ != 0) {
    throw ContractError("encoder input " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                        " is not a multiple of " + std::to_string(input_multiple_) + "; resize before encoding");
  }
  Pyramid out;
  ag::Var h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    h = ag::relu(down_[i].forward(h));
    for (const auto& b : blocks_[i]) h = b.forward(h);
    out[i] = FeatureMap{h, kStageStrides[i]};
  }
  return out;
}

ImageEncoder::ImageEncoder(nn::ParameterSet& ps, const EncoderConfig& cfg, Rng& rng, const std::string& group)
    : net_(ps, "image_encoder", cfg.image_channels, cfg.resolved_image_widths(), cfg.depths, cfg.input_multiple, rng,
           group) {}

Pyramid ImageEncoder::forward(const ag::Var& image) const { return net_.forward(image); }

EventEncoder::EventEncoder(nn::ParameterSet& ps, const EncoderConfig& cfg, Rng& rng, const std::string& group)
    : net_(ps, "event_encoder", cfg.voxel_bins, cfg.resolved_event_widths(), cfg.depths, cfg.input_multiple, rng,
           group),
      bins_(cfg.voxel_bins) {}

Pyramid EventEncoder::forward(const ag::Var& voxels) const {
  const auto& s = voxels.shape();
  if (s.size() != 3) throw InputError("event encoder expects a {B,H,W} voxel grid");
  if (s[0] != bins_) {
    throw ConfigError("voxel grid has " + std::to_string(s[0]) + " bins, encoder configured for " +
                      std::to_string(bins_));
  }
  return net_.forward(voxels);
}

EdgeResolver::EdgeResolver(nn::ParameterSet& ps, const std::array<int, 4>& widths, int dim, Rng& rng,
                           const std::string& group) {
  for (std::size_t s = 0; s < 4; ++s) {
    proj_[s] = nn::Linear(ps, "resolver.proj" + std::to_string(s), widths[s], dim, rng, group);
  }
  refine_ = nn::ResidualBlock(ps, "resolver.refine", dim, 2, rng, group);
}

ResolvedImage EdgeResolver::forward(const Pyramid& pyramid) const {
  for (const auto& f : pyramid) {
    if (!f.data.defined()) throw InputError("edge resolver needs all four pyramid stages");
  }
  const auto& base = pyramid[0].data.value();
  const int h = base.height(), w = base.width();
  ag::Var acc = proj_[0].forward(pyramid[0].data);
  for (std::size_t s = 1; s < 4; ++s) {
    acc = ag::add(acc, ag::resize_bilinear(proj_[s].forward(pyramid[s].data), h, w));
  }
  return ResolvedImage{acc, refine_.forward(acc)};
}

EdgeEncoder::EdgeEncoder(nn::ParameterSet& ps, const std::string& name, int in_channels, int dim, Rng& rng,
                         const std::string& group)
    : conv_(ps, name + ".conv", in_channels, dim, 3, 1, 1, rng, group), proj_(ps, name + ".proj", dim, dim, rng, group) {}

ag::Var EdgeEncoder::forward(const ag::Var& e, int latent_h, int latent_w) const {
  ag::Var out = proj_.forward(ag::relu(conv_.forward(e)));
  const auto& v = out.value();
  if (v.height() != latent_h || v.width() != latent_w) {
    spdlog::warn("edge encoder output {}x{} resampled to latent grid {}x{}", v.height(), v.width(), latent_h, latent_w);
    out = ag::resize_bilinear(out, latent_h, latent_w);
  }
  return out;
}

}  // namespace esc::enc
