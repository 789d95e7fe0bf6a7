#pragma once

#include <array>
#include <string>
#include <vector>

#include "esc/autograd.hpp"
#include "esc/nn.hpp"

// Small convolutional pyramids for the two modalities, the image edge resolver
// and the per-modality edge encoders into the shared n-dimensional space.
namespace esc::enc {

inline constexpr std::array<int, 4> kStageStrides{4, 8, 16, 32};

struct EncoderConfig {
  int dim = 256;  // n
  // Stage widths; zeros are filled from dim (image n/4,n/2,n,n; events n/8,n/4,n/2,n).
  std::array<int, 4> image_widths{0, 0, 0, 0};
  std::array<int, 4> event_widths{0, 0, 0, 0};
  std::array<int, 4> depths{1, 1, 1, 1};  // residual blocks per stage
  int image_channels = 3;
  int voxel_bins = 5;
  // Input height and width must be multiples of this (32 at full scale).
  int input_multiple = 32;

  [[nodiscard]] std::array<int, 4> resolved_image_widths() const;
  [[nodiscard]] std::array<int, 4> resolved_event_widths() const;
};

struct FeatureMap {
  ag::Var data;  // {C, H, W}
  int stride = 4;
};

using Pyramid = std::array<FeatureMap, 4>;

// Stem conv 7x7/4, then three 3x3/2 downsampling convs; residual blocks after each.
class PyramidEncoder {
 public:
  PyramidEncoder() = default;
  PyramidEncoder(nn::ParameterSet& ps, const std::string& prefix, int in_channels, const std::array<int, 4>& widths,
                 const std::array<int, 4>& depths, int input_multiple, Rng& rng, const std::string& group);
  [[nodiscard]] Pyramid forward(const ag::Var& x) const;
  [[nodiscard]] int in_channels() const noexcept { return in_channels_; }
  [[nodiscard]] const std::array<int, 4>& widths() const noexcept { return widths_; }

 private:
  int in_channels_ = 0;
  int input_multiple_ = 32;
  std::array<int, 4> widths_{};
  std::array<nn::Conv2d, 4> down_;
  std::array<std::vector<nn::ResidualBlock>, 4> blocks_;
};

// f_I: image {3, H, W} -> pyramid. Throws ContractError if H or W is not a
// multiple of input_multiple.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParameterSet& ps, const EncoderConfig& cfg, Rng& rng, const std::string& group = "backbone");
  [[nodiscard]] Pyramid forward(const ag::Var& image) const;

 private:
  PyramidEncoder net_;
};

// f_E: voxel grid {B, H, W} -> pyramid. Throws ConfigError on a bin mismatch.
class EventEncoder {
 public:
  EventEncoder() = default;
  EventEncoder(nn::ParameterSet& ps, const EncoderConfig& cfg, Rng& rng, const std::string& group = "backbone");
  [[nodiscard]] Pyramid forward(const ag::Var& voxels) const;
  [[nodiscard]] int bins() const noexcept { return bins_; }

 private:
  PyramidEncoder net_;
  int bins_ = 5;
};

struct ResolvedImage {
  ag::Var context;  // F^I at stride 4: per-stage 1x1 projections to n, upsampled and summed
  ag::Var edges;    // E^I: residual refinement of the context map
};

// f_R. Only the image branch goes through here.
class EdgeResolver {
 public:
  EdgeResolver() = default;
  EdgeResolver(nn::ParameterSet& ps, const std::array<int, 4>& widths, int dim, Rng& rng,
               const std::string& group = "decoder");
  [[nodiscard]] ResolvedImage forward(const Pyramid& pyramid) const;

 private:
  std::array<nn::Linear, 4> proj_;
  nn::ResidualBlock refine_;
};

// conv3x3 (in -> n), ReLU, 1x1 (n -> n). Output is resampled to the latent grid
// when its size differs (logged).
class EdgeEncoder {
 public:
  EdgeEncoder() = default;
  EdgeEncoder(nn::ParameterSet& ps, const std::string& name, int in_channels, int dim, Rng& rng,
              const std::string& group = "decoder");
  [[nodiscard]] ag::Var forward(const ag::Var& e, int latent_h, int latent_w) const;

 private:
  nn::Conv2d conv_;
  nn::Linear proj_;
};

}  // namespace esc::enc
