#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "esc/tensor.hpp"

// Camera pipeline on BGGR mosaics and its inverse, plus RAW-domain low-light
// degradation. RGB images are {3, H, W} in [0, 1]; mosaics are {1, H, W}.
namespace esc::data {

struct IspConfig {
  double gain = 1.0;
  std::array<double, 3> wb{2.0, 1.0, 1.6};  // R, G, B multipliers
  // Camera RGB -> sRGB-linear; rows sum to 1 so gray stays gray.
  std::array<double, 9> ccm{1.60, -0.45, -0.15,
                            -0.25, 1.45, -0.20,
                            -0.05, -0.40, 1.45};
  double gamma = 2.2;
  bool tone_curve = true;  // smoothstep 3x^2 - 2x^3

  // Unit gains, identity CCM, gamma 1, no tone curve.
  static IspConfig identity();
};

// Bayer channel (0 = R, 1 = G, 2 = B) at (y, x) for the BGGR pattern.
int bggr_channel(int y, int x);

// gain -> white balance -> bilinear demosaic -> CCM -> gamma -> tone map -> clip.
// Throws InputError on odd dimensions.
Tensor isp_forward(const Tensor& raw, const IspConfig& cfg = {});

// Inverse tone map -> inverse gamma -> inverse CCM -> inverse WB -> inverse gain -> BGGR sampling.
Tensor isp_unprocess(const Tensor& rgb, const IspConfig& cfg = {});

double smoothstep(double x);
double smoothstep_inverse(double y);

// Bilinear demosaic of a white-balanced BGGR mosaic, mirrored at the borders.
Tensor demosaic_bilinear(const Tensor& mosaic);

struct LowLightConfig {
  double attenuation = 0.05;       // (0, 1]
  double shot_noise_scale = 2e-4;  // noise variance = scale * signal
  IspConfig isp;
};

// unprocess -> attenuate -> add N(0, scale * signal) -> forward ISP.
// Throws ConfigError for attenuation outside (0, 1].
Tensor lowlight_simulate(const Tensor& rgb, const LowLightConfig& cfg, std::uint64_t seed);

double mean_pixel_value(const Tensor& rgb);

// Attenuation whose low-light output hits `target_mean` (in [0,1] units) on
// average over `images`, found by bisection on the monotone mean response.
double calibrate_attenuation(std::span<const Tensor> images, double target_mean, LowLightConfig cfg,
                             std::uint64_t seed, int iterations = 40);

// Peak 1.0.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace esc::data
