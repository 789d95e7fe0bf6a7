#include "esc/isp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "esc/error.hpp"
#include "esc/rng.hpp"

namespace esc::data {

IspConfig IspConfig::identity() {
  IspConfig c;
  c.gain = 1.0;
  c.wb = {1.0, 1.0, 1.0};
  c.ccm = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  c.gamma = 1.0;
  c.tone_curve = false;
  return c;
}

int bggr_channel(int y, int x) {
  const bool odd_y = (y & 1) != 0, odd_x = (x & 1) != 0;
  if (!odd_y && !odd_x) return 2;
  if (odd_y && odd_x) return 0;
  return 1;
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

double smoothstep_inverse(double y) {
  y = std::clamp(y, 0.0, 1.0);
  return 0.5 - std::sin(std::asin(1.0 - 2.0 * y) / 3.0);
}

namespace {

int mirror(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

using Mat3 = Eigen::Matrix3d;

Mat3 ccm_matrix(const IspConfig& cfg) {
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = cfg.ccm[static_cast<std::size_t>(r * 3 + c)];
  }
  return m;
}

}  // namespace

Tensor demosaic_bilinear(const Tensor& mosaic) {
  const int h = mosaic.height(), w = mosaic.width();
  Tensor rgb({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int own = bggr_channel(y, x);
      for (int c = 0; c < 3; ++c) {
        if (c == own) {
          rgb.at(c, y, x) = mosaic.at(0, y, x);
          continue;
        }
        // Average the same-channel sites in the 3x3 neighbourhood (mirrored
        // indices keep the BGGR phase).
        double acc = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = mirror(y + dy, h), xx = mirror(x + dx, w);
            if (bggr_channel(yy, xx) == c) {
              acc += mosaic.at(0, yy, xx);
              ++n;
            }
          }
        }
        rgb.at(c, y, x) = acc / n;
      }
    }
  }
  return rgb;
}

Tensor isp_forward(const Tensor& raw, const IspConfig& cfg) {
  if (raw.rank() != 3 || raw.channels() != 1) throw InputError("isp_forward expects a {1,H,W} mosaic");
  const int h = raw.height(), w = raw.width();
  if (h % 2 != 0 || w % 2 != 0) throw InputError("isp_forward: BGGR mosaic needs even dimensions");
  Tensor balanced({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      balanced.at(0, y, x) = raw.at(0, y, x) * cfg.gain * cfg.wb[static_cast<std::size_t>(bggr_channel(y, x))];
    }
  }
  Tensor rgb = demosaic_bilinear(balanced);
  const Mat3 m = ccm_matrix(cfg);
  const auto cells = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < cells; ++i) {
    const Eigen::Vector3d v(rgb[i], rgb[cells + i], rgb[2 * cells + i]);
    const Eigen::Vector3d o = m * v;
    for (int c = 0; c < 3; ++c) {
      double x = std::clamp(o[c], 0.0, 1.0);
      if (cfg.gamma != 1.0) x = std::pow(x, 1.0 / cfg.gamma);
      if (cfg.tone_curve) x = smoothstep(x);
      rgb[c * cells + i] = std::clamp(std::isfinite(x) ? x : 0.0, 0.0, 1.0);
    }
  }
  return rgb;
}

Tensor isp_unprocess(const Tensor& rgb, const IspConfig& cfg) {
  if (rgb.rank() != 3 || rgb.channels() != 3) throw InputError("isp_unprocess expects a {3,H,W} image");
  const int h = rgb.height(), w = rgb.width();
  const auto cells = static_cast<std::size_t>(h) * w;
  const Mat3 inv = ccm_matrix(cfg).inverse();
  Tensor raw({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      Eigen::Vector3d v;
      for (int c = 0; c < 3; ++c) {
        double s = std::clamp(rgb[c * cells + i], 0.0, 1.0);
        if (cfg.tone_curve) s = smoothstep_inverse(s);
        if (cfg.gamma != 1.0) s = std::pow(s, cfg.gamma);
        v[c] = s;
      }
      const Eigen::Vector3d lin = inv * v;
      const int c = bggr_channel(y, x);
      raw.at(0, y, x) = lin[c] / (cfg.wb[static_cast<std::size_t>(c)] * cfg.gain);
    }
  }
  return raw;
}

Tensor lowlight_simulate(const Tensor& rgb, const LowLightConfig& cfg, std::uint64_t seed) {
  if (!(cfg.attenuation > 0.0) || cfg.attenuation > 1.0) {
    throw ConfigError("low-light attenuation must lie in (0, 1], got " + std::to_string(cfg.attenuation));
  }
  if (cfg.shot_noise_scale < 0.0) throw ConfigError("shot noise scale must be >= 0");
  Tensor raw = isp_unprocess(rgb, cfg.isp);
  Rng rng = make_rng(seed, 0x1017);
  for (auto& v : raw.values()) {
    v *= cfg.attenuation;
    if (cfg.shot_noise_scale > 0.0) v += normal(rng, 0.0, std::sqrt(cfg.shot_noise_scale * std::max(v, 0.0)));
  }
  return isp_forward(raw, cfg.isp);
}

double mean_pixel_value(const Tensor& rgb) { return rgb.empty() ? 0.0 : rgb.sum() / static_cast<double>(rgb.size()); }

double calibrate_attenuation(std::span<const Tensor> images, double target_mean, LowLightConfig cfg,
                             std::uint64_t seed, int iterations) {
  if (images.empty()) throw InputError("calibrate_attenuation: no images");
  auto response = [&](double a) {
    cfg.attenuation = a;
    double m = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) m += mean_pixel_value(lowlight_simulate(images[i], cfg, seed + i));
    return m / static_cast<double>(images.size());
  };
  double lo = 1e-6, hi = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const double mid = std::sqrt(lo * hi);  // the response spans decades
    (response(mid) < target_mean ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw InputError("psnr: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = acc / static_cast<double>(std::max<std::size_t>(a.size(), 1));
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

}  // namespace esc::data
