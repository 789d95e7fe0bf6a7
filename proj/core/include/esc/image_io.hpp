#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "esc/tensor.hpp"

namespace esc::io {

struct Image8 {
  int width = 0, height = 0, channels = 0;  // channels 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;         // interleaved, row-major
};

void write_png(const std::filesystem::path& path, const Image8& img);
// Gray, gray+alpha, RGB and RGBA inputs; alpha is dropped, 16-bit is reduced to 8.
Image8 read_png(const std::filesystem::path& path);

// {3, H, W} in [0,1] <-> 8-bit RGB (round to nearest, clamped).
Image8 to_image8(const Tensor& rgb);
Tensor from_image8(const Image8& img);

}  // namespace esc::io
