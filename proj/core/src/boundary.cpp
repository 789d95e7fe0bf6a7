#include "esc/boundary.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "esc/error.hpp"

namespace esc::events {

void SemanticMask::validate() const {
  if (labels.size() != static_cast<std::size_t>(height) * width) throw InputError("mask size does not match dimensions");
  for (auto v : labels) {
    if (v != kIgnoreLabel && (v < 1 || v > classes)) {
      throw InputError("mask label " + std::to_string(v) + " outside 1.." + std::to_string(classes));
    }
  }
}

std::size_t BoundaryMap::count() const {
  return static_cast<std::size_t>(std::count(edges.begin(), edges.end(), std::uint8_t{1}));
}

BoundaryMap extract_boundary(const SemanticMask& mask, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) throw ConfigError("boundary kernel must be odd and >= 3, got " + std::to_string(kernel));
  mask.validate();
  const int r = kernel / 2;
  BoundaryMap out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const int center = mask.at(y, x);
      if (center == kIgnoreLabel) continue;
      long sum = 0, count = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= mask.height) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= mask.width) continue;
          const int v = mask.at(yy, xx);
          if (v == kIgnoreLabel) continue;
          sum += v;
          ++count;
        }
      }
      // mean != center, compared exactly in integers.
      out.at(y, x) = (sum != static_cast<long>(center) * count) ? 1 : 0;
    }
  }
  return out;
}

BoundaryMap dilate_boundary(const BoundaryMap& b, int iters) {
  if (iters < 0) throw ConfigError("dilation iterations must be >= 0");
  BoundaryMap cur = b;
  for (int it = 0; it < iters; ++it) {
    BoundaryMap next(b.height, b.width);
    for (int y = 0; y < b.height; ++y) {
      for (int x = 0; x < b.width; ++x) {
        std::uint8_t v = 0;
        for (int dy = -1; dy <= 1 && !v; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= b.height) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx >= 0 && xx < b.width && cur.at(yy, xx)) {
              v = 1;
              break;
            }
          }
        }
        next.at(y, x) = v;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace esc::events
