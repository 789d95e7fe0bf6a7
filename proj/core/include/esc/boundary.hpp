#pragma once

#include <cstdint>
#include <vector>

namespace esc::events {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kDefaultClasses = 11;

// Per-pixel class ids in 1..classes, or kIgnoreLabel. Row-major.
struct SemanticMask {
  int height = 0;
  int width = 0;
  int classes = kDefaultClasses;
  std::vector<std::uint8_t> labels;

  SemanticMask() = default;
  SemanticMask(int h, int w, std::uint8_t fill, int c = kDefaultClasses)
      : height(h), width(w), classes(c), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  void validate() const;

  friend bool operator==(const SemanticMask&, const SemanticMask&) = default;
};

// Binary semantic edge map (0/1), row-major.
struct BoundaryMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> edges;

  BoundaryMap() = default;
  BoundaryMap(int h, int w) : height(h), width(w), edges(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return edges[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const { return edges[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::size_t count() const;

  friend bool operator==(const BoundaryMap&, const BoundaryMap&) = default;
};

// A pixel is an edge iff the mean label over its kernel x kernel window differs
// from its own label. Ignored pixels are never edges and are left out of their
// neighbours' means; so are out-of-frame taps.
BoundaryMap extract_boundary(const SemanticMask& mask, int kernel = 3);

// `iters` rounds of 3x3 binary dilation.
BoundaryMap dilate_boundary(const BoundaryMap& b, int iters);

}  // namespace esc::events
