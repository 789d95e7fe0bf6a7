#pragma once

#include <cstdint>
#include <random>

namespace esc {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent per-stream seeds from
// (seed, index) pairs so batch generation order never changes outputs.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(derive_seed(seed, stream)); }

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace esc
