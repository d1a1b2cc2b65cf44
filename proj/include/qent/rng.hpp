#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace qent {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream keyed by (seed, path...). Streams for distinct paths
/// are uncorrelated for practical purposes, so work split across threads can
/// draw from per-item streams and stay schedule independent.
inline Rng derive_rng(std::uint64_t seed,
                      std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t state = splitmix64(seed);
  for (std::uint64_t key : path) {
    state = splitmix64(state ^ splitmix64(key + 0x632BE59BD9B4E019ULL));
  }
  return Rng(state);
}

// Stream tags, so that different consumers of one seed never collide.
namespace stream {
inline constexpr std::uint64_t kSampler = 0x5A11;
inline constexpr std::uint64_t kBell = 0xBE11;
inline constexpr std::uint64_t kShuffle = 0x5B0F;
inline constexpr std::uint64_t kForest = 0xF0E5;
inline constexpr std::uint64_t kMlpInit = 0x1A17;
inline constexpr std::uint64_t kMlpEpoch = 0xE90C;
inline constexpr std::uint64_t kMlpSplit = 0x5917;
inline constexpr std::uint64_t kNoise = 0x0015;
inline constexpr std::uint64_t kBackground = 0xBA6C;
inline constexpr std::uint64_t kPermutation = 0x9E73;
inline constexpr std::uint64_t kSubset = 0x50B5;
}  // namespace stream

}  // namespace qent
