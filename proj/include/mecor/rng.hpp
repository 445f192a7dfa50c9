#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mecor {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t kDefaultSeed = 20210611;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of an independent sub-stream identified by a path of indices below
/// `seed`. Work units (repetitions, bootstrap replicates, pseudo-datasets)
/// each take their own stream so results never depend on scheduling order.
constexpr std::uint64_t stream_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(seed);
  for (std::uint64_t p : path) {
    s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  }
  return s;
}

inline Engine make_engine(std::uint64_t seed) { return Engine{seed}; }

} // namespace mecor
