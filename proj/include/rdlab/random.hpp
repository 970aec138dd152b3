#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rdlab {

// Seed streams
// ------------
// Every stochastic routine takes an explicit 64-bit seed. Independent
// sub-streams (replications, panels, participant slots) are derived with
//
//   derive_seed(seed, i) = mix64(seed ^ mix64(i + 1) * 0x9E3779B97F4A7C15)
//
// where mix64 is the SplitMix64 output finalizer. The derivation is a pure
// function, so replication i of a Monte Carlo run is reproducible in
// isolation and the result does not depend on thread scheduling.

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// SplitMix64 step: advances `state` and returns the next output.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += kGoldenGamma;
  return mix64(state);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(seed ^ (mix64(stream + 1) * kGoldenGamma));
}

/// Two-level derivation, e.g. (master, arm, slot).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) {
  std::uint64_t state = seed;
  std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(state)),
                    static_cast<std::uint32_t>(splitmix64(state)),
                    static_cast<std::uint32_t>(splitmix64(state)),
                    static_cast<std::uint32_t>(splitmix64(state))};
  return Rng(seq);
}

/// 64-bit FNV-1a, used for content hashes of generated artifacts.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace rdlab
