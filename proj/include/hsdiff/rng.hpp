#pragma once

#include <cstdint>
#include <random>

namespace hsdiff {

using Rng = std::mt19937_64;

// splitmix64 finalizer; maps (base, stream) to a well-mixed 64-bit seed.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of stream `index` derived from `base`. Distinct indices give distinct
/// seeds for a fixed base (mix64 is a bijection).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(mix64(base) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t base, std::uint64_t index = 0) {
  return Rng(derive_seed(base, index));
}

}  // namespace hsdiff
