#pragma once

#include <cstdint>
#include <random>

namespace scaleup {

// splitmix64, used to derive independent stream seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for sub-stream `index` of a base seed; stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t state = base ^ (0xd1b54a32d192ed03ULL * (index + 1));
  splitmix64(state);
  return splitmix64(state);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::uint64_t index) { return Rng(derive_seed(base, index)); }

}  // namespace scaleup
