#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace splm {

using Rng = std::mt19937_64;

// All randomness descends from one root seed. Each consumer derives its own
// stream from (parent seed, label) so adding a consumer never shifts the
// numbers another one sees.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(parent, h);
}

inline Rng make_rng(std::uint64_t parent, std::string_view label) {
  return Rng(derive_seed(parent, label));
}

}  // namespace splm
