#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ssmnav {

/// splitmix64 finalizer; mixes a key into a well-spread 64-bit value.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a stream seed from a tuple of keys, order-sensitive.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto k : keys) h = mix64(h ^ mix64(k));
  return h;
}

inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
  return std::mt19937_64(derive_seed(keys));
}

}  // namespace ssmnav
