#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace refit {

using Seed = std::uint64_t;
using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr Seed derive_seed(Seed base, std::uint64_t a) noexcept { return mix64(base ^ mix64(a)); }

constexpr Seed derive_seed(Seed base, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(base, a), b);
}

// Named sub-stream ("data", "init", "rollout", ...). FNV-1a over the name.
constexpr Seed derive_seed(Seed base, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(base, h);
}

constexpr Seed derive_seed(Seed base, std::string_view stream, std::uint64_t index) noexcept {
  return derive_seed(derive_seed(base, stream), index);
}

inline Rng make_rng(Seed s) { return Rng(s); }

}  // namespace refit
