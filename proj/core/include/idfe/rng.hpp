#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace idfe {

// splitmix64 finalizer; decorrelates derived seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive a stream seed from a base seed and a path of indices, e.g.
// (seed, epoch, step) or (seed, domain, class, utterance).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(base);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x517cc1b727220a95ULL));
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace idfe
