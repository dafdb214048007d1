#pragma once

#include <cstdint>
#include <random>

#include "seldiff/ndarray.hpp"

namespace seldiff {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Generator for sub-stream `stream` of job `seed`. Distinct (seed, stream)
/// pairs give unrelated generator states.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(mix_seed(seed) >> 32),
                    static_cast<std::uint32_t>(mix_seed(seed)),
                    static_cast<std::uint32_t>(mix_seed(stream ^ 0xA5A5A5A5ull) >> 32),
                    static_cast<std::uint32_t>(mix_seed(stream ^ 0xA5A5A5A5ull))};
  return Rng(seq);
}

inline NdArray randn(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NdArray out(shape);
  for (double& v : out.storage()) v = normal(rng);
  return out;
}

inline NdArray rand_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> uni(lo, hi);
  NdArray out(shape);
  for (double& v : out.storage()) v = uni(rng);
  return out;
}

}  // namespace seldiff
