#pragma once

#include "seldiff/denoiser.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/rng.hpp"

namespace testutil {

inline seldiff::nn::DenoiserConfig tiny_config(std::size_t D = 1, std::size_t L = 16, std::size_t blocks = 1,
                                               std::size_t latent = 8) {
  seldiff::nn::DenoiserConfig c;
  c.n_blocks = blocks;
  c.latent_dim = latent;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.n_features = D;
  c.window_len = L;
  c.max_step = 50;
  return c;
}

// Fresh init plus a random output head, so the prediction depends on every
// parameter.
inline seldiff::nn::DenoiserParams live_model(const seldiff::nn::DenoiserConfig& c, std::uint64_t seed) {
  seldiff::Rng rng = seldiff::make_rng(seed, 1);
  auto p = seldiff::nn::DenoiserParams::init(c, rng);
  p.head2.weight.mutable_value() = seldiff::rand_uniform(p.head2.weight.shape(), -0.5, 0.5, rng);
  p.head2.bias.mutable_value() = seldiff::rand_uniform(p.head2.bias.shape(), -0.1, 0.1, rng);
  return p;
}

}  // namespace testutil
