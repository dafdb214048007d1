#pragma once

// Noise-prediction network: a stack of residual blocks, each with a temporal
// transformer layer (attention along the window) and a feature transformer
// layer (attention across features), a gated tanh/sigmoid unit and split
// residual/skip projections. The diffusion step enters through a sinusoidal
// embedding followed by two SiLU layers.
//
// Internal activations use a channels-last layout (B, D, L, d).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seldiff/autodiff.hpp"
#include "seldiff/error.hpp"
#include "seldiff/optim.hpp"
#include "seldiff/rng.hpp"

namespace seldiff::nn {

inline constexpr std::size_t kStepEmbedDim = 128;

struct DenoiserConfig {
  std::size_t n_blocks = 8;
  std::size_t latent_dim = 64;
  std::size_t n_heads = 8;
  std::size_t ff_dim = 64;
  std::size_t step_embed_dim = kStepEmbedDim;
  std::size_t n_features = 1;
  std::size_t window_len = 100;
  std::size_t max_step = 50;  // largest diffusion step index the model sees

  void validate() const {
    std::string problems;
    auto need = [&](bool ok, const char* what) {
      if (!ok) problems += std::string(problems.empty() ? "" : "; ") + what;
    };
    need(n_blocks > 0, "n_blocks must be positive");
    need(latent_dim > 0, "latent_dim must be positive");
    need(n_heads > 0, "n_heads must be positive");
    need(n_heads > 0 && latent_dim % n_heads == 0, "latent_dim must be divisible by n_heads");
    need(ff_dim > 0, "ff_dim must be positive");
    need(step_embed_dim == kStepEmbedDim, "step_embed_dim must be 128");
    need(n_features > 0, "n_features must be positive");
    need(window_len > 0, "window_len must be positive");
    need(max_step > 0, "max_step must be positive");
    if (!problems.empty()) fail(ErrorKind::kConfig, "DenoiserConfig: ", problems);
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct Linear {
  ad::Var weight;  // (in, out)
  ad::Var bias;    // (out)
};

struct Norm {
  ad::Var gain;
  ad::Var bias;
};

struct TransformerLayer {
  Linear qkv, proj, ff1, ff2;
  Norm norm1, norm2;
};

struct ResidualBlock {
  Linear step_proj;
  TransformerLayer time, feature;
  Linear mid, out;
};

/// Sinusoidal table entry for position `pos` and channel `j` of a `dim`-wide
/// encoding: sines in the first half, cosines in the second, frequencies on
/// a geometric ladder 1 / 10000^(i / half).
inline double sinusoid(double pos, std::size_t j, std::size_t dim) {
  const std::size_t half = dim / 2;
  const std::size_t i = j < half ? j : j - half;
  const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
  return j < half ? std::sin(pos * freq) : std::cos(pos * freq);
}

/// (n, dim) table of sinusoidal encodings for positions 0..n-1.
inline NdArray sinusoid_table(std::size_t n, std::size_t dim) {
  NdArray out(Shape{n, dim});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < dim; ++j)
      out[p * dim + j] = sinusoid(static_cast<double>(p), j, dim);
  return out;
}

/// Raw 128-wide step encoding before the learned layers. Accepts t = 0.
inline NdArray raw_step_embedding(double t, std::size_t dim = kStepEmbedDim) {
  NdArray out(Shape{dim});
  for (std::size_t j = 0; j < dim; ++j) out[j] = sinusoid(t, j, dim);
  return out;
}

class DenoiserParams {
 public:
  DenoiserConfig config;
  Linear input;
  Linear step_fc1, step_fc2;
  std::vector<ResidualBlock> blocks;
  Linear head1, head2;
  NdArray feature_pe;  // (D, d), fixed sinusoidal table; not trained

  /// Uniform(+-1/sqrt(fan_in)) weights and biases; the final head projection
  /// is zero so an untrained model predicts zero noise everywhere.
  static DenoiserParams init(const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    DenoiserParams p;
    p.config = cfg;
    const std::size_t d = cfg.latent_dim;
    const std::size_t e = cfg.step_embed_dim;
    auto linear = [&](std::size_t in, std::size_t out) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      return Linear{ad::Var::param(rand_uniform({in, out}, -bound, bound, rng)),
                    ad::Var::param(rand_uniform({out}, -bound, bound, rng))};
    };
    auto norm = [&](std::size_t n) {
      return Norm{ad::Var::param(NdArray({n}, 1.0)), ad::Var::param(NdArray({n}, 0.0))};
    };
    auto layer = [&]() {
      TransformerLayer t;
      t.qkv = linear(d, 3 * d);
      t.proj = linear(d, d);
      t.ff1 = linear(d, cfg.ff_dim);
      t.ff2 = linear(cfg.ff_dim, d);
      t.norm1 = norm(d);
      t.norm2 = norm(d);
      return t;
    };
    p.input = linear(1, d);
    p.step_fc1 = linear(e, e);
    p.step_fc2 = linear(e, e);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      ResidualBlock blk;
      blk.step_proj = linear(e, d);
      blk.time = layer();
      blk.feature = layer();
      blk.mid = linear(d, 2 * d);
      blk.out = linear(d, 2 * d);
      p.blocks.push_back(std::move(blk));
    }
    p.head1 = linear(d, d);
    p.head2 = Linear{ad::Var::param(NdArray({d, 1}, 0.0)), ad::Var::param(NdArray({1}, 0.0))};
    p.feature_pe = sinusoid_table(cfg.n_features, d);
    return p;
  }

  /// Trainable tensors in a fixed order; the Vars share storage with *this.
  std::vector<ad::NamedParam> named() const {
    std::vector<ad::NamedParam> out;
    auto lin = [&](const std::string& name, const Linear& l) {
      out.push_back({name + ".weight", l.weight});
      out.push_back({name + ".bias", l.bias});
    };
    auto nrm = [&](const std::string& name, const Norm& n) {
      out.push_back({name + ".gain", n.gain});
      out.push_back({name + ".bias", n.bias});
    };
    auto tl = [&](const std::string& name, const TransformerLayer& t) {
      lin(name + ".qkv", t.qkv);
      lin(name + ".proj", t.proj);
      nrm(name + ".norm1", t.norm1);
      lin(name + ".ff1", t.ff1);
      lin(name + ".ff2", t.ff2);
      nrm(name + ".norm2", t.norm2);
    };
    lin("input", input);
    lin("step.fc1", step_fc1);
    lin("step.fc2", step_fc2);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string pre = "block" + std::to_string(b);
      lin(pre + ".step_proj", blocks[b].step_proj);
      tl(pre + ".time", blocks[b].time);
      tl(pre + ".feature", blocks[b].feature);
      lin(pre + ".mid", blocks[b].mid);
      lin(pre + ".out", blocks[b].out);
    }
    lin("head1", head1);
    lin("head2", head2);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.var.size();
    return n;
  }

  /// Deep copy with independent storage.
  DenoiserParams clone() const {
    DenoiserParams c = shaped_like(config);
    auto src = named();
    auto dst = c.named();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value();
    c.feature_pe = feature_pe;
    return c;
  }

  /// Parameters with the right shapes for `cfg`, zero-filled.
  static DenoiserParams shaped_like(const DenoiserConfig& cfg) {
    Rng rng = make_rng(0);
    DenoiserParams p = init(cfg, rng);
    for (auto& np : p.named()) np.var.mutable_value().fill(0.0);
    return p;
  }

  bool all_finite() const {
    for (const auto& p : named())
      if (!p.var.value().all_finite()) return false;
    return feature_pe.all_finite();
  }
};

/// Closed-form trainable parameter count for a configuration.
inline std::size_t expected_parameter_count(const DenoiserConfig& c) {
  const std::size_t d = c.latent_dim, e = c.step_embed_dim, f = c.ff_dim;
  const std::size_t layer = (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
  const std::size_t block = (e * d + d) + 2 * layer + 2 * (d * 2 * d + 2 * d);
  return (d + d) + 2 * (e * e + e) + c.n_blocks * block + (d * d + d) + (d + 1);
}

namespace detail {

inline ad::Var linear(const ad::Var& x, const Linear& l) {
  return ad::add(ad::matmul(x, l.weight), l.bias);
}

/// Multi-head self-attention over axis 1 of x: (S, n, d) -> (S, n, d).
inline ad::Var self_attention(const ad::Var& x, const Linear& qkv, const Linear& proj,
                              std::size_t heads) {
  const std::size_t s = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  const std::size_t dh = d / heads;
  ad::Var packed = linear(x, qkv);
  auto split = [&](std::size_t which) {
    ad::Var part = ad::slice(packed, 2, which * d, d);
    return ad::reshape(part, {s, n, heads, dh});
  };
  ad::Var q = ad::reshape(ad::permute(split(0), {0, 2, 1, 3}), {s * heads, n, dh});
  ad::Var kt = ad::reshape(ad::permute(split(1), {0, 2, 3, 1}), {s * heads, dh, n});
  ad::Var v = ad::reshape(ad::permute(split(2), {0, 2, 1, 3}), {s * heads, n, dh});
  ad::Var scores = ad::scale(ad::matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  ad::Var ctx = ad::matmul(ad::softmax(scores), v);
  ctx = ad::reshape(ad::permute(ad::reshape(ctx, {s, heads, n, dh}), {0, 2, 1, 3}), {s, n, d});
  return linear(ctx, proj);
}

/// Post-norm transformer encoder layer on (S, n, d).
inline ad::Var transformer_layer(const ad::Var& x, const TransformerLayer& t,
                                 std::size_t heads) {
  ad::Var h = ad::layer_norm(ad::add(x, self_attention(x, t.qkv, t.proj, heads)),
                             t.norm1.gain, t.norm1.bias);
  ad::Var ff = linear(ad::gelu(linear(h, t.ff1)), t.ff2);
  return ad::layer_norm(ad::add(h, ff), t.norm2.gain, t.norm2.bias);
}

}  // namespace detail

/// Step embedding after the two learned SiLU layers; steps: (B) -> (B, 128).
inline ad::Var embed_steps(const DenoiserParams& p, std::span<const std::size_t> steps) {
  const std::size_t e = p.config.step_embed_dim;
  NdArray raw(Shape{steps.size(), e});
  for (std::size_t b = 0; b < steps.size(); ++b) {
    if (steps[b] < 1 || steps[b] > p.config.max_step) {
      fail(ErrorKind::kRange, "embed_step: step ", steps[b], " outside [1, ",
           p.config.max_step, "]");
    }
    NdArray r = raw_step_embedding(static_cast<double>(steps[b]), e);
    std::copy(r.data().begin(), r.data().end(), raw.data().begin() + b * e);
  }
  ad::Var h = ad::silu(detail::linear(ad::Var::constant(std::move(raw)), p.step_fc1));
  return ad::silu(detail::linear(h, p.step_fc2));
}

/// Single-step convenience; returns the (128) embedding vector.
inline NdArray embed_step(const DenoiserParams& p, std::size_t t) {
  ad::NoGradGuard guard;
  const std::size_t steps[1] = {t};
  return embed_steps(p, steps).value().reshaped({p.config.step_embed_dim});
}

/// eps_theta(x_t, t) for a batch: x (B, D, L), one step per sample -> (B, D, L).
inline ad::Var predict_noise(const DenoiserParams& p, const ad::Var& x,
                             std::span<const std::size_t> steps) {
  const DenoiserConfig& c = p.config;
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != c.n_features || s[2] != c.window_len) {
    fail(ErrorKind::kShape, "predict_noise: input ", shape_str(s), " does not match (B, ",
         c.n_features, ", ", c.window_len, ")");
  }
  if (steps.size() != s[0]) {
    fail(ErrorKind::kShape, "predict_noise: ", steps.size(), " steps for batch of ", s[0]);
  }
  if (!x.value().all_finite()) fail(ErrorKind::kNumeric, "predict_noise: non-finite input");

  const std::size_t B = s[0], D = s[1], L = s[2], d = c.latent_dim;
  const ad::Var time_pe = ad::Var::constant(sinusoid_table(L, d).reshaped({1, 1, L, d}));
  const ad::Var feat_pe = ad::Var::constant(p.feature_pe.reshaped({1, 1, D, d}));

  ad::Var h = ad::relu(detail::linear(ad::reshape(x, {B, D, L, 1}), p.input));
  ad::Var emb = embed_steps(p, steps);

  ad::Var skip_sum;
  const double res_scale = 1.0 / std::sqrt(2.0);
  for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const ResidualBlock& blk = p.blocks[bi];
    ad::Var step_bias = ad::reshape(detail::linear(emb, blk.step_proj), {B, 1, 1, d});
    ad::Var y = ad::add(ad::add(h, step_bias), time_pe);
    y = ad::reshape(detail::transformer_layer(ad::reshape(y, {B * D, L, d}), blk.time, c.n_heads),
                    {B, D, L, d});
    y = ad::add(ad::permute(y, {0, 2, 1, 3}), feat_pe);
    y = ad::reshape(detail::transformer_layer(ad::reshape(y, {B * L, D, d}), blk.feature,
                                              c.n_heads),
                    {B, L, D, d});
    y = ad::permute(y, {0, 2, 1, 3});
    y = detail::linear(y, blk.mid);
    y = ad::mul(ad::sigmoid(ad::slice(y, 3, 0, d)), ad::tanh(ad::slice(y, 3, d, d)));
    y = detail::linear(y, blk.out);
    h = ad::scale(ad::add(h, ad::slice(y, 3, 0, d)), res_scale);
    ad::Var skip = ad::slice(y, 3, d, d);
    skip_sum = bi == 0 ? skip : ad::add(skip_sum, skip);
  }
  ad::Var out = ad::scale(skip_sum, 1.0 / std::sqrt(static_cast<double>(p.blocks.size())));
  out = ad::relu(detail::linear(out, p.head1));
  out = detail::linear(out, p.head2);
  return ad::reshape(out, {B, D, L});
}

/// Inference on a single (D, L) window without building a graph.
inline NdArray predict_noise(const DenoiserParams& p, const NdArray& x, std::size_t t) {
  ad::NoGradGuard guard;
  if (x.rank() != 2) {
    fail(ErrorKind::kShape, "predict_noise: expected (D, L), got ", shape_str(x.shape()));
  }
  const std::size_t steps[1] = {t};
  ad::Var in = ad::Var::constant(x.reshaped({1, x.dim(0), x.dim(1)}));
  return predict_noise(p, in, steps).value().reshaped(x.shape());
}

}  // namespace seldiff::nn
