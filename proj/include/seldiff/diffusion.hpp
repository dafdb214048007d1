#pragma once

// Noise schedule, closed-form forward corruption, masked Gaussian noise,
// the split training loss and the two reverse procedures (noisy and
// noiseless).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seldiff/autodiff.hpp"
#include "seldiff/denoiser.hpp"
#include "seldiff/error.hpp"
#include "seldiff/optim.hpp"
#include "seldiff/rng.hpp"

namespace seldiff::diffusion {

/// How the clean input is scaled when entering step t.
///   kStandardSqrt: sqrt(alpha_bar_t) * x0, consistent with q(x_t | x0).
///   kPaperLiteral: alpha_bar_t * x0, as written in the algorithm listings.
/// The reverse update always divides by sqrt(alpha_t).
enum class ScaleMode { kStandardSqrt, kPaperLiteral };

inline std::string_view to_string(ScaleMode m) {
  return m == ScaleMode::kStandardSqrt ? "standard-sqrt" : "paper-literal";
}

inline ScaleMode parse_scale_mode(std::string_view s) {
  if (s == "standard-sqrt") return ScaleMode::kStandardSqrt;
  if (s == "paper-literal") return ScaleMode::kPaperLiteral;
  fail(ErrorKind::kConfig, "unknown scale_mode '", s, "' (standard-sqrt | paper-literal)");
}

/// Per-step coefficient tables; all accessors take the 1-based step t.
class NoiseSchedule {
 public:
  static NoiseSchedule build(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) fail(ErrorKind::kRange, "build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
      fail(ErrorKind::kRange, "build_schedule: need 0 < beta_start < beta_end < 1, got ",
           beta_start, ", ", beta_end);
    }
    NoiseSchedule s;
    s.steps_ = steps;
    s.beta_.resize(steps);
    if (steps == 1) {
      s.beta_[0] = beta_end;
    } else {
      const double step = (beta_end - beta_start) / static_cast<double>(steps - 1);
      for (std::size_t i = 0; i < steps; ++i) {
        s.beta_[i] = beta_start + static_cast<double>(i) * step;
      }
      s.beta_[steps - 1] = beta_end;
    }
    s.alpha_.resize(steps);
    s.alpha_bar_.resize(steps);
    s.beta_tilde_.resize(steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      s.alpha_[i] = 1.0 - s.beta_[i];
      const double prev = prod;
      prod *= s.alpha_[i];
      s.alpha_bar_[i] = prod;
      s.beta_tilde_[i] = (1.0 - prev) / (1.0 - prod);
    }
    return s;
  }

  std::size_t steps() const { return steps_; }
  double beta(std::size_t t) const { return beta_.at(t - 1); }
  double alpha(std::size_t t) const { return alpha_.at(t - 1); }
  double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(t - 1); }
  /// (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); zero at t = 1.
  double beta_tilde(std::size_t t) const { return beta_tilde_.at(t - 1); }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  const std::vector<double>& beta_tildes() const { return beta_tilde_; }

  /// Prefactor applied to x0 when forming x_t.
  double input_scale(std::size_t t, ScaleMode mode) const {
    return mode == ScaleMode::kStandardSqrt ? std::sqrt(alpha_bar(t)) : alpha_bar(t);
  }

 private:
  std::size_t steps_ = 0;
  std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_;
};

struct DiffusionConfig {
  std::size_t steps = 50;          // T
  std::size_t reverse_steps = 50;  // S
  double beta_start = 1e-4;
  double beta_end = 0.01;
  ScaleMode scale_mode = ScaleMode::kStandardSqrt;
  double mask_ratio = 0.5;       // p
  double loss_weight = 0.5;      // c
  double inference_noise = 0.0;  // omega; 0 means noiseless

  void validate() const {
    std::string problems;
    auto need = [&](bool ok, const std::string& what) {
      if (!ok) problems += (problems.empty() ? "" : "; ") + what;
    };
    need(steps >= 1, "T must be >= 1");
    need(reverse_steps >= 1 && reverse_steps <= steps, "S must satisfy 1 <= S <= T");
    need(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
         "need 0 < beta_start < beta_end < 1");
    need(mask_ratio >= 0.0 && mask_ratio <= 1.0, "mask_ratio must lie in [0, 1]");
    need(loss_weight >= 0.0 && loss_weight <= 1.0, "loss_weight must lie in [0, 1]");
    need(inference_noise >= 0.0 && inference_noise <= 1.0,
         "inference_noise must lie in [0, 1]");
    if (!problems.empty()) fail(ErrorKind::kConfig, "DiffusionConfig: ", problems);
  }

  NoiseSchedule schedule() const { return NoiseSchedule::build(steps, beta_start, beta_end); }
};

/// x_t = scale(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
inline NdArray forward_corrupt(const NdArray& x0, std::size_t t, const NdArray& eps,
                               const NoiseSchedule& sched, ScaleMode mode) {
  if (eps.shape() != x0.shape()) {
    fail(ErrorKind::kShape, "forward_corrupt: noise ", shape_str(eps.shape()),
         " vs input ", shape_str(x0.shape()));
  }
  if (t < 1 || t > sched.steps()) {
    fail(ErrorKind::kRange, "forward_corrupt: step ", t, " outside [1, ", sched.steps(), "]");
  }
  const double a = sched.input_scale(t, mode);
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  NdArray out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

struct MaskedNoise {
  NdArray noise;  // mask * z
  NdArray mask;   // 0/1
};

/// Elementwise Bernoulli(p) mask times a standard normal draw. A normal is
/// drawn for every element regardless of p, so the stream layout does not
/// depend on the mask ratio.
inline MaskedNoise sample_masked_noise(const Shape& shape, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    fail(ErrorKind::kRange, "sample_masked_noise: p = ", p, " outside [0, 1]");
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  MaskedNoise out{NdArray(shape), NdArray(shape)};
  for (std::size_t i = 0; i < out.noise.size(); ++i) {
    const bool on = uni(rng) < p;
    const double z = normal(rng);
    out.mask[i] = on ? 1.0 : 0.0;
    out.noise[i] = on ? z : 0.0;
  }
  return out;
}

struct LossParts {
  ad::Var total;          // c * noisy + (1 - c) * noiseless
  double noisy = 0.0;     // (1/n) sum over mask==1 of (z - eps_theta)^2
  double noiseless = 0.0; // (1/n) sum over mask==0 of eps_theta^2
};

/// Both parts are normalized by the total element count n, so
/// noisy + noiseless equals the unmasked mean squared error exactly. A part
/// whose partition is empty is zero; c is not renormalized.
inline LossParts masked_loss(const ad::Var& prediction, const MaskedNoise& target,
                             double loss_weight) {
  NdArray keep(target.mask.shape());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = 1.0 - target.mask[i];
  const ad::Var noise = ad::Var::constant(target.noise);
  const ad::Var zeros = ad::Var::constant(NdArray(target.noise.shape(), 0.0));
  ad::Var noisy = ad::squared_error(prediction, noise, &target.mask);
  ad::Var noiseless = ad::squared_error(prediction, zeros, &keep);
  LossParts parts;
  parts.noisy = noisy.value().item();
  parts.noiseless = noiseless.value().item();
  parts.total = ad::add(ad::scale(noisy, loss_weight), ad::scale(noiseless, 1.0 - loss_weight));
  return parts;
}

/// Training objective. Plain Gaussian-noise training is the masked objective
/// with p = 1 and c = 1.
enum class Objective { kMaskedNoise, kDenoisingAutoencoder };

struct StepOutcome {
  LossParts loss;
  std::vector<std::size_t> steps;
};

/// Forward pass and loss for one batch (B, D, L); does not call backward.
inline StepOutcome masked_noise_loss(const nn::DenoiserParams& params, const NdArray& batch,
                                     const NoiseSchedule& sched, const DiffusionConfig& cfg,
                                     Rng& rng) {
  if (batch.rank() != 3) {
    fail(ErrorKind::kShape, "train_step: batch must be (B, D, L), got ",
         shape_str(batch.shape()));
  }
  const std::size_t B = batch.dim(0), per = batch.size() / B;
  std::uniform_int_distribution<std::size_t> pick(1, sched.steps());
  StepOutcome out;
  out.steps.resize(B);
  for (auto& t : out.steps) t = pick(rng);
  MaskedNoise noise = sample_masked_noise(batch.shape(), cfg.mask_ratio, rng);
  NdArray xt(batch.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t t = out.steps[b];
    const double a = sched.input_scale(t, cfg.scale_mode);
    const double s = std::sqrt(1.0 - sched.alpha_bar(t));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt[i] = a * batch[i] + s * noise.noise[i];
  }
  ad::Var pred = nn::predict_noise(params, ad::Var::constant(std::move(xt)), out.steps);
  out.loss = masked_loss(pred, noise, cfg.loss_weight);
  return out;
}

/// Corrupt with x + 0.1 * eps and regress the clean input directly, with the
/// step input pinned to t = 1.
inline constexpr double kDaeNoiseScale = 0.1;

inline StepOutcome dae_loss(const nn::DenoiserParams& params, const NdArray& batch, Rng& rng) {
  const std::size_t B = batch.dim(0);
  NdArray eps = randn(batch.shape(), rng);
  NdArray noisy(batch.shape());
  for (std::size_t i = 0; i < batch.size(); ++i) noisy[i] = batch[i] + kDaeNoiseScale * eps[i];
  StepOutcome out;
  out.steps.assign(B, 1);
  ad::Var pred = nn::predict_noise(params, ad::Var::constant(std::move(noisy)), out.steps);
  out.loss.total = ad::squared_error(pred, ad::Var::constant(batch));
  out.loss.noisy = out.loss.total.value().item();
  return out;
}

/// One optimization-free training step: loss plus accumulated gradients.
inline StepOutcome train_step(const nn::DenoiserParams& params, const NdArray& batch,
                              const NoiseSchedule& sched, const DiffusionConfig& cfg,
                              Rng& rng, Objective objective = Objective::kMaskedNoise) {
  StepOutcome out = objective == Objective::kMaskedNoise
                        ? masked_noise_loss(params, batch, sched, cfg, rng)
                        : dae_loss(params, batch, rng);
  ad::backward(out.loss.total);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainingRunConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  double val_fraction = 0.1;
  std::size_t patience = 10;  // epochs without improvement; npos disables
  std::uint64_t seed = 0;

  static constexpr std::size_t kNoPatience = std::numeric_limits<std::size_t>::max();

  void validate() const {
    std::string problems;
    auto need = [&](bool ok, const std::string& what) {
      if (!ok) problems += (problems.empty() ? "" : "; ") + what;
    };
    need(lr > 0.0, "lr must be positive");
    need(weight_decay >= 0.0, "weight_decay must be >= 0");
    need(batch_size >= 1, "batch must be >= 1");
    need(max_epochs >= 1, "max_epochs must be >= 1");
    need(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must lie in (0, 1)");
    if (!problems.empty()) fail(ErrorKind::kConfig, "TrainingRunConfig: ", problems);
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t updates = 0;
};

struct TrainResult {
  nn::DenoiserParams params;  // best-validation weights
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  std::size_t train_windows = 0;
  std::size_t val_windows = 0;
};

namespace detail {

inline NdArray stack(std::span<const NdArray> windows, std::span<const std::size_t> idx) {
  const Shape& w = windows[idx[0]].shape();
  Shape shape{idx.size(), w[0], w[1]};
  NdArray out(shape);
  const std::size_t per = w[0] * w[1];
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const NdArray& src = windows[idx[i]];
    if (src.shape() != w) {
      fail(ErrorKind::kShape, "train: window ", idx[i], " has shape ", shape_str(src.shape()),
           ", expected ", shape_str(w));
    }
    std::copy(src.data().begin(), src.data().end(), out.data().begin() + i * per);
  }
  return out;
}

inline std::string steps_str(std::span<const std::size_t> steps) {
  std::string s;
  for (std::size_t i = 0; i < steps.size(); ++i) s += (i ? "," : "") + std::to_string(steps[i]);
  return s;
}

// Stream ids for make_rng.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamTrain = 2;
inline constexpr std::uint64_t kStreamVal = 3;

}  // namespace detail

/// Mini-batch AdamW with early stopping on a chronological validation tail.
/// `windows` are (D, L) arrays in source order; the last val_fraction of them
/// are held out. Returns the weights from the best validation epoch.
inline TrainResult train(const nn::DenoiserParams& init, std::span<const NdArray> windows,
                         const TrainingRunConfig& run, const DiffusionConfig& dcfg,
                         Objective objective = Objective::kMaskedNoise) {
  run.validate();
  dcfg.validate();
  if (windows.empty()) fail(ErrorKind::kData, "train: empty training set");
  const std::size_t n = windows.size();
  std::size_t n_val = 0;
  if (n >= 2) {
    n_val = static_cast<std::size_t>(std::llround(run.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  }
  const std::size_t n_train = n - n_val;
  std::vector<std::size_t> train_idx(n_train), val_idx;
  for (std::size_t i = 0; i < n_train; ++i) train_idx[i] = i;
  for (std::size_t i = n_train; i < n; ++i) val_idx.push_back(i);
  if (val_idx.empty()) val_idx = train_idx;  // single window: validate on it

  const NoiseSchedule sched = dcfg.schedule();
  TrainResult result;
  result.params = init.clone();
  result.train_windows = n_train;
  result.val_windows = n_val;
  nn::DenoiserParams best = result.params.clone();

  ad::AdamW opt(result.params.named(),
                ad::AdamWConfig{.lr = run.lr, .weight_decay = run.weight_decay});
  Rng rng = make_rng(run.seed, detail::kStreamTrain);

  auto batch_loss = [&](const NdArray& batch, Rng& r) {
    return objective == Objective::kMaskedNoise
               ? masked_noise_loss(result.params, batch, sched, dcfg, r)
               : dae_loss(result.params, batch, r);
  };

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= run.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    EpochLog entry;
    entry.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n_train; start += run.batch_size, ++batch_no) {
      const std::size_t len = std::min(run.batch_size, n_train - start);
      NdArray batch = detail::stack(windows, std::span(train_idx).subspan(start, len));
      StepOutcome step = batch_loss(batch, rng);
      const double loss = step.loss.total.value().item();
      if (!std::isfinite(loss)) {
        fail(ErrorKind::kNumeric, "train: non-finite loss at epoch ", epoch, ", batch ",
             batch_no, ", steps [", detail::steps_str(step.steps), "]");
      }
      ad::backward(step.loss.total);
      opt.step();
      loss_sum += loss * static_cast<double>(len);
      ++entry.updates;
    }
    entry.train_loss = loss_sum / static_cast<double>(n_train);

    // Validation noise is re-drawn from the same stream every epoch.
    {
      ad::NoGradGuard guard;
      Rng vrng = make_rng(run.seed, detail::kStreamVal);
      double vsum = 0.0;
      for (std::size_t start = 0; start < val_idx.size(); start += run.batch_size) {
        const std::size_t len = std::min(run.batch_size, val_idx.size() - start);
        NdArray batch = detail::stack(windows, std::span(val_idx).subspan(start, len));
        vsum += batch_loss(batch, vrng).loss.total.value().item() * static_cast<double>(len);
      }
      entry.val_loss = vsum / static_cast<double>(val_idx.size());
    }
    if (!std::isfinite(entry.val_loss)) {
      fail(ErrorKind::kNumeric, "train: non-finite validation loss at epoch ", epoch);
    }
    result.log.push_back(entry);
    result.stopped_epoch = epoch;
    if (entry.val_loss < best_val) {
      best_val = entry.val_loss;
      result.best_epoch = epoch;
      best = result.params.clone();
      since_best = 0;
    } else if (++since_best >= run.patience) {
      break;
    }
  }
  result.params = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// Reverse process.

namespace detail {

inline NdArray as_batch(const NdArray& x) {
  if (x.rank() == 2) return x.reshaped({1, x.dim(0), x.dim(1)});
  if (x.rank() == 3) return x;
  fail(ErrorKind::kShape, "inference: expected (D, L) or (B, D, L), got ", shape_str(x.shape()));
}

}  // namespace detail

/// Starts from scale(alpha_bar_S) * x0 [+ omega * sqrt(1 - alpha_bar_S) * eps]
/// and applies S denoising updates. Noise terms are skipped entirely when
/// omega == 0, so that case is the noiseless procedure bit for bit.
inline NdArray reverse_process(const nn::DenoiserParams& params, const NdArray& x0,
                               const NoiseSchedule& sched, std::size_t reverse_steps,
                               double omega, ScaleMode mode, Rng* rng) {
  if (reverse_steps < 1 || reverse_steps > sched.steps()) {
    fail(ErrorKind::kRange, "inference: S = ", reverse_steps, " outside [1, ", sched.steps(), "]");
  }
  if (!(omega >= 0.0 && omega <= 1.0)) {
    fail(ErrorKind::kRange, "inference: omega = ", omega, " outside [0, 1]");
  }
  if (omega != 0.0 && rng == nullptr) {
    fail(ErrorKind::kConfig, "inference: omega > 0 needs a random generator");
  }
  ad::NoGradGuard guard;
  NdArray x = detail::as_batch(x0);
  const std::size_t B = x.dim(0);
  const double a = sched.input_scale(reverse_steps, mode);
  for (double& v : x.storage()) v *= a;
  if (omega != 0.0) {
    const double s = omega * std::sqrt(1.0 - sched.alpha_bar(reverse_steps));
    NdArray eps = randn(x.shape(), *rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += s * eps[i];
  }
  std::vector<std::size_t> steps(B);
  for (std::size_t t = reverse_steps; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), t);
    NdArray eps_hat = nn::predict_noise(params, ad::Var::constant(x), steps).value();
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
    if (omega != 0.0 && t > 1) {
      const double s = omega * std::sqrt(sched.beta_tilde(t));
      NdArray eps = randn(x.shape(), *rng);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += s * eps[i];
    }
  }
  return x0.rank() == 2 ? x.reshaped(x0.shape()) : x;
}

inline NdArray naive_inference(const nn::DenoiserParams& params, const NdArray& x0,
                               const NoiseSchedule& sched, std::size_t reverse_steps,
                               double omega, ScaleMode mode, Rng& rng) {
  return reverse_process(params, x0, sched, reverse_steps, omega, mode, &rng);
}

inline NdArray noiseless_inference(const nn::DenoiserParams& params, const NdArray& x0,
                                   const NoiseSchedule& sched, std::size_t reverse_steps,
                                   ScaleMode mode = ScaleMode::kStandardSqrt) {
  return reverse_process(params, x0, sched, reverse_steps, 0.0, mode, nullptr);
}

/// Denoising-autoencoder reconstruction: one forward pass at t = 1.
inline NdArray dae_reconstruct(const nn::DenoiserParams& params, const NdArray& x0) {
  ad::NoGradGuard guard;
  NdArray x = detail::as_batch(x0);
  std::vector<std::size_t> steps(x.dim(0), 1);
  NdArray out = nn::predict_noise(params, ad::Var::constant(x), steps).value();
  return x0.rank() == 2 ? out.reshaped(x0.shape()) : out;
}

}  // namespace seldiff::diffusion
