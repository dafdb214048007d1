#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "model_util.hpp"
#include "seldiff/data.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/runtime.hpp"
#include "seldiff/synth.hpp"

using namespace seldiff;
using namespace seldiff::diffusion;
using testutil::live_model;
using testutil::tiny_config;

namespace {

NoiseSchedule default_schedule() { return DiffusionConfig{}.schedule(); }

nn::DenoiserParams zero_model(std::size_t D, std::size_t L) {
  Rng rng = make_rng(D * 100 + L);
  return nn::DenoiserParams::init(tiny_config(D, L), rng);
}

double mse(const NdArray& a, const NdArray& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule

TEST(Schedule, DefaultEndpointsAndSpacing) {
  const auto s = default_schedule();
  ASSERT_EQ(s.steps(), 50u);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(50), 0.01);
  EXPECT_NEAR(s.beta(2) - s.beta(1), (0.01 - 1e-4) / 49.0, 1e-17);
}

TEST(Schedule, SingleStepUsesBetaEnd) {
  const auto s = NoiseSchedule::build(1, 1e-4, 0.02);
  EXPECT_EQ(s.beta(1), 0.02);
}

TEST(Schedule, CumulativeProductAlgebra) {
  const auto s = default_schedule();
  EXPECT_DOUBLE_EQ(s.alpha_bar(3), s.alpha(1) * s.alpha(2) * s.alpha(3));
  EXPECT_EQ(s.alpha_bar(1), s.alpha(1));
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (std::size_t t = 2; t <= 50; ++t) EXPECT_NEAR(s.alpha_bar(t) / s.alpha_bar(t - 1), s.alpha(t), 1e-15);
  EXPECT_EQ(s.beta_tilde(1), 0.0);
  for (std::size_t t = 2; t <= 50; ++t) {
    EXPECT_NEAR(s.beta_tilde(t), (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t)), 1e-15);
  }
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(NoiseSchedule::build(0, 1e-4, 0.01), Error);
  EXPECT_THROW(NoiseSchedule::build(10, 0.01, 1e-4), Error);
  EXPECT_THROW(NoiseSchedule::build(10, 0.0, 0.01), Error);
  EXPECT_THROW(NoiseSchedule::build(10, 1e-4, 1.0), Error);
}

// ---------------------------------------------------------------------------
// Forward process

TEST(ForwardCorrupt, ZeroNoiseScalesInput) {
  const auto s = default_schedule();
  Rng rng = make_rng(1);
  const NdArray x0 = randn({2, 7}, rng);
  const NdArray xt = forward_corrupt(x0, 25, NdArray({2, 7}), s, ScaleMode::kStandardSqrt);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(xt[i], std::sqrt(s.alpha_bar(25)) * x0[i]);
  const NdArray lit = forward_corrupt(x0, 25, NdArray({2, 7}), s, ScaleMode::kPaperLiteral);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(lit[i], s.alpha_bar(25) * x0[i]);
}

TEST(ForwardCorrupt, ZeroInputScalesNoise) {
  const auto s = default_schedule();
  Rng rng = make_rng(2);
  const NdArray eps = randn({9}, rng);
  const NdArray xt = forward_corrupt(NdArray({9}), 50, eps, s, ScaleMode::kStandardSqrt);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(xt[i], std::sqrt(1 - s.alpha_bar(50)) * eps[i]);
}

TEST(ForwardCorrupt, MonteCarloMomentsMatchClosedForm) {
  const auto s = default_schedule();
  const std::size_t n = 100000;
  for (std::size_t t : {1, 25, 50}) {
    Rng rng = make_rng(t, 3);
    const NdArray eps = randn({n}, rng);
    const NdArray xt = forward_corrupt(NdArray({n}, 1.0), t, eps, s, ScaleMode::kStandardSqrt);
    const double mean = std::accumulate(xt.data().begin(), xt.data().end(), 0.0) / n;
    double var = 0.0;
    for (double v : xt.data()) var += (v - mean) * (v - mean);
    var /= n - 1;
    const double mu = std::sqrt(s.alpha_bar(t)), sigma2 = 1 - s.alpha_bar(t);
    EXPECT_LT(std::abs(mean - mu), 3 * std::sqrt(sigma2 / n)) << "t=" << t;
    EXPECT_LT(std::abs(var - sigma2), 3 * sigma2 * std::sqrt(2.0 / (n - 1))) << "t=" << t;
  }
}

TEST(ForwardCorrupt, RejectsShapeAndStepErrors) {
  const auto s = default_schedule();
  EXPECT_THROW(forward_corrupt(NdArray({3}), 1, NdArray({4}), s, ScaleMode::kStandardSqrt), Error);
  EXPECT_THROW(forward_corrupt(NdArray({3}), 0, NdArray({3}), s, ScaleMode::kStandardSqrt), Error);
  EXPECT_THROW(forward_corrupt(NdArray({3}), 51, NdArray({3}), s, ScaleMode::kStandardSqrt), Error);
}

// ---------------------------------------------------------------------------
// Masked noise and the split loss

TEST(MaskedNoise, ExtremeRatios) {
  Rng rng = make_rng(4);
  const auto none = sample_masked_noise({100}, 0.0, rng);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(none.noise[i] + none.mask[i], 0.0);
  const auto all = sample_masked_noise({10000}, 1.0, rng);
  double m = 0.0, v = 0.0;
  for (std::size_t i = 0; i < 10000; ++i) {
    EXPECT_EQ(all.mask[i], 1.0);
    m += all.noise[i] / 10000;
  }
  for (double z : all.noise.data()) v += (z - m) * (z - m) / 9999;
  EXPECT_LT(std::abs(m), 0.04);
  EXPECT_LT(std::abs(v - 1.0), 0.06);
}

TEST(MaskedNoise, HalfRatioBinomialConcentration) {
  Rng rng = make_rng(5);
  const std::size_t n = 1000000;
  const auto s = sample_masked_noise({n}, 0.5, rng);
  double on = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    on += s.mask[i];
    if (s.mask[i] == 0.0) {
      ASSERT_EQ(s.noise[i], 0.0);
    }
  }
  EXPECT_LT(std::abs(on / n - 0.5), 3 * std::sqrt(0.25 / n));
}

TEST(MaskedNoise, RejectsRatioOutsideUnitInterval) {
  Rng rng = make_rng(6);
  EXPECT_THROW(sample_masked_noise({3}, 1.5, rng), Error);
  EXPECT_THROW(sample_masked_noise({3}, -0.1, rng), Error);
}

TEST(MaskedLoss, PartsSumToFullMeanSquaredError) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, 7);
    const Shape shape{2, 3, 11};
    const auto noise = sample_masked_noise(shape, rand_uniform({1}, 0, 1, rng)[0], rng);
    const ad::Var pred = ad::Var::constant(randn(shape, rng));
    const auto parts = masked_loss(pred, noise, 0.5);
    const double full = mse(pred.value(), noise.noise);
    EXPECT_NEAR(parts.noisy + parts.noiseless, full, 1e-12);
  }
}

TEST(MaskedLoss, RecomputedPartitionsFromStoredMask) {
  Rng rng = make_rng(8);
  const Shape shape{3, 2, 10};
  const auto noise = sample_masked_noise(shape, 0.5, rng);
  const ad::Var pred = ad::Var::constant(randn(shape, rng));
  const double c = 0.5;
  const auto parts = masked_loss(pred, noise, c);
  double noisy = 0.0, clean = 0.0;
  const double n = static_cast<double>(noise.mask.size());
  for (std::size_t i = 0; i < noise.mask.size(); ++i) {
    const double e = pred.value()[i];
    if (noise.mask[i] == 1.0) noisy += (noise.noise[i] - e) * (noise.noise[i] - e) / n;
    else clean += e * e / n;
  }
  EXPECT_NEAR(parts.noisy, noisy, 1e-12);
  EXPECT_NEAR(parts.noiseless, clean, 1e-12);
  EXPECT_NEAR(parts.total.value().item(), c * noisy + (1 - c) * clean, 1e-12);
}

TEST(MaskedLoss, FullWeightKeepsOnlyNoisyPart) {
  Rng rng = make_rng(9);
  const auto noise = sample_masked_noise({40}, 0.5, rng);
  const ad::Var pred = ad::Var::constant(randn({40}, rng));
  const auto parts = masked_loss(pred, noise, 1.0);
  EXPECT_EQ(parts.total.value().item(), parts.noisy);
}

TEST(TrainStep, ZeroPredictorFullNoise) {
  auto p = zero_model(1, 16);
  Rng data_rng = make_rng(10);
  const NdArray batch = randn({4, 1, 16}, data_rng);
  const auto sched = default_schedule();
  for (double c : {0.3, 1.0}) {
    DiffusionConfig cfg;
    cfg.mask_ratio = 1.0;
    cfg.loss_weight = c;
    Rng rng = make_rng(11);
    const auto out = train_step(p, batch, sched, cfg, rng);
    // replay the draws to get z
    Rng replay = make_rng(11);
    std::uniform_int_distribution<std::size_t> pick(1, 50);
    for (int b = 0; b < 4; ++b) pick(replay);
    const auto z = sample_masked_noise(batch.shape(), 1.0, replay);
    double zz = 0.0;
    for (double v : z.noise.data()) zz += v * v / z.noise.size();
    EXPECT_NEAR(out.loss.total.value().item(), c * zz, 1e-12);
    EXPECT_EQ(out.loss.noiseless, 0.0);
  }
}

TEST(TrainStep, NoMaskZeroPredictorGivesZeroLoss) {
  auto p = zero_model(1, 16);
  Rng rng = make_rng(12);
  const NdArray batch = randn({4, 1, 16}, rng);
  DiffusionConfig cfg;
  cfg.mask_ratio = 0.0;
  const auto out = train_step(p, batch, default_schedule(), cfg, rng);
  EXPECT_EQ(out.loss.total.value().item(), 0.0);
  EXPECT_EQ(out.loss.noisy, 0.0);
}

TEST(TrainStep, RejectsUnbatchedInput) {
  auto p = zero_model(1, 16);
  Rng rng = make_rng(13);
  EXPECT_THROW(train_step(p, NdArray({1, 16}), default_schedule(), DiffusionConfig{}, rng), Error);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<NdArray> sine_windows(std::size_t train_length, std::size_t L) {
  data::SyntheticSpec sp;
  sp.train_length = train_length;
  sp.test_length = 50;
  sp.noise = 0.0;
  sp.trend = 0.0;
  sp.period = 25;
  sp.seed = 3;
  const auto syn = data::synth_generate(sp);
  const auto norm = data::normalize(syn.train, {});
  return data::make_windows(norm.train, L, 1, data::WindowMode::kTraining).windows;
}

}  // namespace

TEST(Train, OneEpochWithoutPatience) {
  const auto windows = sine_windows(120, 16);  // 105 windows: 94 train, 11 val
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 16), rng);
  TrainingRunConfig run;
  run.max_epochs = 1;
  run.batch_size = 32;
  run.patience = TrainingRunConfig::kNoPatience;
  const auto r = train(init, windows, run, DiffusionConfig{});
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.train_windows, 94u);
  EXPECT_EQ(r.val_windows, 11u);
  EXPECT_EQ(r.log[0].updates, 3u);
  EXPECT_EQ(r.stopped_epoch, 1u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Train, SameSeedSameParameters) {
  const auto windows = sine_windows(80, 16);
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 16), rng);
  TrainingRunConfig run;
  run.max_epochs = 2;
  run.seed = 17;
  const auto a = train(init, windows, run, DiffusionConfig{});
  const auto b = train(init, windows, run, DiffusionConfig{});
  const auto pa = a.params.named(), pb = b.params.named();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].var.value().storage(), pb[i].var.value().storage()) << pa[i].name;
  }
  run.seed = 18;
  const auto c = train(init, windows, run, DiffusionConfig{});
  EXPECT_NE(c.params.head1.weight.value().storage(), a.params.head1.weight.value().storage());
}

TEST(Train, PatienceStopsEarly) {
  const auto windows = sine_windows(80, 16);
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 16), rng);
  TrainingRunConfig run;
  run.max_epochs = 20;
  run.patience = 1;
  DiffusionConfig cfg;
  cfg.mask_ratio = 0.0;  // zero loss from the start, never improves
  const auto r = train(init, windows, run, cfg);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.stopped_epoch, 2u);
}

TEST(Train, RejectsEmptyTrainingSet) {
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 16), rng);
  EXPECT_THROW(train(init, std::vector<NdArray>{}, TrainingRunConfig{}, DiffusionConfig{}), Error);
}

// Clean sine, tiny model, 50 epochs: the validation loss at the best epoch is
// at most half the first epoch's.
TEST(Train, ValidationLossHalvesOnCleanSine) {
  tune_allocator();
  const auto windows = sine_windows(1000, 16);
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 16), rng);
  TrainingRunConfig run;
  run.max_epochs = 50;
  run.lr = 5e-3;
  run.batch_size = 16;
  run.patience = TrainingRunConfig::kNoPatience;
  DiffusionConfig cfg;
  cfg.mask_ratio = 1.0;
  cfg.loss_weight = 1.0;
  const auto r = train(init, windows, run, cfg);
  const double first = r.log.front().val_loss, best = r.log.at(r.best_epoch - 1).val_loss;
  EXPECT_LE(best, 0.5 * first) << "first " << first << " best " << best;
}

// ---------------------------------------------------------------------------
// Reverse process

TEST(Inference, ZeroModelIsIdentityFilter) {
  const auto sched = default_schedule();
  for (std::size_t D : {1, 5}) {
    auto p = zero_model(D, 12);
    Rng rng = make_rng(D, 14);
    const NdArray x0 = randn({D, 12}, rng);
    for (std::size_t S : {1, 8, 50}) {
      EXPECT_LT(max_abs_diff(noiseless_inference(p, x0, sched, S), x0), 1e-9) << "D=" << D << " S=" << S;
    }
  }
}

TEST(Inference, ZeroInputZeroModelStaysZero) {
  auto p = zero_model(2, 12);
  const NdArray out = noiseless_inference(p, NdArray({2, 12}), default_schedule(), 50);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Inference, SingleStepUndoesScaling) {
  auto p = zero_model(1, 12);
  Rng rng = make_rng(15);
  const NdArray x0 = randn({1, 12}, rng);
  const auto out = naive_inference(p, x0, default_schedule(), 1, 0.0, ScaleMode::kStandardSqrt, rng);
  EXPECT_LT(max_abs_diff(out, x0), 1e-15);
}

TEST(Inference, PaperLiteralScalingIsNotIdentity) {
  auto p = zero_model(1, 12);
  Rng rng = make_rng(16);
  const NdArray x0 = randn({1, 12}, rng);
  const auto sched = default_schedule();
  const auto out = noiseless_inference(p, x0, sched, 50, ScaleMode::kPaperLiteral);
  // alpha_bar * prod(1/sqrt(alpha)) = sqrt(alpha_bar)
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out[i], std::sqrt(sched.alpha_bar(50)) * x0[i], 1e-12);
}

TEST(Inference, ZeroOmegaIsBitIdenticalToNoiseless) {
  const auto sched = default_schedule();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = live_model(tiny_config(2, 12), seed);
    Rng rng = make_rng(seed, 17);
    const NdArray x0 = randn({3, 2, 12}, rng);
    for (auto mode : {ScaleMode::kStandardSqrt, ScaleMode::kPaperLiteral}) {
      const auto a = noiseless_inference(p, x0, sched, 20, mode);
      const auto b = naive_inference(p, x0, sched, 20, 0.0, mode, rng);
      EXPECT_EQ(a.storage(), b.storage());
    }
  }
}

TEST(Inference, NoisyRunsAreSeedDeterministic) {
  auto p = live_model(tiny_config(1, 12), 1);
  Rng rng = make_rng(18);
  const NdArray x0 = randn({1, 12}, rng);
  const auto sched = default_schedule();
  Rng a = make_rng(5, 4), b = make_rng(5, 4), c = make_rng(6, 4);
  const auto ra = naive_inference(p, x0, sched, 50, 1.0, ScaleMode::kStandardSqrt, a);
  const auto rb = naive_inference(p, x0, sched, 50, 1.0, ScaleMode::kStandardSqrt, b);
  const auto rc = naive_inference(p, x0, sched, 50, 1.0, ScaleMode::kStandardSqrt, c);
  EXPECT_EQ(ra.storage(), rb.storage());
  EXPECT_NE(ra.storage(), rc.storage());
}

TEST(Inference, RejectsBadArguments) {
  auto p = zero_model(1, 12);
  const auto sched = default_schedule();
  EXPECT_THROW(noiseless_inference(p, NdArray({1, 12}), sched, 0), Error);
  EXPECT_THROW(noiseless_inference(p, NdArray({1, 12}), sched, 51), Error);
  EXPECT_THROW(reverse_process(p, NdArray({1, 12}), sched, 5, 0.5, ScaleMode::kStandardSqrt, nullptr), Error);
  Rng rng = make_rng(0);
  EXPECT_THROW(naive_inference(p, NdArray({1, 12}), sched, 5, 1.5, ScaleMode::kStandardSqrt, rng), Error);
}

TEST(Inference, DaeReconstructionKeepsShape) {
  auto p = live_model(tiny_config(2, 12), 2);
  Rng rng = make_rng(19);
  const NdArray x0 = randn({2, 12}, rng);
  EXPECT_EQ(dae_reconstruct(p, x0).shape(), x0.shape());
}

// A model trained on clean sine reconstructs clean sine far better without
// injected noise than with full-strength noise.
TEST(Inference, NoiselessBeatsNaiveOnTrainedModel) {
  tune_allocator();
  const auto windows = sine_windows(200, 32);
  Rng rng = make_rng(0, 1);
  const auto init = nn::DenoiserParams::init(tiny_config(1, 32), rng);
  TrainingRunConfig run;
  run.max_epochs = 5;
  const auto r = train(init, windows, run, DiffusionConfig{});
  const auto sched = default_schedule();
  NdArray batch({8, 1, 32});
  for (std::size_t i = 0; i < 8; ++i)
    std::copy(windows[i * 20].data().begin(), windows[i * 20].data().end(), batch.data().begin() + i * 32);
  Rng noise = make_rng(0, 4);
  const double clean = mse(noiseless_inference(r.params, batch, sched, 50), batch);
  const double noisy = mse(naive_inference(r.params, batch, sched, 50, 1.0, ScaleMode::kStandardSqrt, noise), batch);
  EXPECT_LE(5 * clean, noisy) << "noiseless " << clean << " naive " << noisy;
}
