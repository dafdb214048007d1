#include <gtest/gtest.h>

#include <sstream>

#include "seldiff/config.hpp"

using namespace seldiff;
using namespace seldiff::config;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_config_string(text, "t.ini");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    return e.what();
  }
  ADD_FAILURE() << "config accepted";
  return {};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST(Config, DefaultsMatchPublishedHyperparameters) {
  const RunConfig c = parse_config_string("");
  EXPECT_EQ(c.diffusion.steps, 50u);
  EXPECT_EQ(c.diffusion.reverse_steps, 50u);
  EXPECT_EQ(c.diffusion.beta_start, 1e-4);
  EXPECT_EQ(c.diffusion.beta_end, 0.01);
  EXPECT_EQ(c.diffusion.mask_ratio, 0.5);
  EXPECT_EQ(c.diffusion.loss_weight, 0.5);
  EXPECT_EQ(c.diffusion.inference_noise, 0.0);
  EXPECT_EQ(c.model.heads, 8u);
  EXPECT_EQ(c.data.window, 100u);
  EXPECT_EQ(c.data.inference_stride(), 100u);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.val_fraction, 0.1);
  EXPECT_EQ(c.train.max_epochs, 100u);
  EXPECT_EQ(c.score.smoothing, 50u);
  EXPECT_EQ(c.metrics.buffer, 50u);
  EXPECT_EQ(c.metrics.vus_max_buffer, 50u);
  EXPECT_EQ(c.run.method, Method::kAnomalyFilter);
  const auto low = c.denoiser(5);
  EXPECT_EQ(low.n_blocks, 8u);
  EXPECT_EQ(low.latent_dim, 64u);
  EXPECT_EQ(low.window_len, 100u);
  const auto high = c.denoiser(38);
  EXPECT_EQ(high.n_blocks, 4u);
  EXPECT_EQ(high.latent_dim, 32u);
}

TEST(Config, ParsesEverySection) {
  const RunConfig c = parse_config_string(R"(
# comment
[data]
train = a.csv
test = b.csv
window = 64
infer_stride = 32

[model]
blocks = 3
latent = 24
heads = 4

[diffusion]
T = 40
S = 20
p = 0.3
c = 0.7
omega = 0.1
scale_mode = paper-literal

[train]
lr = 2e-3
batch = 8
patience = none

[score]
smoothing = 10
smoothing_mode = trailing

[metrics]
buffer = 5
grid = 20

[run]
seed = 9
seeds = 1, 2, 3
method = DDPM+mask
plots = yes
)");
  EXPECT_EQ(c.data.train_path, "a.csv");
  EXPECT_EQ(c.data.inference_stride(), 32u);
  EXPECT_EQ(*c.model.blocks, 3u);
  EXPECT_EQ(c.diffusion.reverse_steps, 20u);
  EXPECT_EQ(c.diffusion.scale_mode, diffusion::ScaleMode::kPaperLiteral);
  EXPECT_EQ(c.diffusion.inference_noise, 0.1);
  EXPECT_EQ(c.train.patience, diffusion::TrainingRunConfig::kNoPatience);
  EXPECT_EQ(c.score.mode, scoring::SmoothMode::kTrailing);
  EXPECT_EQ(c.metrics.grid, 20u);
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.run.method, Method::kDdpmMask);
  EXPECT_TRUE(c.run.plots);
  EXPECT_EQ(c.denoiser(1).max_step, 40u);
}

TEST(Config, SyntheticAndAnomalySections) {
  const RunConfig c = parse_config_string(R"(
[synthetic]
train_length = 300
test_length = 200
[anomaly]
type = level-shift
position = 50
length = 10
magnitude = 2
[anomaly]
type = point-spike
position = 120
)");
  ASSERT_TRUE(c.synthetic);
  ASSERT_EQ(c.synthetic->anomalies.size(), 2u);
  EXPECT_EQ(c.synthetic->anomalies[0].type, data::AnomalyType::kLevelShift);
  EXPECT_EQ(c.synthetic->anomalies[1].position, 120u);
}

TEST(Config, RejectsUnknownAndDuplicateKeys) {
  EXPECT_TRUE(contains(message_of("[data]\nbogus = 1\n"), "t.ini:2: unknown key 'bogus' in [data]"));
  EXPECT_TRUE(contains(message_of("[nope]\n"), "unknown section [nope]"));
  EXPECT_TRUE(contains(message_of("[train]\nlr = 1\nlr = 2\n"), "duplicate key 'lr' (first at line 2)"));
  EXPECT_TRUE(contains(message_of("[train]\nlr = fast\n"), "'lr' expects a number"));
  EXPECT_TRUE(contains(message_of("[run]\nmethod = VAE\n"), "unknown method 'VAE'"));
  EXPECT_TRUE(contains(message_of("[anomaly]\nposition = 3\n"), "needs 'type'"));
}

TEST(Config, ReportsAllProblemsAtOnce) {
  const std::string m = message_of(R"(
[diffusion]
p = 1.5
c = -1
S = 80
[train]
lr = 0
extra = 1
)");
  EXPECT_TRUE(contains(m, "(5 problems)")) << m;
  EXPECT_TRUE(contains(m, "diffusion.p must lie in [0, 1]"));
  EXPECT_TRUE(contains(m, "diffusion.c must lie in [0, 1]"));
  EXPECT_TRUE(contains(m, "diffusion.S must satisfy"));
  EXPECT_TRUE(contains(m, "train.lr must be positive"));
  EXPECT_TRUE(contains(m, "unknown key 'extra'"));
}

TEST(Config, HeadsMustDivideLatent) {
  EXPECT_TRUE(contains(message_of("[model]\nlatent = 10\nheads = 4\n"), "multiple of model.heads"));
  EXPECT_TRUE(contains(message_of("[model]\nheads = 5\n"), "divide the default latent"));
}

TEST(Config, CanonicalTextRoundTrips) {
  const RunConfig c = parse_config_string(R"(
[data]
window = 32
[diffusion]
p = 0.1
omega = 0.3
[run]
seed = 4
method = DAE
[synthetic]
noise = 0.2
[anomaly]
type = pattern-distortion
position = 100
length = 40
magnitude = 3
[ablation]
axis = p
grid = 0, 0.5, 1
)");
  const std::string text = canonical_text(c);
  const RunConfig back = parse_config_string(text);
  EXPECT_EQ(canonical_text(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.run.seed, 4u);
}

TEST(Config, HashIgnoresSeedAndOutputOnly) {
  const RunConfig a = parse_config_string("[run]\nseed = 1\nout = x\n");
  const RunConfig b = parse_config_string("[run]\nseed = 2\nout = y\nplots = yes\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  const RunConfig c = parse_config_string("[diffusion]\nc = 0.25\n");
  EXPECT_NE(config_hash(a), config_hash(c));
  const RunConfig d = parse_config_string("[run]\nmethod = DDPM\n");
  EXPECT_NE(config_hash(a), config_hash(d));
}

TEST(Config, ModelHashTracksArchitectureNotWeights) {
  const RunConfig a = parse_config_string("");
  RunConfig b = a;
  b.diffusion.mask_ratio = 0.9;
  b.diffusion.inference_noise = 0.4;
  EXPECT_EQ(model_hash(a.denoiser(1), a.diffusion), model_hash(b.denoiser(1), b.diffusion));
  EXPECT_NE(model_hash(a.denoiser(1), a.diffusion), model_hash(a.denoiser(2), a.diffusion));
  b.diffusion.beta_end = 0.02;
  EXPECT_NE(model_hash(a.denoiser(1), a.diffusion), model_hash(b.denoiser(1), b.diffusion));
}

TEST(Config, MissingFileIsIoError) {
  try {
    load_config("/nonexistent.ini");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Config, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1e-4, 1.0 / 3.0, 12345.678, 0.0})
    EXPECT_EQ(std::stod(format_double(v)), v);
}
