#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "seldiff/synth.hpp"

using namespace seldiff;
using namespace seldiff::data;

namespace {

// Index of the largest non-DC DFT magnitude.
std::size_t peak_bin(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0;
  for (double v : x) mean += v / n;
  std::size_t best = 1;
  double best_mag = -1;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < n; ++t)
      s += (x[t] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
    if (std::abs(s) > best_mag) best_mag = std::abs(s), best = k;
  }
  return best;
}

std::vector<double> segment(const TimeSeries& ts, std::size_t from, std::size_t len) {
  return {ts.values.data().begin() + from, ts.values.data().begin() + from + len};
}

}  // namespace

TEST(Synth, NoAnomaliesNoLabels) {
  SyntheticSpec s;
  s.train_length = 300;
  s.test_length = 200;
  const auto d = synth_generate(s);
  EXPECT_EQ(d.train.length(), 300u);
  EXPECT_EQ(d.test.length(), 200u);
  EXPECT_FALSE(d.train.labels);
  ASSERT_TRUE(d.test.labels);
  for (int l : *d.test.labels) EXPECT_EQ(l, 0);
}

TEST(Synth, PointSpikeLabelledExactlyAtItsIndex) {
  SyntheticSpec s;
  s.train_length = 300;
  s.test_length = 200;
  s.anomalies = {{AnomalyType::kPointSpike, 77, 1, 10.0}};
  const auto d = synth_generate(s);
  SyntheticSpec clean = s;
  clean.anomalies.clear();
  const auto c = synth_generate(clean);
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_EQ((*d.test.labels)[i], i == 77 ? 1 : 0);
    if (i != 77) {
      EXPECT_EQ(d.test.values[i], c.test.values[i]);
    }
  }
  // amplitude-1 sine has std 1/sqrt(2)
  EXPECT_NEAR(d.test.values[77] - c.test.values[77], 10.0 / std::sqrt(2.0), 0.02);
}

TEST(Synth, LevelShiftOffsetsWholeSegment) {
  SyntheticSpec s;
  s.train_length = 300;
  s.test_length = 200;
  s.noise = 0.0;
  s.anomalies = {{AnomalyType::kLevelShift, 50, 20, 2.0}};
  const auto d = synth_generate(s);
  s.anomalies.clear();
  const auto c = synth_generate(s);
  for (std::size_t i = 50; i < 70; ++i) EXPECT_NEAR(d.test.values[i] - c.test.values[i], 2.0 / std::sqrt(2.0), 0.02);
}

TEST(Synth, PatternDistortionShiftsSpectralPeak) {
  SyntheticSpec s;
  s.train_length = 400;
  s.test_length = 300;
  s.period = 20;
  s.noise = 0.0;
  s.anomalies = {{AnomalyType::kPatternDistortion, 100, 40, 3.0}};
  const auto d = synth_generate(s);
  s.anomalies.clear();
  const auto c = synth_generate(s);
  // 40 samples at period 20: clean peak at bin 2, distorted at bin 6
  EXPECT_EQ(peak_bin(segment(c.test, 100, 40)), 2u);
  EXPECT_EQ(peak_bin(segment(d.test, 100, 40)), 6u);
  for (std::size_t i = 100; i < 140; ++i) EXPECT_EQ((*d.test.labels)[i], 1);
  EXPECT_EQ((*d.test.labels)[140], 0);
}

TEST(Synth, SeedDeterminesOutput) {
  SyntheticSpec s;
  s.train_length = 100;
  s.test_length = 100;
  s.n_features = 3;
  const auto a = synth_generate(s), b = synth_generate(s);
  EXPECT_EQ(a.train.values.storage(), b.train.values.storage());
  s.seed = 1;
  EXPECT_NE(synth_generate(s).train.values.storage(), a.train.values.storage());
}

TEST(Synth, FamiliesProduceFiniteSeries) {
  for (auto f : {SignalFamily::kSine, SignalFamily::kMultiSine, SignalFamily::kTrendSeason}) {
    SyntheticSpec s;
    s.family = f;
    s.train_length = 200;
    s.test_length = 100;
    const auto d = synth_generate(s);
    EXPECT_TRUE(d.train.values.all_finite());
    EXPECT_EQ(parse_family(to_string(f)), f);
  }
}

TEST(Synth, ValidateRejectsBadSpecs) {
  SyntheticSpec s;
  s.test_length = 100;
  s.anomalies = {{AnomalyType::kLevelShift, 95, 10, 1.0}};
  EXPECT_THROW(synth_generate(s), Error);
  s.anomalies = {{AnomalyType::kLevelShift, 10, 10, 1.0}, {AnomalyType::kPointSpike, 15, 1, 1.0}};
  EXPECT_THROW(synth_generate(s), Error);
  s.anomalies = {{AnomalyType::kPointSpike, 10, 3, 1.0}};
  EXPECT_THROW(synth_generate(s), Error);
  EXPECT_THROW(parse_anomaly_type("spike"), Error);
}
