#pragma once

// Seeded synthetic series with injected anomalies. The test split continues
// the train split in time; anomalies are applied to every feature.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "seldiff/data.hpp"
#include "seldiff/error.hpp"
#include "seldiff/rng.hpp"

namespace seldiff::data {

enum class SignalFamily { kSine, kMultiSine, kTrendSeason };
enum class AnomalyType { kPointSpike, kLevelShift, kPatternDistortion };

inline std::string_view to_string(SignalFamily f) {
  switch (f) {
    case SignalFamily::kSine: return "sine";
    case SignalFamily::kMultiSine: return "multi-sine";
    case SignalFamily::kTrendSeason: return "trend-season";
  }
  return "?";
}

inline SignalFamily parse_family(std::string_view s) {
  if (s == "sine") return SignalFamily::kSine;
  if (s == "multi-sine") return SignalFamily::kMultiSine;
  if (s == "trend-season") return SignalFamily::kTrendSeason;
  fail(ErrorKind::kConfig, "unknown signal family '", s, "' (sine | multi-sine | trend-season)");
}

inline std::string_view to_string(AnomalyType a) {
  switch (a) {
    case AnomalyType::kPointSpike: return "point-spike";
    case AnomalyType::kLevelShift: return "level-shift";
    case AnomalyType::kPatternDistortion: return "pattern-distortion";
  }
  return "?";
}

inline AnomalyType parse_anomaly_type(std::string_view s) {
  if (s == "point-spike") return AnomalyType::kPointSpike;
  if (s == "level-shift") return AnomalyType::kLevelShift;
  if (s == "pattern-distortion") return AnomalyType::kPatternDistortion;
  fail(ErrorKind::kConfig, "unknown anomaly type '", s,
       "' (point-spike | level-shift | pattern-distortion)");
}

/// position is a test-split index. For spikes and level shifts, magnitude is
/// in units of the clean signal's standard deviation; for pattern distortion
/// it is the factor applied to the signal frequency.
struct AnomalySpec {
  AnomalyType type = AnomalyType::kPointSpike;
  std::size_t position = 0;
  std::size_t length = 1;
  double magnitude = 5.0;
};

struct SyntheticSpec {
  SignalFamily family = SignalFamily::kSine;
  std::size_t train_length = 2000;
  std::size_t test_length = 1000;
  std::size_t n_features = 1;
  double period = 25.0;
  double amplitude = 1.0;
  double noise = 0.05;
  double trend = 0.001;  // trend-season only; per-step slope
  std::vector<AnomalySpec> anomalies;
  std::uint64_t seed = 0;

  void validate() const {
    std::string problems;
    auto need = [&](bool ok, const std::string& what) {
      if (!ok) problems += (problems.empty() ? "" : "; ") + what;
    };
    need(train_length >= 1, "train_length must be >= 1");
    need(test_length >= 1, "test_length must be >= 1");
    need(n_features >= 1, "n_features must be >= 1");
    need(period > 0.0, "period must be positive");
    need(noise >= 0.0, "noise must be >= 0");
    if (!problems.empty()) fail(ErrorKind::kConfig, "synthetic: ", problems);

    std::vector<const AnomalySpec*> sorted;
    for (const auto& a : anomalies) {
      if (a.length < 1) fail(ErrorKind::kConfig, "synthetic: anomaly at ", a.position, " has length 0");
      if (a.type == AnomalyType::kPointSpike && a.length != 1) {
        fail(ErrorKind::kConfig, "synthetic: point-spike at ", a.position, " must have length 1");
      }
      if (a.position + a.length > test_length) {
        fail(ErrorKind::kConfig, "synthetic: anomaly [", a.position, ", ", a.position + a.length,
             ") exceeds test length ", test_length);
      }
      if (a.type == AnomalyType::kPatternDistortion && !(a.magnitude > 0.0)) {
        fail(ErrorKind::kConfig, "synthetic: pattern-distortion frequency factor must be positive");
      }
      sorted.push_back(&a);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const AnomalySpec* a, const AnomalySpec* b) { return a->position < b->position; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      const AnomalySpec& prev = *sorted[i - 1];
      if (prev.position + prev.length > sorted[i]->position) {
        fail(ErrorKind::kConfig, "synthetic: anomalies at ", prev.position, " and ",
             sorted[i]->position, " overlap");
      }
    }
  }
};

struct SyntheticData {
  TimeSeries train;
  TimeSeries test;
};

namespace detail {

struct FeatureShape {
  double phase = 0.0;
  // multi-sine: secondary components
  double phase2 = 0.0, phase3 = 0.0;
};

/// Clean periodic part at "signal time" tau.
inline double periodic(const SyntheticSpec& s, const FeatureShape& f, double tau) {
  const double w = 2.0 * std::numbers::pi / s.period;
  switch (s.family) {
    case SignalFamily::kSine:
    case SignalFamily::kTrendSeason:
      return s.amplitude * std::sin(w * tau + f.phase);
    case SignalFamily::kMultiSine:
      return s.amplitude * (std::sin(w * tau + f.phase) + 0.5 * std::sin(2.7 * w * tau + f.phase2) +
                            0.25 * std::sin(0.37 * w * tau + f.phase3));
  }
  return 0.0;
}

}  // namespace detail

inline SyntheticData synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 0x5E17);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t d = spec.n_features;
  std::vector<detail::FeatureShape> shapes(d);
  for (auto& f : shapes) {
    f.phase = phase(rng);
    f.phase2 = phase(rng);
    f.phase3 = phase(rng);
  }

  const std::size_t n_train = spec.train_length, n_test = spec.test_length;
  const std::size_t total = n_train + n_test;

  // Signal time runs with wall time except inside pattern distortions, where
  // it advances `magnitude` times faster starting from the segment's entry
  // phase.
  std::vector<double> tau(total);
  for (std::size_t i = 0; i < total; ++i) tau[i] = static_cast<double>(i);
  for (const auto& a : spec.anomalies) {
    if (a.type != AnomalyType::kPatternDistortion) continue;
    const std::size_t start = n_train + a.position;
    for (std::size_t j = 0; j < a.length; ++j) {
      tau[start + j] = static_cast<double>(start) + a.magnitude * static_cast<double>(j);
    }
  }

  NdArray clean({d, total});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < total; ++i) {
      double v = detail::periodic(spec, shapes[k], tau[i]);
      if (spec.family == SignalFamily::kTrendSeason) v += spec.trend * static_cast<double>(i);
      clean[k * total + i] = v;
    }
  }

  // Reference scale for spike and shift magnitudes: per-feature std of the
  // clean training part.
  std::vector<double> sigma(d);
  for (std::size_t k = 0; k < d; ++k) {
    double sum = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) sum += clean[k * total + i];
    const double mu = sum / static_cast<double>(n_train);
    for (std::size_t i = 0; i < n_train; ++i) ss += std::pow(clean[k * total + i] - mu, 2);
    const double sd = std::sqrt(ss / static_cast<double>(n_train));
    sigma[k] = sd > 0.0 ? sd : 1.0;
  }

  NdArray noisy = clean;
  for (double& v : noisy.storage()) v += spec.noise * normal(rng);

  std::vector<int> labels(n_test, 0);
  for (const auto& a : spec.anomalies) {
    for (std::size_t j = 0; j < a.length; ++j) labels[a.position + j] = 1;
    if (a.type == AnomalyType::kPatternDistortion) continue;
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < a.length; ++j)
        noisy[k * total + n_train + a.position + j] += a.magnitude * sigma[k];
  }

  SyntheticData out;
  out.train.name = "synthetic-train";
  out.test.name = "synthetic-test";
  out.train.values = NdArray({d, n_train});
  out.test.values = NdArray({d, n_test});
  for (std::size_t k = 0; k < d; ++k) {
    std::copy_n(noisy.data().begin() + k * total, n_train, out.train.values.data().begin() + k * n_train);
    std::copy_n(noisy.data().begin() + k * total + n_train, n_test,
                out.test.values.data().begin() + k * n_test);
  }
  out.test.labels = std::move(labels);
  return out;
}

}  // namespace seldiff::data
