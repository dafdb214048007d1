#pragma once

// Reconstruction error to per-timestep anomaly scores.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "seldiff/error.hpp"
#include "seldiff/ndarray.hpp"

namespace seldiff::scoring {

/// s_l = mean over features of (x - x_hat)^2 for a (D, L) pair.
inline std::vector<double> pointwise_mse(const NdArray& x, const NdArray& x_hat) {
  if (x.shape() != x_hat.shape() || x.rank() != 2) {
    fail(ErrorKind::kShape, "pointwise_mse: ", shape_str(x.shape()), " vs ",
         shape_str(x_hat.shape()));
  }
  const std::size_t d = x.dim(0), len = x.dim(1);
  std::vector<double> s(len, 0.0);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < len; ++l) {
      const double e = x[k * len + l] - x_hat[k * len + l];
      s[l] += e * e;
    }
  for (double& v : s) v /= static_cast<double>(d);
  return s;
}

/// Per-timestep mean over the windows that cover it.
inline std::vector<double> assemble_scores(const std::vector<std::vector<double>>& window_scores,
                                           std::span<const std::size_t> origins, std::size_t n) {
  if (window_scores.size() != origins.size()) {
    fail(ErrorKind::kShape, "assemble_scores: ", window_scores.size(), " windows but ",
         origins.size(), " origins");
  }
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t w = 0; w < origins.size(); ++w) {
    const auto& s = window_scores[w];
    if (origins[w] + s.size() > n) {
      fail(ErrorKind::kRange, "assemble_scores: window at ", origins[w], " of length ", s.size(),
           " runs past N=", n);
    }
    for (std::size_t l = 0; l < s.size(); ++l) {
      sum[origins[w] + l] += s[l];
      ++count[origins[w] + l];
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (count[t] == 0) fail(ErrorKind::kData, "assemble_scores: timestep ", t, " is not covered");
    sum[t] /= static_cast<double>(count[t]);
  }
  return sum;
}

enum class SmoothMode { kCentered, kTrailing };

inline std::string_view to_string(SmoothMode m) {
  return m == SmoothMode::kCentered ? "centered" : "trailing";
}

inline SmoothMode parse_smooth_mode(std::string_view s) {
  if (s == "centered") return SmoothMode::kCentered;
  if (s == "trailing") return SmoothMode::kTrailing;
  fail(ErrorKind::kConfig, "unknown smoothing mode '", s, "' (centered | trailing)");
}

/// Moving average over w samples. Centered windows span [i - w/2, i + (w-1)/2];
/// trailing windows span [i - w + 1, i]. Windows are truncated at the edges
/// and divide by the number of samples actually inside.
inline std::vector<double> smooth(std::span<const double> scores, std::size_t w,
                                  SmoothMode mode = SmoothMode::kCentered) {
  if (w < 1) fail(ErrorKind::kRange, "smooth: window must be >= 1");
  const std::size_t n = scores.size();
  const std::size_t back = mode == SmoothMode::kCentered ? w / 2 : w - 1;
  const std::size_t ahead = mode == SmoothMode::kCentered ? (w - 1) / 2 : 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= back ? i - back : 0;
    const std::size_t hi = std::min(n - 1, i + ahead);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += scores[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

struct MseSplit {
  std::optional<double> mse_a;  // mean over anomalous timesteps
  std::optional<double> mse_n;  // mean over normal timesteps
  std::optional<double> ratio;  // mse_a / mse_n
};

inline MseSplit mse_split(std::span<const double> raw, std::span<const int> labels) {
  if (raw.size() != labels.size()) {
    fail(ErrorKind::kShape, "mse_split: ", raw.size(), " scores vs ", labels.size(), " labels");
  }
  double sa = 0.0, sn = 0.0;
  std::size_t na = 0, nn = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (labels[i]) {
      sa += raw[i];
      ++na;
    } else {
      sn += raw[i];
      ++nn;
    }
  }
  MseSplit out;
  if (na) out.mse_a = sa / static_cast<double>(na);
  if (nn) out.mse_n = sn / static_cast<double>(nn);
  if (out.mse_a && out.mse_n && *out.mse_n > 0.0) out.ratio = *out.mse_a / *out.mse_n;
  return out;
}

struct ScoreSeries {
  std::vector<double> raw;     // per-timestep MSE before smoothing
  std::vector<double> scores;  // smoothed
  std::size_t smoothing_window = 1;
  SmoothMode smoothing_mode = SmoothMode::kCentered;
  std::uint64_t config_hash = 0;
};

}  // namespace seldiff::scoring
