#pragma once

// Threshold-free and threshold-based detection metrics over per-timestep
// scores and binary labels.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "seldiff/error.hpp"

namespace seldiff::metrics {

/// Inclusive [first, last] run of 1s.
struct Segment {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t size() const { return last - first + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

inline std::vector<Segment> segments(std::span<const int> labels) {
  std::vector<Segment> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    if (!out.empty() && out.back().last + 1 == i) {
      out.back().last = i;
    } else {
      out.push_back({i, i});
    }
  }
  return out;
}

inline std::vector<int> from_segments(const std::vector<Segment>& segs, std::size_t n) {
  std::vector<int> out(n, 0);
  for (const auto& s : segs)
    for (std::size_t i = s.first; i <= s.last; ++i) out.at(i) = 1;
  return out;
}

namespace detail {

inline void check_inputs(const char* op, std::span<const double> scores,
                         std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::kShape, op, ": ", scores.size(), " scores vs ", labels.size(), " labels");
  }
  bool pos = false, neg = false;
  for (int l : labels) (l ? pos : neg) = true;
  if (!pos || !neg) fail(ErrorKind::kData, op, ": labels must contain both classes");
}

/// Indices by descending score; equal scores keep index order.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

struct AucPair {
  double roc = 0.0;
  double pr = 0.0;
};

/// ROC and PR areas for real-valued positive weights y in [0, 1]: a point
/// counts y as a true positive and 1 - y as a false positive once its score
/// clears the threshold. Thresholds are the unique scores. ROC uses the
/// trapezoid rule from (0, 0); PR is the step sum of precision times recall
/// increments.
inline AucPair weighted_auc(std::span<const double> scores, std::span<const double> y,
                            std::span<const std::size_t> order) {
  double pos = 0.0, neg = 0.0;
  for (double v : y) {
    pos += v;
    neg += 1.0 - v;
  }
  if (!(pos > 0.0) || !(neg > 0.0)) {
    fail(ErrorKind::kData, "auc: need positive and negative mass");
  }
  AucPair out;
  double tp = 0.0, fp = 0.0, tp_prev = 0.0, fp_prev = 0.0;
  std::size_t i = 0;
  const std::size_t n = order.size();
  while (i < n) {
    const double s = scores[order[i]];
    while (i < n && scores[order[i]] == s) {
      tp += y[order[i]];
      fp += 1.0 - y[order[i]];
      ++i;
    }
    out.roc += (fp - fp_prev) * (tp + tp_prev) * 0.5;
    out.pr += (tp - tp_prev) * (tp / (tp + fp));
    tp_prev = tp;
    fp_prev = fp;
  }
  out.roc /= pos * neg;
  out.pr /= pos;
  return out;
}

inline AucPair roc_pr_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs("roc_pr_auc", scores, labels);
  std::vector<double> y(labels.begin(), labels.end());
  return weighted_auc(scores, y, detail::descending_order(scores));
}

/// 1 inside segments; 1 - d / (buffer + 1) at distance d <= buffer from the
/// nearest labelled timestep; 0 elsewhere.
inline std::vector<double> soft_labels(std::span<const int> labels, std::size_t buffer) {
  const std::size_t n = labels.size();
  std::vector<double> out(n, 0.0);
  constexpr std::size_t kFar = static_cast<std::size_t>(-1);
  // distance to the nearest 1 on the left and on the right
  std::vector<std::size_t> left(n, kFar), right(n, kFar);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i]) left[i] = 0;
    else if (i > 0 && left[i - 1] != kFar) left[i] = left[i - 1] + 1;
  }
  for (std::size_t i = n; i-- > 0;) {
    if (labels[i]) right[i] = 0;
    else if (i + 1 < n && right[i + 1] != kFar) right[i] = right[i + 1] + 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = std::min(left[i], right[i]);
    if (d == 0) out[i] = 1.0;
    else if (d <= buffer) out[i] = 1.0 - static_cast<double>(d) / static_cast<double>(buffer + 1);
  }
  return out;
}

inline AucPair range_auc(std::span<const double> scores, std::span<const int> labels,
                         std::size_t buffer) {
  detail::check_inputs("range_auc", scores, labels);
  return weighted_auc(scores, soft_labels(labels, buffer), detail::descending_order(scores));
}

/// Mean of range_auc over buffers 0..max_buffer.
inline AucPair vus(std::span<const double> scores, std::span<const int> labels,
                   std::size_t max_buffer) {
  detail::check_inputs("vus", scores, labels);
  const auto order = detail::descending_order(scores);
  AucPair sum;
  for (std::size_t b = 0; b <= max_buffer; ++b) {
    const AucPair r = weighted_auc(scores, soft_labels(labels, b), order);
    sum.roc += r.roc;
    sum.pr += r.pr;
  }
  const double k = static_cast<double>(max_buffer + 1);
  return {sum.roc / k, sum.pr / k};
}

/// Thresholds at `grid` evenly spaced order statistics of the scores, from
/// min to max inclusive.
inline std::vector<double> quantile_thresholds(std::span<const double> scores, std::size_t grid) {
  if (grid < 2) fail(ErrorKind::kRange, "threshold grid must have >= 2 points");
  if (scores.empty()) fail(ErrorKind::kData, "threshold grid over empty scores");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> out(grid);
  for (std::size_t k = 0; k < grid; ++k) {
    out[k] = sorted[(k * (n - 1) + (grid - 1) / 2) / (grid - 1)];
  }
  return out;
}

inline constexpr std::size_t kDefaultGrid = 100;

namespace detail {

inline double f_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// Mean over `from` of overlap fraction with `to` times 1/(number of `to`
/// segments touched). Both lists are sorted and disjoint.
inline double range_side(const std::vector<Segment>& from, const std::vector<Segment>& to) {
  if (from.empty()) return 0.0;
  double total = 0.0;
  std::size_t j = 0;
  for (const auto& a : from) {
    while (j < to.size() && to[j].last < a.first) ++j;
    std::size_t overlap = 0, touched = 0;
    for (std::size_t k = j; k < to.size() && to[k].first <= a.last; ++k) {
      const std::size_t lo = std::max(a.first, to[k].first);
      const std::size_t hi = std::min(a.last, to[k].last);
      overlap += hi - lo + 1;
      ++touched;
    }
    const double card = touched > 1 ? 1.0 / static_cast<double>(touched) : 1.0;
    total += card * static_cast<double>(overlap) / static_cast<double>(a.size());
  }
  return total / static_cast<double>(from.size());
}

inline std::vector<int> predict(std::span<const double> scores, double threshold) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace detail

/// Range-based precision and recall at one threshold: existence weight 0,
/// flat positional bias, reciprocal cardinality factor.
inline double range_f_at(std::span<const double> scores, std::span<const int> labels,
                         double threshold) {
  const auto truth = segments(labels);
  const auto pred = segments(detail::predict(scores, threshold));
  const double recall = detail::range_side(truth, pred);
  const double precision = detail::range_side(pred, truth);
  return detail::f_score(precision, recall);
}

inline double range_f(std::span<const double> scores, std::span<const int> labels,
                      std::size_t grid = kDefaultGrid) {
  detail::check_inputs("range_f", scores, labels);
  double best = 0.0;
  for (double th : quantile_thresholds(scores, grid)) best = std::max(best, range_f_at(scores, labels, th));
  return best;
}

/// Point-wise F1 maximized over the quantile grid.
inline double f1_best(std::span<const double> scores, std::span<const int> labels,
                      std::size_t grid = kDefaultGrid) {
  detail::check_inputs("f1_best", scores, labels);
  double best = 0.0;
  for (double th : quantile_thresholds(scores, grid)) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool hit = scores[i] >= th;
      if (hit && labels[i]) ++tp;
      else if (hit) ++fp;
      else if (labels[i]) ++fn;
    }
    if (tp == 0) continue;
    const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
    best = std::max(best, detail::f_score(p, r));
  }
  return best;
}

/// 1 when the first maximal score lies inside the single labelled segment.
inline int ucr_accuracy(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    fail(ErrorKind::kShape, "ucr_accuracy: ", scores.size(), " scores vs ", labels.size(),
         " labels");
  }
  const auto segs = segments(labels);
  if (segs.size() != 1) {
    fail(ErrorKind::kData, "ucr_accuracy: needs exactly one anomaly segment, found ", segs.size());
  }
  const std::size_t arg = static_cast<std::size_t>(
      std::max_element(scores.begin(), scores.end()) - scores.begin());
  return arg >= segs[0].first && arg <= segs[0].last ? 1 : 0;
}

}  // namespace seldiff::metrics
