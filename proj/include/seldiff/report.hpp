#pragma once

// MetricsReport: every detection metric for one scored series plus the
// settings that produced it. Serialized as JSON; absent values are null.

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "seldiff/config.hpp"
#include "seldiff/error.hpp"
#include "seldiff/metrics.hpp"
#include "seldiff/scoring.hpp"

namespace seldiff {

using Json = nlohmann::ordered_json;

struct MetricsReport {
  std::optional<double> f1_best;
  std::optional<double> auc_roc;
  std::optional<double> auc_pr;
  std::optional<double> range_auc_roc;
  std::optional<double> range_auc_pr;
  std::optional<double> vus_roc;
  std::optional<double> vus_pr;
  std::optional<double> range_f;
  std::optional<int> ucr_accuracy;  // only for series with a single anomaly segment
  std::optional<double> mse_a;
  std::optional<double> mse_n;
  std::optional<double> mse_ratio;
  std::size_t threshold_grid = metrics::kDefaultGrid;
  std::uint64_t seed = 0;
  std::string config_hash;

  // scoring protocol
  std::size_t buffer = 50;
  std::size_t vus_max_buffer = 50;
  std::size_t smoothing_window = 50;
  std::string smoothing_mode = "centered";
  std::string method;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace detail {

template <typename T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

template <typename T>
std::optional<T> get_opt(const Json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::kData, "metrics report: missing field '", key, "'");
  if (j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace detail

inline Json to_json(const MetricsReport& r) {
  Json j;
  j["f1_best"] = detail::opt(r.f1_best);
  j["auc_roc"] = detail::opt(r.auc_roc);
  j["auc_pr"] = detail::opt(r.auc_pr);
  j["range_auc_roc"] = detail::opt(r.range_auc_roc);
  j["range_auc_pr"] = detail::opt(r.range_auc_pr);
  j["vus_roc"] = detail::opt(r.vus_roc);
  j["vus_pr"] = detail::opt(r.vus_pr);
  j["range_f"] = detail::opt(r.range_f);
  j["ucr_accuracy"] = detail::opt(r.ucr_accuracy);
  j["mse_a"] = detail::opt(r.mse_a);
  j["mse_n"] = detail::opt(r.mse_n);
  j["mse_ratio"] = detail::opt(r.mse_ratio);
  j["threshold_grid"] = r.threshold_grid;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["protocol"] = {{"buffer", r.buffer},
                   {"vus_max_buffer", r.vus_max_buffer},
                   {"smoothing_window", r.smoothing_window},
                   {"smoothing_mode", r.smoothing_mode},
                   {"method", r.method}};
  return j;
}

inline MetricsReport report_from_json(const Json& j) {
  try {
    MetricsReport r;
    r.f1_best = detail::get_opt<double>(j, "f1_best");
    r.auc_roc = detail::get_opt<double>(j, "auc_roc");
    r.auc_pr = detail::get_opt<double>(j, "auc_pr");
    r.range_auc_roc = detail::get_opt<double>(j, "range_auc_roc");
    r.range_auc_pr = detail::get_opt<double>(j, "range_auc_pr");
    r.vus_roc = detail::get_opt<double>(j, "vus_roc");
    r.vus_pr = detail::get_opt<double>(j, "vus_pr");
    r.range_f = detail::get_opt<double>(j, "range_f");
    r.ucr_accuracy = detail::get_opt<int>(j, "ucr_accuracy");
    r.mse_a = detail::get_opt<double>(j, "mse_a");
    r.mse_n = detail::get_opt<double>(j, "mse_n");
    r.mse_ratio = detail::get_opt<double>(j, "mse_ratio");
    r.threshold_grid = j.at("threshold_grid").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    const Json& p = j.at("protocol");
    r.buffer = p.at("buffer").get<std::size_t>();
    r.vus_max_buffer = p.at("vus_max_buffer").get<std::size_t>();
    r.smoothing_window = p.at("smoothing_window").get<std::size_t>();
    r.smoothing_mode = p.at("smoothing_mode").get<std::string>();
    r.method = p.at("method").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "metrics report: ", e.what());
  }
}

/// All metrics for smoothed `scores` against `labels`; the MSE split uses
/// the unsmoothed `raw` errors and is skipped when `raw` is empty. Metrics
/// that need both classes are left absent when the labels hold only one.
inline MetricsReport evaluate(std::span<const double> scores, std::span<const double> raw,
                              std::span<const int> labels, const config::MetricsConfig& mc) {
  if (scores.size() != labels.size() || (!raw.empty() && raw.size() != labels.size())) {
    fail(ErrorKind::kShape, "evaluate: ", scores.size(), " scores, ", raw.size(), " raw errors, ",
         labels.size(), " labels");
  }
  MetricsReport r;
  r.threshold_grid = mc.grid;
  r.buffer = mc.buffer;
  r.vus_max_buffer = mc.vus_max_buffer;
  bool pos = false, neg = false;
  for (int l : labels) (l ? pos : neg) = true;
  if (pos && neg) {
    const auto auc = metrics::roc_pr_auc(scores, labels);
    const auto rauc = metrics::range_auc(scores, labels, mc.buffer);
    const auto v = metrics::vus(scores, labels, mc.vus_max_buffer);
    r.auc_roc = auc.roc;
    r.auc_pr = auc.pr;
    r.range_auc_roc = rauc.roc;
    r.range_auc_pr = rauc.pr;
    r.vus_roc = v.roc;
    r.vus_pr = v.pr;
    r.f1_best = metrics::f1_best(scores, labels, mc.grid);
    r.range_f = metrics::range_f(scores, labels, mc.grid);
    if (metrics::segments(labels).size() == 1) r.ucr_accuracy = metrics::ucr_accuracy(scores, labels);
  }
  if (!raw.empty()) {
    const auto split = scoring::mse_split(raw, labels);
    r.mse_a = split.mse_a;
    r.mse_n = split.mse_n;
    r.mse_ratio = split.ratio;
  }
  return r;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorKind::kIo, "write failed for '", path, "'");
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, path, ": ", e.what());
  }
}

}  // namespace seldiff
