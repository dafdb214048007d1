#pragma once

// Time-series containers, CSV in/out, z-score normalization and sliding
// windows.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "seldiff/error.hpp"
#include "seldiff/ndarray.hpp"

namespace seldiff::data {

/// values is (D, N): one row per feature.
struct TimeSeries {
  NdArray values;
  std::optional<std::vector<int>> labels;
  std::string name;

  std::size_t n_features() const { return values.rank() == 2 ? values.dim(0) : 0; }
  std::size_t length() const { return values.rank() == 2 ? values.dim(1) : 0; }
  bool has_labels() const { return labels.has_value(); }

  double value(std::size_t feature, std::size_t t) const {
    return values[feature * length() + t];
  }

  void validate() const {
    if (values.rank() != 2) {
      fail(ErrorKind::kShape, "series '", name, "': values must be (D, N), got ",
           shape_str(values.shape()));
    }
    if (labels) {
      if (labels->size() != length()) {
        fail(ErrorKind::kData, "series '", name, "': ", labels->size(), " labels for ",
             length(), " timesteps");
      }
      for (std::size_t i = 0; i < labels->size(); ++i) {
        if ((*labels)[i] != 0 && (*labels)[i] != 1) {
          fail(ErrorKind::kData, "series '", name, "': label at t=", i, " is ",
               (*labels)[i], ", expected 0 or 1");
        }
      }
    }
    if (!values.all_finite()) fail(ErrorKind::kData, "series '", name, "' has non-finite values");
  }
};

// ---------------------------------------------------------------------------
// CSV

enum class HeaderMode { kAuto, kPresent, kAbsent };

struct CsvSchema {
  HeaderMode header = HeaderMode::kAuto;
  std::string label_column = "label";
  bool require_labels = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Comma-separated rows, one timestep per row. Blank lines and lines
/// starting with '#' are skipped. A header is detected automatically when the
/// first row holds a non-numeric cell. The label column is only recognized
/// by header name.
inline TimeSeries parse_csv(std::istream& in, const CsvSchema& schema,
                            const std::string& source = "<stream>") {
  std::vector<std::string> header;
  std::optional<std::size_t> label_col;
  std::size_t width = 0;
  bool have_width = false;
  std::vector<std::vector<double>> columns;
  std::vector<int> labels;

  std::string line;
  std::size_t line_no = 0;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto cells = detail::split_cells(view);

    if (first_row) {
      first_row = false;
      bool is_header = schema.header == HeaderMode::kPresent;
      if (schema.header == HeaderMode::kAuto) {
        is_header = std::any_of(cells.begin(), cells.end(),
                                [](std::string_view c) { return !detail::parse_number(c); });
      }
      if (is_header) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
          header.emplace_back(cells[i]);
          if (cells[i] == schema.label_column) label_col = i;
        }
        width = cells.size();
        have_width = true;
        if (label_col && width == 1) {
          fail(ErrorKind::kData, source, ": header has only the label column");
        }
        continue;
      }
    }
    if (!have_width) {
      width = cells.size();
      have_width = true;
    }
    if (cells.size() != width) {
      fail(ErrorKind::kData, source, ": row at line ", line_no, " has ", cells.size(),
           " cells, expected ", width);
    }
    if (columns.empty()) columns.resize(width - (label_col ? 1 : 0));
    std::size_t out_col = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto v = detail::parse_number(cells[i]);
      if (!v) {
        fail(ErrorKind::kData, source, ": non-numeric cell '", cells[i], "' at line ", line_no,
             ", column ", i + 1);
      }
      if (label_col && i == *label_col) {
        if (*v != 0.0 && *v != 1.0) {
          fail(ErrorKind::kData, source, ": label '", cells[i], "' at line ", line_no,
               " is not 0 or 1");
        }
        labels.push_back(static_cast<int>(*v));
      } else {
        if (!std::isfinite(*v)) {
          fail(ErrorKind::kData, source, ": non-finite value at line ", line_no, ", column ",
               i + 1);
        }
        columns[out_col++].push_back(*v);
      }
    }
  }

  if (schema.require_labels && !label_col) {
    fail(ErrorKind::kData, source, ": missing label column '", schema.label_column, "'");
  }
  if (columns.empty() || columns[0].empty()) fail(ErrorKind::kData, source, ": no data rows");

  const std::size_t d = columns.size(), n = columns[0].size();
  TimeSeries ts;
  ts.name = source;
  ts.values = NdArray({d, n});
  for (std::size_t k = 0; k < d; ++k) {
    std::copy(columns[k].begin(), columns[k].end(), ts.values.data().begin() + k * n);
  }
  if (label_col) ts.labels = std::move(labels);
  return ts;
}

inline TimeSeries load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  return parse_csv(in, schema, path);
}

/// Writes a header `x0,...,x{D-1}[,label]` and full-precision values.
inline void write_csv(std::ostream& out, const TimeSeries& ts) {
  const std::size_t d = ts.n_features(), n = ts.length();
  for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << "x" << k;
  if (ts.labels) out << ",label";
  out << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << ts.value(k, t);
    if (ts.labels) out << "," << (*ts.labels)[t];
    out << "\n";
  }
}

inline void save_csv(const std::string& path, const TimeSeries& ts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  write_csv(out, ts);
  if (!out) fail(ErrorKind::kIo, "write failed for '", path, "'");
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;  // std, or 1 where the std is zero
};

/// Per-feature mean and population standard deviation.
inline NormStats fit_normalization(const TimeSeries& train) {
  const std::size_t d = train.n_features(), n = train.length();
  if (n == 0) fail(ErrorKind::kData, "normalize: empty training series");
  NormStats s{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t k = 0; k < d; ++k) {
    double sum = 0.0;
    for (std::size_t t = 0; t < n; ++t) sum += train.value(k, t);
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) ss += (train.value(k, t) - mu) * (train.value(k, t) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[k] = mu;
    s.scale[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

inline TimeSeries apply_normalization(const TimeSeries& ts, const NormStats& s) {
  if (ts.n_features() != s.mean.size()) {
    fail(ErrorKind::kShape, "normalize: series '", ts.name, "' has ", ts.n_features(),
         " features, statistics have ", s.mean.size());
  }
  TimeSeries out = ts;
  const std::size_t n = ts.length();
  for (std::size_t k = 0; k < ts.n_features(); ++k)
    for (std::size_t t = 0; t < n; ++t)
      out.values[k * n + t] = (ts.value(k, t) - s.mean[k]) / s.scale[k];
  return out;
}

struct Normalized {
  TimeSeries train;
  std::vector<TimeSeries> others;
  NormStats stats;
};

inline Normalized normalize(const TimeSeries& train, const std::vector<TimeSeries>& others = {}) {
  Normalized out;
  out.stats = fit_normalization(train);
  out.train = apply_normalization(train, out.stats);
  for (const auto& ts : others) out.others.push_back(apply_normalization(ts, out.stats));
  return out;
}

// ---------------------------------------------------------------------------
// Windows

/// kTraining drops a trailing partial window; kInference clamps the last
/// origin to N - L so every timestep is covered.
enum class WindowMode { kTraining, kInference };

struct WindowSet {
  std::vector<NdArray> windows;  // each (D, L)
  std::vector<std::size_t> origins;
  std::size_t length = 0;
  std::size_t stride = 0;
};

inline std::vector<std::size_t> window_origins(std::size_t n, std::size_t len, std::size_t stride,
                                               WindowMode mode) {
  if (len == 0 || stride == 0) fail(ErrorKind::kRange, "make_windows: L and stride must be >= 1");
  if (n < len) fail(ErrorKind::kData, "make_windows: series length ", n, " < window length ", len);
  std::vector<std::size_t> origins;
  for (std::size_t o = 0; o + len <= n; o += stride) origins.push_back(o);
  if (mode == WindowMode::kInference && origins.back() + len < n) origins.push_back(n - len);
  return origins;
}

inline WindowSet make_windows(const TimeSeries& ts, std::size_t len, std::size_t stride,
                              WindowMode mode) {
  WindowSet ws;
  ws.length = len;
  ws.stride = stride;
  ws.origins = window_origins(ts.length(), len, stride, mode);
  const std::size_t d = ts.n_features(), n = ts.length();
  for (std::size_t o : ws.origins) {
    NdArray w({d, len});
    for (std::size_t k = 0; k < d; ++k)
      std::copy_n(ts.values.data().begin() + k * n + o, len, w.data().begin() + k * len);
    ws.windows.push_back(std::move(w));
  }
  return ws;
}

}  // namespace seldiff::data
