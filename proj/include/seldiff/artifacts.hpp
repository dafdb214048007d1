#pragma once

// Text artifacts written by the command-line tool: score tables and
// training logs. Each starts with a `# key=value,...` provenance line.

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seldiff/config.hpp"
#include "seldiff/data.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/error.hpp"
#include "seldiff/scoring.hpp"

namespace seldiff::artifacts {

using Provenance = std::vector<std::pair<std::string, std::string>>;

inline std::string provenance_line(const Provenance& p) {
  std::string s = "#";
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "," : " ") + p[i].first + "=" + p[i].second;
  return s + "\n";
}

inline std::map<std::string, std::string> parse_provenance(std::string_view line) {
  std::map<std::string, std::string> out;
  line = data::detail::trim(line);
  if (line.empty() || line.front() != '#') return out;
  line.remove_prefix(1);
  for (auto cell : data::detail::split_cells(line)) {
    const auto eq = cell.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace(std::string(data::detail::trim(cell.substr(0, eq))),
                std::string(data::detail::trim(cell.substr(eq + 1))));
  }
  return out;
}

/// `t,score,mse[,label]` where score is smoothed and mse is the raw
/// per-timestep reconstruction error.
inline std::string score_csv(const scoring::ScoreSeries& s, const std::optional<std::vector<int>>& labels,
                             const Provenance& prov) {
  std::ostringstream o;
  o << provenance_line(prov);
  o << "t,score,mse" << (labels ? ",label" : "") << "\n";
  for (std::size_t t = 0; t < s.scores.size(); ++t) {
    o << t << "," << config::format_double(s.scores[t]) << "," << config::format_double(s.raw[t]);
    if (labels) o << "," << (*labels)[t];
    o << "\n";
  }
  return o.str();
}

struct ScoreTable {
  std::vector<double> scores;
  std::optional<std::vector<double>> raw;
  std::optional<std::vector<int>> labels;
  std::map<std::string, std::string> provenance;
};

inline ScoreTable read_score_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  std::string line;
  ScoreTable table;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  std::optional<std::size_t> col_score, col_raw, col_label;
  while (std::getline(in, line)) {
    ++line_no;
    const auto v = data::detail::trim(line);
    if (v.empty()) continue;
    if (v.front() == '#') {
      if (table.provenance.empty()) table.provenance = parse_provenance(v);
      continue;
    }
    const auto cells = data::detail::split_cells(v);
    if (header.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        header.emplace_back(cells[i]);
        if (cells[i] == "score") col_score = i;
        if (cells[i] == "mse") col_raw = i;
        if (cells[i] == "label") col_label = i;
      }
      if (!col_score) fail(ErrorKind::kData, path, ": missing 'score' column");
      if (col_raw) table.raw.emplace();
      if (col_label) table.labels.emplace();
      continue;
    }
    if (cells.size() != header.size()) {
      fail(ErrorKind::kData, path, ": row at line ", line_no, " has ", cells.size(), " cells, expected ",
           header.size());
    }
    auto num = [&](std::size_t col) {
      const auto x = data::detail::parse_number(cells[col]);
      if (!x) fail(ErrorKind::kData, path, ": non-numeric cell '", cells[col], "' at line ", line_no);
      return *x;
    };
    table.scores.push_back(num(*col_score));
    if (col_raw) table.raw->push_back(num(*col_raw));
    if (col_label) {
      const double l = num(*col_label);
      if (l != 0.0 && l != 1.0) fail(ErrorKind::kData, path, ": label at line ", line_no, " is not 0 or 1");
      table.labels->push_back(static_cast<int>(l));
    }
  }
  if (table.scores.empty()) fail(ErrorKind::kData, path, ": no score rows");
  return table;
}

inline std::string training_log_csv(const diffusion::TrainResult& r, const Provenance& prov) {
  std::ostringstream o;
  o << provenance_line(prov);
  o << "epoch,train_loss,val_loss,updates\n";
  for (const auto& e : r.log) {
    o << e.epoch << "," << config::format_double(e.train_loss) << "," << config::format_double(e.val_loss)
      << "," << e.updates << "\n";
  }
  return o.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for '", path, "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

}  // namespace seldiff::artifacts
