#pragma once

// Static SVG line plots for score series, with labelled ranges shaded.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seldiff/error.hpp"
#include "seldiff/metrics.hpp"

namespace seldiff::plot {

struct Line {
  std::string name;
  std::vector<double> values;
  std::string color = "#1f77b4";
};

inline std::string svg_lines(const std::vector<Line>& lines, std::span<const int> labels,
                             const std::string& title, int width = 1000, int height = 320) {
  const double pad = 40.0;
  std::size_t n = labels.size();
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& l : lines) {
    n = std::max(n, l.values.size());
    for (double v : l.values) {
      if (first) lo = hi = v, first = false;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  const double w = width - 2 * pad, h = height - 2 * pad;
  auto fx = [&](std::size_t i) { return pad + (n > 1 ? w * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0); };
  auto fy = [&](double v) { return pad + h * (1.0 - (v - lo) / (hi - lo)); };
  char buf[64];
  auto f = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& s : metrics::segments(labels)) {
    const double x0 = fx(s.first), x1 = fx(s.last);
    o << "<rect x=\"" << f(x0 - 1) << "\" y=\"" << pad << "\" width=\"" << f(x1 - x0 + 2) << "\" height=\"" << h
      << "\" fill=\"#ffcccc\"/>\n";
  }
  o << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w << "\" height=\"" << h
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (const auto& l : lines) {
    o << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < l.values.size(); ++i) o << (i ? " " : "") << f(fx(i)) << "," << f(fy(l.values[i]));
    o << "\"/>\n";
  }
  o << "<text x=\"" << pad << "\" y=\"" << pad - 12 << "\" font-family=\"sans-serif\" font-size=\"14\">" << title
    << "</text>\n";
  double ly = pad + 14;
  for (const auto& l : lines) {
    o << "<text x=\"" << width - pad - 150 << "\" y=\"" << f(ly) << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
      << l.color << "\">" << l.name << "</text>\n";
    ly += 14;
  }
  o << "<text x=\"4\" y=\"" << f(fy(hi) + 4) << "\" font-size=\"10\">" << f(hi) << "</text>\n";
  o << "<text x=\"4\" y=\"" << f(fy(lo)) << "\" font-size=\"10\">" << f(lo) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

inline void save_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  out << svg;
}

}  // namespace seldiff::plot
