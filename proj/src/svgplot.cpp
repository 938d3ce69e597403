#include "polyrom/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "polyrom/errors.hpp"

namespace polyrom {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!(lo <= hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  double span = hi - lo;
  if (span <= 0.0) span = std::max(1.0, std::abs(hi));
  return Range{lo - 0.05 * span, hi + 0.05 * span};
}

}  // namespace

void write_line_plot(const std::vector<PlotSeries>& series, const PlotConfig& cfg,
                     const std::string& path) {
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) {
      throw DimensionError("write_line_plot: series '" + s.label + "' has mismatched lengths");
    }
  }
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (std::isfinite(cfg.separator_x)) {
    xlo = std::min(xlo, cfg.separator_x);
    xhi = std::max(xhi, cfg.separator_x);
  }
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);

  const double ml = 70.0, mr = 20.0, mt = 40.0, mb = 50.0;
  const double pw = cfg.width - ml - mr;
  const double ph = cfg.height - mt - mb;
  auto px = [&](double x) { return ml + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return mt + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cfg.width << "\" height=\""
      << cfg.height << "\" viewBox=\"0 0 " << cfg.width << " " << cfg.height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << cfg.width << "\" height=\"" << cfg.height
      << "\" fill=\"white\"/>\n";
  if (!cfg.title.empty()) {
    out << "<text x=\"" << cfg.width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << escape_xml(cfg.title)
        << "</text>\n";
  }

  // Axes box and ticks.
  out << "<rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw)
      << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  const int ticks = 5;
  for (int t = 0; t <= ticks; ++t) {
    double fx = xr.lo + (xr.hi - xr.lo) * t / ticks;
    double fy = yr.lo + (yr.hi - yr.lo) * t / ticks;
    double gx = px(fx), gy = py(fy);
    out << "<line x1=\"" << num(gx) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(gx)
        << "\" y2=\"" << num(mt + ph + 5) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(gx) << "\" y=\"" << num(mt + ph + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape_xml(num(fx)) << "</text>\n";
    out << "<line x1=\"" << num(ml - 5) << "\" y1=\"" << num(gy) << "\" x2=\"" << num(ml)
        << "\" y2=\"" << num(gy) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(ml - 8) << "\" y=\"" << num(gy + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape_xml(num(fy)) << "</text>\n";
  }
  if (!cfg.x_label.empty()) {
    out << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(cfg.height - 12)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << escape_xml(cfg.x_label) << "</text>\n";
  }
  if (!cfg.y_label.empty()) {
    out << "<text x=\"16\" y=\"" << num(mt + ph / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 16 " << num(mt + ph / 2) << ")\">"
        << escape_xml(cfg.y_label) << "</text>\n";
  }

  if (std::isfinite(cfg.separator_x)) {
    double gx = px(cfg.separator_x);
    out << "<line x1=\"" << num(gx) << "\" y1=\"" << num(mt) << "\" x2=\"" << num(gx)
        << "\" y2=\"" << num(mt + ph)
        << "\" stroke=\"black\" stroke-dasharray=\"6 4\" stroke-width=\"1\"/>\n";
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kPaletteSize];
    const auto& sr = series[s];
    std::string points;
    auto flush = [&]() {
      if (!points.empty()) {
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
            << "points=\"" << points << "\"/>\n";
        points.clear();
      }
    };
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) {
        flush();
        continue;
      }
      if (!points.empty()) points += ' ';
      points += num(px(sr.x[i])) + "," + num(py(sr.y[i]));
    }
    flush();
    // Legend entry.
    double ly = mt + 16.0 + 16.0 * static_cast<double>(s);
    out << "<line x1=\"" << num(ml + pw - 150) << "\" y1=\"" << num(ly) << "\" x2=\""
        << num(ml + pw - 120) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << num(ml + pw - 114) << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(sr.label)
        << "</text>\n";
  }
  out << "</svg>\n";

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw Error("write to '" + path + "' failed");
}

}  // namespace polyrom
