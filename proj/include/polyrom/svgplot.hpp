#ifndef POLYROM_SVGPLOT_HPP
#define POLYROM_SVGPLOT_HPP

#include <limits>
#include <string>
#include <vector>

#include "polyrom/linalg.hpp"

namespace polyrom {

struct PlotSeries {
  std::string label;
  Vector x;
  Vector y;
};

struct PlotConfig {
  std::string title;
  std::string x_label;
  std::string y_label;
  // Dashed vertical marker (train/test boundary) drawn when finite.
  double separator_x = std::numeric_limits<double>::quiet_NaN();
  int width = 800;
  int height = 480;
};

// Static line plot: polylines, axes with tick labels, legend, optional
// dashed vertical separator. Non-finite samples break the polyline. Output
// is plain SVG 1.1 with no external references.
void write_line_plot(const std::vector<PlotSeries>& series, const PlotConfig& cfg,
                     const std::string& path);

}  // namespace polyrom

#endif
