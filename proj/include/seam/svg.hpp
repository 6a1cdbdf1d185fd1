#pragma once

#include <string>
#include <vector>

namespace seam {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 400;
};

/// Static SVG with axes, ticks and a legend. Throws DataError when a series
/// has mismatched x/y lengths or a non-finite value.
std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series);
std::string scatter_chart_svg(const ChartSpec& spec, const std::vector<Series>& series);

/// "series,x,y" rows, one per point.
std::string series_csv(const std::vector<Series>& series);

/// Shortest round-trip decimal form, locale independent.
std::string format_number(double v);

/// Escapes &, <, >, " for SVG text and attributes.
std::string xml_escape(const std::string& s);

}  // namespace seam
