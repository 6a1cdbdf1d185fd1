#include "seam/svg.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "seam/error.hpp"

namespace seam {

namespace {

constexpr std::array<const char*, 6> kPalette = {"#1f77b4", "#d62728", "#2ca02c",
                                                 "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kLeft = 64, kRight = 150, kTop = 36, kBottom = 52;

struct Range {
  double lo, hi;
};

Range padded(double lo, double hi) {
  if (lo == hi) return {lo - 1.0, hi + 1.0};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void check(const std::vector<Series>& series) {
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DataError("series '" + s.name + "': x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        throw DataError("series '" + s.name + "': non-finite value");
      }
    }
  }
}

class Canvas {
 public:
  Canvas(const ChartSpec& spec, const std::vector<Series>& series) : spec_(spec) {
    check(series);
    double xl = 0, xh = 1, yl = 0, yh = 1;
    bool any = false;
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!any) {
          xl = xh = s.x[i];
          yl = yh = s.y[i];
          any = true;
        }
        xl = std::min(xl, s.x[i]);
        xh = std::max(xh, s.x[i]);
        yl = std::min(yl, s.y[i]);
        yh = std::max(yh, s.y[i]);
      }
    }
    x_ = padded(xl, xh);
    y_ = padded(yl, yh);
  }

  double px(double x) const {
    return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (spec_.width - kLeft - kRight);
  }
  double py(double y) const {
    return spec_.height - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (spec_.height - kTop - kBottom);
  }

  std::string frame(const std::vector<Series>& series) const {
    const int w = spec_.width, h = spec_.height;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                      "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) +
                      " " + std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + std::to_string(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
           xml_escape(spec_.title) + "</text>\n";
    const double x0 = kLeft, x1 = w - kRight, y0 = h - kBottom, y1 = kTop;
    out += "<line x1=\"" + format_number(x0) + "\" y1=\"" + format_number(y0) + "\" x2=\"" +
           format_number(x1) + "\" y2=\"" + format_number(y0) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + format_number(x0) + "\" y1=\"" + format_number(y0) + "\" x2=\"" +
           format_number(x0) + "\" y2=\"" + format_number(y1) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      out += "<text x=\"" + format_number(px(xv)) + "\" y=\"" + format_number(y0 + 16) +
             "\" text-anchor=\"middle\">" + tick(xv) + "</text>\n";
      out += "<text x=\"" + format_number(x0 - 6) + "\" y=\"" + format_number(py(yv) + 4) +
             "\" text-anchor=\"end\">" + tick(yv) + "</text>\n";
    }
    out += "<text x=\"" + format_number((x0 + x1) / 2) + "\" y=\"" + std::to_string(h - 12) +
           "\" text-anchor=\"middle\">" + xml_escape(spec_.x_label) + "</text>\n";
    out += "<text transform=\"translate(16," + format_number((y0 + y1) / 2) +
           ") rotate(-90)\" text-anchor=\"middle\">" + xml_escape(spec_.y_label) + "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double ly = kTop + 14.0 * static_cast<double>(i);
      out += "<rect x=\"" + format_number(x1 + 12) + "\" y=\"" + format_number(ly - 8) +
             "\" width=\"10\" height=\"10\" fill=\"" + color(i) + "\"/>\n";
      out += "<text x=\"" + format_number(x1 + 26) + "\" y=\"" + format_number(ly + 1) + "\">" +
             xml_escape(series[i].name) + "</text>\n";
    }
    return out;
  }

  static std::string color(std::size_t i) { return kPalette[i % kPalette.size()]; }

 private:
  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }

  const ChartSpec& spec_;
  Range x_{0, 1}, y_{0, 1};
};

}  // namespace

std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string xml_escape(const std::string& s) {
  std::string out;
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

std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series) {
  Canvas c(spec, series);
  std::string out = c.frame(series);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    std::string pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k) pts += ' ';
      pts += format_number(c.px(s.x[k])) + "," + format_number(c.py(s.y[k]));
    }
    out += "<polyline fill=\"none\" stroke=\"" + Canvas::color(i) + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      out += "<circle cx=\"" + format_number(c.px(s.x[k])) + "\" cy=\"" + format_number(c.py(s.y[k])) +
             "\" r=\"3\" fill=\"" + Canvas::color(i) + "\"/>\n";
    }
  }
  return out + "</svg>\n";
}

std::string scatter_chart_svg(const ChartSpec& spec, const std::vector<Series>& series) {
  Canvas c(spec, series);
  std::string out = c.frame(series);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      out += "<circle cx=\"" + format_number(c.px(s.x[k])) + "\" cy=\"" + format_number(c.py(s.y[k])) +
             "\" r=\"2.5\" fill-opacity=\"0.6\" fill=\"" + Canvas::color(i) + "\"/>\n";
    }
  }
  return out + "</svg>\n";
}

std::string series_csv(const std::vector<Series>& series) {
  check(series);
  std::string out = "series,x,y\n";
  for (const auto& s : series) {
    std::string name = s.name;
    if (name.find_first_of(",\"\n") != std::string::npos) {
      std::string q = "\"";
      for (char ch : name) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      name = q + "\"";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      out += name + "," + format_number(s.x[i]) + "," + format_number(s.y[i]) + "\n";
    }
  }
  return out;
}

}  // namespace seam
