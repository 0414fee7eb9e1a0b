#pragma once

// Minimal static SVG line/step plots for the study outputs. Purely a side
// channel: nothing here feeds back into numeric results.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "uniform_lse/errors.hpp"

namespace uniform_lse {

class SvgPlot {
public:
  enum class Style { line, points, bars };

  SvgPlot(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

  void add_series(std::string name, std::vector<double> xs, std::vector<double> ys, Style style = Style::line) {
    series_.push_back({std::move(name), std::move(xs), std::move(ys), style});
  }

  std::string render() const {
    constexpr double width = 720.0;
    constexpr double height = 480.0;
    constexpr double left = 70.0;
    constexpr double right = 170.0;
    constexpr double top = 40.0;
    constexpr double bottom = 60.0;

    double x_min = std::numeric_limits<double>::infinity();
    double x_max = -x_min;
    double y_min = 0.0;
    double y_max = -std::numeric_limits<double>::infinity();
    for (const auto &s : series_) {
      for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
        if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) {
          continue;
        }
        x_min = std::min(x_min, s.xs[i]);
        x_max = std::max(x_max, s.xs[i]);
        y_min = std::min(y_min, s.ys[i]);
        y_max = std::max(y_max, s.ys[i]);
      }
    }
    if (!(x_max > x_min)) {
      x_min -= 1.0;
      x_max += 1.0;
    }
    if (!(y_max > y_min)) {
      y_max = y_min + 1.0;
    }
    y_max += 0.05 * (y_max - y_min);

    const double pw = width - left - right;
    const double ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
    auto py = [&](double y) { return top + ph - (y - y_min) / (y_max - y_min) * ph; };

    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                  "viewBox=\"0 0 %.0f %.0f\" font-family=\"sans-serif\" font-size=\"12\">\n",
                  width, height, width, height);
    out += buf;
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-size=\"15\">%s</text>\n", left,
                  escape(title_).c_str());
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
                  left, top, pw, ph);
    out += buf;

    for (int i = 0; i <= 5; ++i) {
      const double xv = x_min + (x_max - x_min) * i / 5.0;
      const double yv = y_min + (y_max - y_min) * i / 5.0;
      std::snprintf(buf, sizeof buf,
                    "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.4g</text>\n"
                    "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n",
                    px(xv), top + ph + 18.0, xv, left - 6.0, py(yv) + 4.0, yv);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n",
                  left + pw / 2.0, height - 16.0, escape(x_label_).c_str());
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"16\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
                  top + ph / 2.0, top + ph / 2.0, escape(y_label_).c_str());
    out += buf;

    static const char *palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    for (std::size_t k = 0; k < series_.size(); ++k) {
      const auto &s = series_[k];
      const char *color = palette[k % 6];
      const std::size_t count = std::min(s.xs.size(), s.ys.size());
      if (s.style == Style::line) {
        out += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"";
        out += color;
        out += "\" points=\"";
        for (std::size_t i = 0; i < count; ++i) {
          std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.xs[i]), py(s.ys[i]));
          out += buf;
        }
        out += "\"/>\n";
      } else if (s.style == Style::points) {
        for (std::size_t i = 0; i < count; ++i) {
          std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", px(s.xs[i]),
                        py(s.ys[i]), color);
          out += buf;
        }
      } else {
        const double bar = count > 1 ? std::fabs(px(s.xs[1]) - px(s.xs[0])) : 4.0;
        for (std::size_t i = 0; i < count; ++i) {
          std::snprintf(buf, sizeof buf,
                        "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" "
                        "fill-opacity=\"0.35\"/>\n",
                        px(s.xs[i]) - bar / 2.0, py(s.ys[i]), bar, py(y_min) - py(s.ys[i]), color);
          out += buf;
        }
      }
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                    "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                    left + pw + 12.0, top + 18.0 * static_cast<double>(k), color, left + pw + 30.0,
                    top + 18.0 * static_cast<double>(k) + 10.0, escape(s.name).c_str());
      out += buf;
    }
    out += "</svg>\n";
    return out;
  }

  void write(const std::string &path) const {
    std::ofstream f(path);
    if (!f) {
      throw Error("cannot write plot '" + path + "'");
    }
    f << render();
  }

private:
  struct Series {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
    Style style;
  };

  static std::string escape(const std::string &s) {
    std::string out;
    for (char c : s) {
      switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
      }
    }
    return out;
  }

  std::string title_;
  std::string x_label_;
  std::string y_label_;
  std::vector<Series> series_;
};

} // namespace uniform_lse
