#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/harness/report.hpp"

namespace oampsa::harness {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (snr_db, ser), sorted by snr
};

/// Groups rows by detector in order of first appearance.
inline std::vector<Series> group_series(const std::vector<EvalRow>& rows) {
  std::vector<Series> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& s) { return s.name == r.detector; });
    if (it == out.end()) {
      out.push_back({r.detector, {}});
      it = out.end() - 1;
    }
    it->points.emplace_back(r.snr_db, r.ser);
  }
  for (auto& s : out) std::stable_sort(s.points.begin(), s.points.end());
  return out;
}

namespace detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace detail

/// Log-y SER vs SNR line plot. Output depends only on the rows.
/// Zero SER values are drawn on the bottom axis.
inline std::string render_ser_svg(const std::vector<EvalRow>& rows, const std::string& title = "SER vs SNR") {
  const auto series = group_series(rows);
  if (series.empty()) throw DataError("no data rows to plot");

  double x_lo = series[0].points[0].first, x_hi = x_lo;
  double y_min = 1.0, y_max = 0.0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      if (y > 0.0) {
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
    }
  if (x_hi == x_lo) {
    x_lo -= 1.0;
    x_hi += 1.0;
  }
  if (y_max == 0.0) {  // every SER is zero
    y_min = 1e-6;
    y_max = 1e-5;
  }
  const int dec_lo = static_cast<int>(std::floor(std::log10(y_min))) - (y_min == y_max ? 1 : 0);
  int dec_hi = static_cast<int>(std::ceil(std::log10(y_max)));
  if (dec_hi <= dec_lo) dec_hi = dec_lo + 1;

  const double W = 640, H = 480, left = 80, right = 160, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) {
    const double ly = y > 0.0 ? std::log10(y) : static_cast<double>(dec_lo);
    return top + (static_cast<double>(dec_hi) - std::max(ly, static_cast<double>(dec_lo))) /
                     static_cast<double>(dec_hi - dec_lo) * ph;
  };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  static const char* kMarks[] = {"circle", "square", "diamond", "triangle"};

  using detail::fmt;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt("%.2f", left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         detail::xml_escape(title) + "</text>\n";
  // grid and y ticks per decade
  for (int d = dec_lo; d <= dec_hi; ++d) {
    const double y = top + static_cast<double>(dec_hi - d) / static_cast<double>(dec_hi - dec_lo) * ph;
    svg += "<line x1=\"" + fmt("%.2f", left) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" + fmt("%.2f", left + pw) +
           "\" y2=\"" + fmt("%.2f", y) + "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + fmt("%.2f", left - 8) + "\" y=\"" + fmt("%.2f", y + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">1e" + std::to_string(d) + "</text>\n";
  }
  // x ticks at every distinct SNR value (at most 12, evenly thinned)
  std::vector<double> xs;
  for (const auto& s : series)
    for (const auto& p : s.points) xs.push_back(p.first);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const std::size_t stride = (xs.size() + 11) / 12;
  for (std::size_t i = 0; i < xs.size(); i += stride) {
    const double x = px(xs[i]);
    svg += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", top) + "\" x2=\"" + fmt("%.2f", x) + "\" y2=\"" +
           fmt("%.2f", top + ph) + "\" stroke=\"#eeeeee\"/>\n";
    svg += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", top + ph + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + fmt("%g", xs[i]) + "</text>\n";
  }
  svg += "<rect x=\"" + fmt("%.2f", left) + "\" y=\"" + fmt("%.2f", top) + "\" width=\"" + fmt("%.2f", pw) +
         "\" height=\"" + fmt("%.2f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + fmt("%.2f", left + pw / 2) + "\" y=\"" + fmt("%.2f", H - 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">SNR [dB]</text>\n";
  svg += "<text x=\"20\" y=\"" + fmt("%.2f", top + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" " +
         "font-size=\"14\" transform=\"rotate(-90 20 " + fmt("%.2f", top + ph / 2) + ")\">SER</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = kColors[k % 8];
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!pts.empty()) pts += " ";
      pts += fmt("%.2f", px(x)) + "," + fmt("%.2f", py(y));
    }
    if (s.points.size() > 1) {
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    }
    const std::string mark = kMarks[k % 4];
    for (const auto& [x, y] : s.points) {
      const double cx = px(x), cy = py(y);
      if (mark == "circle") {
        svg += "<circle cx=\"" + fmt("%.2f", cx) + "\" cy=\"" + fmt("%.2f", cy) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
      } else if (mark == "square") {
        svg += "<rect x=\"" + fmt("%.2f", cx - 4) + "\" y=\"" + fmt("%.2f", cy - 4) + "\" width=\"8\" height=\"8\" fill=\"" +
               color + "\"/>\n";
      } else if (mark == "diamond") {
        svg += "<polygon points=\"" + fmt("%.2f", cx) + "," + fmt("%.2f", cy - 5) + " " + fmt("%.2f", cx + 5) + "," +
               fmt("%.2f", cy) + " " + fmt("%.2f", cx) + "," + fmt("%.2f", cy + 5) + " " + fmt("%.2f", cx - 5) + "," +
               fmt("%.2f", cy) + "\" fill=\"" + color + "\"/>\n";
      } else {
        svg += "<polygon points=\"" + fmt("%.2f", cx) + "," + fmt("%.2f", cy - 5) + " " + fmt("%.2f", cx + 5) + "," +
               fmt("%.2f", cy + 4) + " " + fmt("%.2f", cx - 5) + "," + fmt("%.2f", cy + 4) + "\" fill=\"" + color +
               "\"/>\n";
      }
    }
    const double ly = top + 10 + 22 * static_cast<double>(k);
    const double lx = left + pw + 16;
    svg += "<line x1=\"" + fmt("%.2f", lx) + "\" y1=\"" + fmt("%.2f", ly) + "\" x2=\"" + fmt("%.2f", lx + 24) +
           "\" y2=\"" + fmt("%.2f", ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt("%.2f", lx + 30) + "\" y=\"" + fmt("%.2f", ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + detail::xml_escape(s.name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace oampsa::harness
