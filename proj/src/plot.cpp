#include "recog/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "recog/tensor.hpp"

namespace recog {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0, kRight = 150.0, kTop = 40.0, kBottom = 50.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

std::string header(double w, double h) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      w, h, w, h);
}

/// Round step giving about `n` ticks over [lo, hi].
double tick_step(double lo, double hi, int n) {
  const double raw = (hi - lo) / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

struct Axes {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string frame(const Axes& a, const std::string& title, const std::string& xl, const std::string& yl,
                  bool x_ticks) {
  std::string s;
  s += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                   (kLeft + kWidth - kRight) / 2, escape(title));
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"black\"/>\n", kLeft,
                   kHeight - kBottom, kWidth - kRight);
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", kLeft,
                   kTop, kHeight - kBottom);
  const double ys = tick_step(a.y0, a.y1, 5);
  for (double y = std::ceil(a.y0 / ys) * ys; y <= a.y1 + 1e-9 * ys; y += ys) {
    s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>\n", kLeft,
                     a.py(y), kWidth - kRight);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:g}</text>\n", kLeft - 6, a.py(y) + 4,
                     std::abs(y) < 1e-12 ? 0.0 : y);
  }
  if (x_ticks) {
    const double xs = tick_step(a.x0, a.x1, 6);
    for (double x = std::ceil(a.x0 / xs) * xs; x <= a.x1 + 1e-9 * xs; x += xs) {
      s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:g}</text>\n", a.px(x),
                       kHeight - kBottom + 18, std::abs(x) < 1e-12 ? 0.0 : x);
    }
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                   (kLeft + kWidth - kRight) / 2, kHeight - 10, escape(xl));
  s += fmt::format("<text x=\"16\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.1f})\">{1}</text>\n",
                   (kTop + kHeight - kBottom) / 2, escape(yl));
  return s;
}

std::string legend(std::span<const std::string> names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 10 + 18.0 * i;
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", kWidth - kRight + 12,
                     y - 10, color(i));
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", kWidth - kRight + 30, y, escape(names[i]));
  }
  return s;
}

std::string polyline(std::span<const Vec2> pts, const auto& map, const char* stroke, double width,
                     const char* dash = nullptr) {
  std::string s = "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\"" +
                  fmt::format(" stroke-width=\"{:.1f}\"", width);
  if (dash) s += fmt::format(" stroke-dasharray=\"{}\"", dash);
  s += " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 p = map(pts[i]);
    s += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", p.x, p.y);
  }
  return s + "\"/>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series) {
  if (series.empty()) throw ContractError("line chart needs at least one series");
  Axes a{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0.0, 0.0};
  for (const Series& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty()) throw ContractError("series '" + s.name + "' is malformed");
    for (double x : s.x) {
      a.x0 = std::min(a.x0, x);
      a.x1 = std::max(a.x1, x);
    }
    for (double y : s.y) a.y1 = std::max(a.y1, y);
  }
  if (a.x1 <= a.x0) a.x1 = a.x0 + 1.0;
  a.y1 = a.y1 > 0 ? a.y1 * 1.1 : 1.0;
  std::string out = header(kWidth, kHeight) + frame(a, title, x_label, y_label, true);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    std::vector<Vec2> pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) pts.push_back({s.x[k], s.y[k]});
    out += polyline(pts, [&](Vec2 p) { return Vec2{a.px(p.x), a.py(p.y)}; }, color(i), 2.0);
    for (const Vec2& p : pts) {
      out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", a.px(p.x), a.py(p.y), color(i));
    }
    names.push_back(s.name);
  }
  return out + legend(names) + "</svg>\n";
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          std::span<const std::string> value_names, std::span<const BarGroup> groups) {
  if (groups.empty()) throw ContractError("bar chart needs at least one group");
  Axes a{0.0, static_cast<double>(groups.size()), 0.0, 0.0};
  for (const BarGroup& g : groups) {
    if (g.values.size() != value_names.size()) throw ContractError("bar group '" + g.label + "' is malformed");
    for (double v : g.values) a.y1 = std::max(a.y1, v);
  }
  a.y1 = a.y1 > 0 ? a.y1 * 1.1 : 1.0;
  std::string out = header(kWidth, kHeight) + frame(a, title, "", y_label, false);
  const double slot = (a.px(1.0) - a.px(0.0)) * 0.8 / static_cast<double>(value_names.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double left = a.px(static_cast<double>(g)) + (a.px(1.0) - a.px(0.0)) * 0.1;
    for (std::size_t k = 0; k < value_names.size(); ++k) {
      const double v = groups[g].values[k];
      out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                         left + slot * k, a.py(v), slot * 0.9, a.py(0.0) - a.py(v), color(k));
      out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-size=\"10\">{:.3f}</text>\n",
                         left + slot * (k + 0.45), a.py(v) - 3, v);
    }
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                       a.px(static_cast<double>(g) + 0.5), kHeight - kBottom + 18, escape(groups[g].label));
  }
  return out + legend(value_names) + "</svg>\n";
}

std::string trajectory_svg(const TrajectoryPlot& plot) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  const auto grow = [&](std::span<const Vec2> pts) {
    for (const Vec2& p : pts) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  };
  grow(plot.history);
  grow(plot.ground_truth);
  grow(plot.prediction);
  grow(plot.raster_corners);
  for (const auto& n : plot.neighbors) grow(n);
  if (!(x1 >= x0)) throw ContractError("nothing to plot");
  const double size = 600.0, pad = 20.0;
  const double span = std::max({x1 - x0, y1 - y0, 1.0});
  const double scale = (size - 2 * pad) / span;
  const auto map = [&](Vec2 p) { return Vec2{pad + (p.x - x0) * scale, size - pad - (p.y - y0) * scale}; };

  std::string out = header(size, size + 30);
  if (!plot.raster_corners.empty()) {
    std::vector<Vec2> ring = plot.raster_corners;
    ring.push_back(ring.front());
    out += polyline(ring, map, "#999999", 1.0, "4 3");
  }
  for (const auto& n : plot.neighbors) out += polyline(n, map, "#bbbbbb", 1.5);
  out += polyline(plot.history, map, "#333333", 2.0);
  out += polyline(plot.ground_truth, map, "#2ca02c", 2.0);
  out += polyline(plot.prediction, map, "#d62728", 2.0, "6 3");
  out += fmt::format(
      "<text x=\"{0:.0f}\" y=\"{1:.0f}\">history (black), ground truth (green), prediction (red dashed), "
      "map extent (grey dashed); 1 m = {2:.2f} px</text>\n",
      pad, size + 18, scale);
  return out + "</svg>\n";
}

std::vector<Vec2> raster_extent(const Pose& pose) {
  const double h = kRasterSize * kMetersPerPixel / 2.0;
  const std::vector<Vec2> local{{-h, -h}, {h, -h}, {h, h}, {-h, h}};
  return to_world(local, pose);
}

}  // namespace recog
