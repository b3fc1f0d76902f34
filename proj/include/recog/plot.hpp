#pragma once

#include <span>
#include <string>
#include <vector>

#include "recog/geometry.hpp"

namespace recog {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series);

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per value name
};

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          std::span<const std::string> value_names, std::span<const BarGroup> groups);

struct TrajectoryPlot {
  std::vector<Vec2> history;
  std::vector<Vec2> ground_truth;
  std::vector<Vec2> prediction;
  std::vector<std::vector<Vec2>> neighbors;
  std::vector<Vec2> raster_corners;
};

/// World-frame overlay with equal axis scaling.
std::string trajectory_svg(const TrajectoryPlot& plot);

/// World-frame corners of the local map raster of a target pose.
std::vector<Vec2> raster_extent(const Pose& pose);

}  // namespace recog
