#pragma once

// Static SVG figures: density contours of a 2D mixture with trajectories
// drawn on top.

#include <filesystem>
#include <string>
#include <vector>

#include "sdse/score_oracle.hpp"
#include "sdse/trajectory.hpp"

namespace sdse {

struct PlotOptions {
  double x_min = -1.0, x_max = 4.0;
  double y_min = -1.0, y_max = 3.0;
  int grid = 120;     // density samples per axis
  int levels = 8;     // geometric contour levels below the peak
  int width = 500;    // pixels; height follows the aspect ratio
  std::string title;
};

struct PlotMarker {
  Vec position;
  std::string color;
  std::string label;
};

/// Marching squares over a row-major nx × ny sample grid (x fastest).
/// Returns unjoined line segments in data coordinates.
std::vector<std::pair<Vec, Vec>> contour_segments(const std::vector<double>& values, int nx, int ny, double level,
                                                  double x_min, double x_max, double y_min, double y_max);

std::string render_density_svg(const ConditionedMixture& mix, const std::vector<const Trajectory*>& trajectories,
                               const std::vector<PlotMarker>& markers, const PlotOptions& options,
                               const std::string& digest = {});

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace sdse
