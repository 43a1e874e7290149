#include "sdse/svg_plot.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sdse {

namespace {

std::string fixed2(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, 2);
  if (ec != std::errc()) return "0";
  std::string s(buf.data(), ptr);
  return s == "-0.00" ? "0.00" : s;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr std::array<const char*, 8> kTrajectoryColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                        "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::vector<std::pair<Vec, Vec>> contour_segments(const std::vector<double>& values, int nx, int ny, double level,
                                                  double x_min, double x_max, double y_min, double y_max) {
  if (nx < 2 || ny < 2 || values.size() != static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny))
    throw Error("contour grid must be at least 2×2 and match the value count");
  const double dx = (x_max - x_min) / (nx - 1);
  const double dy = (y_max - y_min) / (ny - 1);
  auto at = [&](int i, int j) { return values[static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i)]; };
  auto lerp = [&](double xa, double ya, double va, double xb, double yb, double vb) {
    const double f = (level - va) / (vb - va);
    return Vec{{xa + f * (xb - xa), ya + f * (yb - ya)}};
  };

  std::vector<std::pair<Vec, Vec>> segs;
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const double x0 = x_min + i * dx, x1 = x0 + dx;
      const double y0 = y_min + j * dy, y1 = y0 + dy;
      const double v00 = at(i, j), v10 = at(i + 1, j), v11 = at(i + 1, j + 1), v01 = at(i, j + 1);
      const int code = (v00 > level ? 1 : 0) | (v10 > level ? 2 : 0) | (v11 > level ? 4 : 0) | (v01 > level ? 8 : 0);
      if (code == 0 || code == 15) continue;
      // Edge crossings: bottom, right, top, left.
      const Vec b = lerp(x0, y0, v00, x1, y0, v10);
      const Vec r = lerp(x1, y0, v10, x1, y1, v11);
      const Vec t = lerp(x0, y1, v01, x1, y1, v11);
      const Vec l = lerp(x0, y0, v00, x0, y1, v01);
      const bool center_high = (v00 + v10 + v11 + v01) / 4.0 > level;
      switch (code) {
        case 1: case 14: segs.emplace_back(l, b); break;
        case 2: case 13: segs.emplace_back(b, r); break;
        case 3: case 12: segs.emplace_back(l, r); break;
        case 4: case 11: segs.emplace_back(r, t); break;
        case 6: case 9: segs.emplace_back(b, t); break;
        case 7: case 8: segs.emplace_back(l, t); break;
        case 5:
          if (center_high) { segs.emplace_back(l, t); segs.emplace_back(b, r); }
          else { segs.emplace_back(l, b); segs.emplace_back(r, t); }
          break;
        case 10:
          if (center_high) { segs.emplace_back(l, b); segs.emplace_back(r, t); }
          else { segs.emplace_back(l, t); segs.emplace_back(b, r); }
          break;
        default: break;
      }
    }
  }
  return segs;
}

std::string render_density_svg(const ConditionedMixture& mix, const std::vector<const Trajectory*>& trajectories,
                               const std::vector<PlotMarker>& markers, const PlotOptions& o,
                               const std::string& digest) {
  if (mix.dimension() != 2) throw Error("density plots need a 2D mixture");
  if (!(o.x_max > o.x_min && o.y_max > o.y_min)) throw Error("plot range is empty");
  if (o.grid < 2 || o.levels < 1 || o.width < 50) throw Error("invalid plot options");

  const int w = o.width;
  const int h = static_cast<int>(std::lround(w * (o.y_max - o.y_min) / (o.x_max - o.x_min)));
  auto px = [&](double x) { return fixed2((x - o.x_min) / (o.x_max - o.x_min) * w); };
  auto py = [&](double y) { return fixed2((o.y_max - y) / (o.y_max - o.y_min) * h); };

  std::vector<double> dens(static_cast<std::size_t>(o.grid) * static_cast<std::size_t>(o.grid));
  double peak = 0.0;
  for (int j = 0; j < o.grid; ++j)
    for (int i = 0; i < o.grid; ++i) {
      const Vec z{{o.x_min + (o.x_max - o.x_min) * i / (o.grid - 1), o.y_min + (o.y_max - o.y_min) * j / (o.grid - 1)}};
      const double d = mixture_density(mix, z);
      dens[static_cast<std::size_t>(j) * static_cast<std::size_t>(o.grid) + static_cast<std::size_t>(i)] = d;
      peak = std::max(peak, d);
    }

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  if (!digest.empty()) svg << "<!-- config_digest=" << digest << " -->\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (!o.title.empty())
    svg << "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(o.title) << "</text>\n";

  for (int k = 0; k < o.levels; ++k) {
    const double level = peak * std::pow(0.5, k + 1);
    const auto segs = contour_segments(dens, o.grid, o.grid, level, o.x_min, o.x_max, o.y_min, o.y_max);
    if (segs.empty()) continue;
    const int shade = 60 + 150 * k / std::max(1, o.levels - 1);
    svg << "<path fill=\"none\" stroke=\"rgb(" << shade << ',' << shade << ',' << shade
        << ")\" stroke-width=\"0.8\" d=\"";
    for (const auto& [a, b] : segs) svg << 'M' << px(a[0]) << ',' << py(a[1]) << 'L' << px(b[0]) << ',' << py(b[1]);
    svg << "\"/>\n";
  }

  for (std::size_t n = 0; n < trajectories.size(); ++n) {
    const Trajectory& tr = *trajectories[n];
    const char* color = kTrajectoryColors[n % kTrajectoryColors.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" stroke-opacity=\"0.8\" points=\"";
    if (tr.theta0.size() == 2) svg << px(tr.theta0[0]) << ',' << py(tr.theta0[1]);
    for (const auto& s : tr.states)
      if (s.theta.size() == 2 && s.theta.allFinite()) svg << ' ' << px(s.theta[0]) << ',' << py(s.theta[1]);
    svg << "\"><title>" << escape(tr.estimator) << " seed " << tr.seed << "</title></polyline>\n";
  }

  for (const auto& m : markers) {
    if (m.position.size() != 2) continue;
    svg << "<circle cx=\"" << px(m.position[0]) << "\" cy=\"" << py(m.position[1]) << "\" r=\"4\" fill=\"" << m.color
        << "\" stroke=\"#000000\" stroke-width=\"0.6\"><title>" << escape(m.label) << "</title></circle>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace sdse
