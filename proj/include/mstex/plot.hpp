#pragma once

// Minimal line-chart rasterizer so harness figures exist without a plotting
// stack. Numbers live in the CSV next to each figure; the PNG is the
// qualitative view. Series colors follow a fixed palette; the caller emits a
// legend sidecar mapping names to colors.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mstex/image.hpp"

namespace mstex {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

inline constexpr std::array<std::array<double, 3>, 8> kPlotPalette = {{
    {0.122, 0.467, 0.706},  // blue
    {1.000, 0.498, 0.055},  // orange
    {0.173, 0.627, 0.173},  // green
    {0.839, 0.153, 0.157},  // red
    {0.580, 0.404, 0.741},  // purple
    {0.549, 0.337, 0.294},  // brown
    {0.890, 0.467, 0.761},  // pink
    {0.498, 0.498, 0.498},  // gray
}};

namespace detail {

inline void put_pixel(PaletteImage& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

inline void draw_line(PaletteImage& img, int x0, int y0, int x1, int y1,
                      const std::array<double, 3>& c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

inline void draw_marker(PaletteImage& img, int x, int y, const std::array<double, 3>& c) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) put_pixel(img, x + dx, y + dy, c);
}

}  // namespace detail

inline PaletteImage render_line_chart(const std::vector<PlotSeries>& series,
                                      int width = 800, int height = 500) {
  PaletteImage img = PaletteImage::zeros(height, width);
  for (double& v : img.data) v = 1.0;  // white background

  const int margin = 40;
  const int x0 = margin, x1 = width - margin / 2;
  const int y0 = margin / 2, y1 = height - margin;

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& s : series)
    for (const auto& [px, py] : s.points) {
      min_x = std::min(min_x, px);
      max_x = std::max(max_x, px);
      min_y = std::min(min_y, py);
      max_y = std::max(max_y, py);
    }
  if (!(min_x < max_x)) {
    min_x -= 0.5;
    max_x += 0.5;
  }
  if (!(min_y < max_y)) {
    min_y -= 0.5;
    max_y += 0.5;
  }
  const double pad_y = 0.05 * (max_y - min_y);
  min_y -= pad_y;
  max_y += pad_y;

  const auto to_px = [&](double vx) {
    return x0 + int(std::lround((vx - min_x) / (max_x - min_x) * (x1 - x0)));
  };
  const auto to_py = [&](double vy) {
    return y1 - int(std::lround((vy - min_y) / (max_y - min_y) * (y1 - y0)));
  };

  const std::array<double, 3> black = {0.0, 0.0, 0.0};
  const std::array<double, 3> grid = {0.85, 0.85, 0.85};
  for (int tick = 0; tick <= 4; ++tick) {
    const int gy = y0 + tick * (y1 - y0) / 4;
    detail::draw_line(img, x0, gy, x1, gy, grid);
    const int gx = x0 + tick * (x1 - x0) / 4;
    detail::draw_line(img, gx, y0, gx, y1, grid);
  }
  detail::draw_line(img, x0, y1, x1, y1, black);
  detail::draw_line(img, x0, y0, x0, y1, black);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& color = kPlotPalette[si % kPlotPalette.size()];
    const auto& pts = series[si].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int px = to_px(pts[i].first), py = to_py(pts[i].second);
      detail::draw_marker(img, px, py, color);
      if (i > 0)
        detail::draw_line(img, to_px(pts[i - 1].first), to_py(pts[i - 1].second), px, py,
                          color);
    }
  }
  return img;
}

// Color legend: one "name -> r,g,b" line per series, same palette order.
inline std::string chart_legend(const std::vector<PlotSeries>& series) {
  std::string out;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& c = kPlotPalette[si % kPlotPalette.size()];
    out += series[si].name + " -> rgb(" + std::to_string(int(c[0] * 255)) + "," +
           std::to_string(int(c[1] * 255)) + "," + std::to_string(int(c[2] * 255)) + ")\n";
  }
  return out;
}

}  // namespace mstex
