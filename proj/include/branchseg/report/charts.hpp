#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchseg/core/tensor.hpp"

namespace branchseg {

/// Grouped bar chart: one cluster of bars per group (model), one bar per
/// series (metric) inside each cluster. Values must lie in [0,1]; the y axis
/// is fixed to that range so charts from different runs stay comparable.
struct ChartSeries {
  std::string label;
  std::vector<double> values;  // one per group
};

struct BarChartSpec {
  std::string title;
  std::vector<std::string> groups;
  std::vector<ChartSeries> series;

  void validate() const {
    if (groups.empty()) throw std::invalid_argument("chart: no groups");
    if (series.empty()) throw std::invalid_argument("chart: no series");
    for (const auto& s : series) {
      if (s.values.size() != groups.size())
        throw std::invalid_argument("chart: series '" + s.label + "' does not cover every group");
      for (double v : s.values)
        if (!(v >= 0.0 && v <= 1.0))
          throw std::invalid_argument("chart: values must lie in [0,1]");
    }
  }
};

namespace detail {

// 5x7 pixel font, one byte per row, bit 4 = leftmost column. Uppercase
// letters, digits, and the punctuation used by chart labels.
struct Glyph {
  char ch;
  uint8_t rows[7];
};

inline const Glyph* font_table(size_t& count) {
  static const Glyph table[] = {
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
      {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
      {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
      {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
      {'D', {0x1e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1e}},
      {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
      {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
      {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
      {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
      {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
      {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
      {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
      {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
      {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
      {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
      {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
      {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
      {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
      {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
      {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
      {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
      {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
      {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
      {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
      {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
      {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
      {'-', {0x00, 0x00, 0x00, 0x0e, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
      {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
      {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
      {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
      {'?', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},
  };
  count = sizeof(table) / sizeof(table[0]);
  return table;
}

inline const uint8_t* glyph_rows(char c) {
  size_t count = 0;
  const Glyph* table = font_table(count);
  const char up = char(std::toupper(static_cast<unsigned char>(c)));
  for (size_t i = 0; i < count; ++i)
    if (table[i].ch == up) return table[i].rows;
  return glyph_rows('?');
}

struct Rgb {
  uint8_t r, g, b;
};

inline void put_pixel(Tensor<uint8_t>& img, int y, int x, Rgb c) {
  if (y < 0 || y >= img.dim(1) || x < 0 || x >= img.dim(2)) return;
  img.at(0, y, x) = c.r;
  img.at(1, y, x) = c.g;
  img.at(2, y, x) = c.b;
}

inline void fill_rect(Tensor<uint8_t>& img, int y0, int x0, int h, int w, Rgb c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) put_pixel(img, y, x, c);
}

/// Renders text at (x, y) = top-left corner, 6 px per character. Lowercase
/// input is drawn with the uppercase glyphs.
inline void draw_text(Tensor<uint8_t>& img, int y, int x, const std::string& text, Rgb c) {
  for (char ch : text) {
    const uint8_t* rows = glyph_rows(ch);
    for (int ry = 0; ry < 7; ++ry)
      for (int rx = 0; rx < 5; ++rx)
        if (rows[ry] >> (4 - rx) & 1) put_pixel(img, y + ry, x + rx, c);
    x += 6;
  }
}

inline int text_width(const std::string& text) { return int(text.size()) * 6; }

inline Rgb series_color(size_t index) {
  static const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127}};
  return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

/// Renders the chart into an RGB image [3,H,W]. The output is a pure
/// function of the spec, so identical specs yield identical pixels.
inline Tensor<uint8_t> render_bar_chart(const BarChartSpec& spec) {
  spec.validate();
  const detail::Rgb black{0, 0, 0}, grey{200, 200, 200}, white{255, 255, 255};

  const int bar_w = 14, bar_gap = 2, group_gap = 20;
  const int n_groups = int(spec.groups.size()), n_series = int(spec.series.size());
  const int group_w = n_series * (bar_w + bar_gap) - bar_gap;
  const int margin_l = 34, margin_r = 12, margin_top = 22;
  const int legend_h = 14, margin_bottom = 12 + legend_h;
  const int plot_w = n_groups * (group_w + group_gap) - group_gap;
  const int width = std::max(300, margin_l + plot_w + margin_r);
  const int plot_h = 180;
  const int height = margin_top + plot_h + margin_bottom;

  Tensor<uint8_t> img({3, height, width});
  detail::fill_rect(img, 0, 0, height, width, white);
  detail::draw_text(img, 7, margin_l, spec.title, black);

  // gridlines and y labels at 0, 0.25, ..., 1
  const int axis_y0 = margin_top, axis_y1 = margin_top + plot_h;
  for (int i = 0; i <= 4; ++i) {
    const double v = i * 0.25;
    const int y = axis_y1 - int(std::lround(v * plot_h));
    for (int x = margin_l; x < width - margin_r; ++x) detail::put_pixel(img, y, x, grey);
    char label[8];
    std::snprintf(label, sizeof(label), "%.2f", v);
    detail::draw_text(img, y - 3, 4, label, black);
  }
  for (int y = axis_y0; y <= axis_y1; ++y) detail::put_pixel(img, y, margin_l, black);
  for (int x = margin_l; x < width - margin_r; ++x) detail::put_pixel(img, axis_y1, x, black);

  // bars and group labels
  int gx = margin_l + group_gap / 2;
  for (int g = 0; g < n_groups; ++g) {
    for (int s = 0; s < n_series; ++s) {
      const double v = spec.series[size_t(s)].values[size_t(g)];
      const int h = int(std::lround(v * plot_h));
      detail::fill_rect(img, axis_y1 - h, gx + s * (bar_w + bar_gap), h, bar_w,
                        detail::series_color(size_t(s)));
    }
    const std::string& label = spec.groups[size_t(g)];
    const int lx = gx + group_w / 2 - detail::text_width(label) / 2;
    detail::draw_text(img, axis_y1 + 4, lx, label, black);
    gx += group_w + group_gap;
  }

  // legend: one swatch + label per series
  int lx = margin_l;
  const int ly = height - legend_h + 2;
  for (int s = 0; s < n_series; ++s) {
    detail::fill_rect(img, ly + 1, lx, 6, 6, detail::series_color(size_t(s)));
    detail::draw_text(img, ly, lx + 8, spec.series[size_t(s)].label, black);
    lx += 8 + detail::text_width(spec.series[size_t(s)].label) + 12;
  }
  return img;
}

}  // namespace branchseg
