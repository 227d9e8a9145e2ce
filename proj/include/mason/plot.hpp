#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mason/png_io.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// Minimal raster plotting: enough to render histogram curves with numeric
/// axis labels into a PNG. Not a charting library.
class Plot {
 public:
  Plot(std::size_t width = 640, std::size_t height = 420)
      : w_(width), h_(height), img_({3, height, width}) {
    img_.fill(255);
  }

  struct Series {
    std::vector<double> x, y;
    std::uint8_t r, g, b;
  };

  void add_series(Series s) { series_.push_back(std::move(s)); }

  void render(const std::filesystem::path& path) {
    double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
    bool first = true;
    for (const auto& s : series_)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (first) {
          x_lo = x_hi = s.x[i];
          y_lo = y_hi = s.y[i];
          first = false;
        }
        x_lo = std::min(x_lo, s.x[i]);
        x_hi = std::max(x_hi, s.x[i]);
        y_lo = std::min(y_lo, s.y[i]);
        y_hi = std::max(y_hi, s.y[i]);
      }
    if (!(x_hi > x_lo)) x_hi = x_lo + 1;
    if (!(y_hi > y_lo)) y_hi = y_lo + 1;
    y_lo = std::min(y_lo, 0.0);

    const std::size_t mx = 46, my = 24;  // margins
    auto to_px = [&](double x, double y, std::size_t& px, std::size_t& py) {
      const double fx = (x - x_lo) / (x_hi - x_lo);
      const double fy = (y - y_lo) / (y_hi - y_lo);
      px = mx + std::size_t(fx * double(w_ - mx - 8));
      py = (h_ - my) - std::size_t(fy * double(h_ - my - 8));
      px = std::min(px, w_ - 1);
      py = std::min(py, h_ - 1);
    };

    // axes
    for (std::size_t x = mx; x < w_ - 4; ++x) put(x, h_ - my, 0, 0, 0);
    for (std::size_t y = 4; y <= h_ - my; ++y) put(mx, y, 0, 0, 0);

    for (const auto& s : series_) {
      std::size_t px = 0, py = 0, qx = 0, qy = 0;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        to_px(s.x[i], s.y[i], qx, qy);
        if (i) line(px, py, qx, qy, s.r, s.g, s.b);
        px = qx;
        py = qy;
      }
    }

    draw_text(2, h_ - my - 4, format(y_hi));
    draw_text(2, h_ - my + 2 - 8, format(y_lo));
    draw_text(mx, h_ - my + 6, format(x_lo));
    draw_text(w_ - 60, h_ - my + 6, format(x_hi));
    write_png(path, img_);
  }

 private:
  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
  }

  void put(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g,
           std::uint8_t b) {
    if (x >= w_ || y >= h_) return;
    img_.at(0, y, x) = r;
    img_.at(1, y, x) = g;
    img_.at(2, y, x) = b;
  }

  void line(std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1,
            std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int dx = std::abs(int(x1) - int(x0)), dy = -std::abs(int(y1) - int(y0));
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, x = int(x0), y = int(y0);
    while (true) {
      put(std::size_t(x), std::size_t(y), r, g, b);
      if (x == int(x1) && y == int(y1)) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x += sx; }
      if (e2 <= dx) { err += dx; y += sy; }
    }
  }

  // 5x7 bitmap glyphs for numeric labels
  void draw_text(std::size_t x, std::size_t y, const std::string& text) {
    for (char ch : text) {
      draw_glyph(x, y, ch);
      x += 6;
    }
  }

  void draw_glyph(std::size_t x, std::size_t y, char ch) {
    static const struct { char c; const char* rows[7]; } glyphs[] = {
        {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
        {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
        {'2', {"01110", "10001", "00001", "00110", "01000", "10000", "11111"}},
        {'3', {"01110", "10001", "00001", "00110", "00001", "10001", "01110"}},
        {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
        {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
        {'6', {"01110", "10000", "11110", "10001", "10001", "10001", "01110"}},
        {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
        {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
        {'9', {"01110", "10001", "10001", "01111", "00001", "00001", "01110"}},
        {'-', {"00000", "00000", "00000", "01110", "00000", "00000", "00000"}},
        {'+', {"00000", "00100", "00100", "11111", "00100", "00100", "00000"}},
        {'.', {"00000", "00000", "00000", "00000", "00000", "01100", "01100"}},
        {'e', {"00000", "00000", "01110", "10001", "11111", "10000", "01110"}},
    };
    for (const auto& g : glyphs)
      if (g.c == ch) {
        for (int r = 0; r < 7; ++r)
          for (int c = 0; c < 5; ++c)
            if (g.rows[r][c] == '1')
              put(x + std::size_t(c), y + std::size_t(r), 30, 30, 30);
        return;
      }
  }

  std::size_t w_, h_;
  Tensor<std::uint8_t> img_;
  std::vector<Series> series_;
};

}  // namespace mason
