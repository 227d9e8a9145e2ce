#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "mason/common.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// Read an 8-bit PNG as (C, H, W) bytes. Palette/16-bit inputs are expanded
/// to 8-bit; alpha is dropped.
inline Tensor<std::uint8_t> read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(
      std::fopen(path.string().c_str(), "rb"), &std::fclose);
  require(fp != nullptr, ErrorClass::file_not_found, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorClass::io_failure, "png decode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t h = png_get_image_height(png, info);
  const std::size_t w = png_get_image_width(png, info);
  const std::size_t c = png_get_channels(png, info);
  std::vector<std::uint8_t> raw(h * w * c);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<std::uint8_t> out({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = raw[(y * w + x) * c + ch];
  return out;
}

/// Write (C, H, W) bytes as an 8-bit PNG; C must be 1 (gray) or 3 (RGB).
inline void write_png(const std::filesystem::path& path,
                      const Tensor<std::uint8_t>& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  require(c == 1 || c == 3, ErrorClass::invalid_argument,
          "write_png: channel count must be 1 or 3");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(
      std::fopen(path.string().c_str(), "wb"), &std::fclose);
  require(fp != nullptr, ErrorClass::io_failure, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise(ErrorClass::io_failure, "png encode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(w * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        row[x * c + ch] = img.at(ch, y, x);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mason
