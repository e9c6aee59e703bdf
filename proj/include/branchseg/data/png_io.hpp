#pragma once

// Thin libpng wrappers for the three on-disk plane formats:
//   * rgb:   8-bit, three channels, stored in memory as [3,H,W]
//   * masks: 8-bit grayscale, 0 background / 255 class, loaded as {0,1}
//   * depth: 16-bit grayscale millimeters, 0 = no reading
// All failures (missing file, wrong color type, truncation) raise DataError.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "branchseg/core/errors.hpp"
#include "branchseg/core/tensor.hpp"

namespace branchseg {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
  FilePtr file;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngReader(const std::string& path) {
    file.reset(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open PNG for reading: " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw DataError("libpng allocation failed reading " + path);
    }
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
};

struct PngWriter {
  FilePtr file;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngWriter(const std::string& path) {
    file.reset(std::fopen(path.c_str(), "wb"));
    if (!file) throw DataError("cannot open PNG for writing: " + path);
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw DataError("libpng allocation failed writing " + path);
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;
};

// Reads any PNG into 8- or 16-bit rows of the requested color type.
inline std::vector<std::vector<png_byte>> read_rows(const std::string& path, int want_color,
                                                    int want_depth, int* out_h, int* out_w) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG: " + path);
  png_init_io(r.png, r.file.get());
  png_read_info(r.png, r.info);

  const int w = int(png_get_image_width(r.png, r.info));
  const int h = int(png_get_image_height(r.png, r.info));
  const int color = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (color != want_color || depth != want_depth) {
    throw DataError("unexpected PNG format in " + path + ": color " + std::to_string(color) +
                    " depth " + std::to_string(depth));
  }
  if (want_depth == 16) png_set_swap(r.png);  // file is big-endian; we want host LE
  png_read_update_info(r.png, r.info);

  const size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h), std::vector<png_byte>(rowbytes));
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) ptrs[size_t(y)] = rows[size_t(y)].data();
  png_read_image(r.png, ptrs.data());
  png_read_end(r.png, nullptr);
  *out_h = h;
  *out_w = w;
  return rows;
}

inline void write_rows(const std::string& path, int h, int w, int color, int depth,
                       std::vector<png_bytep>& ptrs) {
  PngWriter wr(path);
  if (setjmp(png_jmpbuf(wr.png))) throw DataError("failed writing PNG: " + path);
  png_init_io(wr.png, wr.file.get());
  png_set_IHDR(wr.png, wr.info, png_uint_32(w), png_uint_32(h), depth, color,
         PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  if (depth == 16) png_set_swap(wr.png);
  png_write_image(wr.png, ptrs.data());
  png_write_end(wr.png, nullptr);
}

}  // namespace detail

/// [3,H,W] planar uint8 image.
inline Tensor<uint8_t> read_png_rgb8(const std::string& path) {
  int h = 0, w = 0;
  const auto rows = detail::read_rows(path, PNG_COLOR_TYPE_RGB, 8, &h, &w);
  Tensor<uint8_t> img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = rows[size_t(y)][size_t(x) * 3 + size_t(c)];
  return img;
}

inline void write_png_rgb8(const std::string& path, const Tensor<uint8_t>& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_png_rgb8: image must be [3,H,W]");
  const int h = img.dim(1), w = img.dim(2);
  std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h), std::vector<png_byte>(size_t(w) * 3));
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rows[size_t(y)][size_t(x) * 3 + size_t(c)] = img.at(c, y, x);
    ptrs[size_t(y)] = rows[size_t(y)].data();
  }
  detail::write_rows(path, h, w, PNG_COLOR_TYPE_RGB, 8, ptrs);
}

/// Masks are stored as 0/255 grayscale; any nonzero byte loads as class 1.
inline Mask read_png_mask(const std::string& path) {
  int h = 0, w = 0;
  const auto rows = detail::read_rows(path, PNG_COLOR_TYPE_GRAY, 8, &h, &w);
  Mask m({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = rows[size_t(y)][size_t(x)] ? 1 : 0;
  return m;
}

inline void write_png_mask(const std::string& path, const Mask& m) {
  if (m.ndim() != 2) throw std::invalid_argument("write_png_mask: mask must be [H,W]");
  const int h = m.dim(0), w = m.dim(1);
  std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h), std::vector<png_byte>(size_t(w)));
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) rows[size_t(y)][size_t(x)] = m.at(y, x) ? 255 : 0;
    ptrs[size_t(y)] = rows[size_t(y)].data();
  }
  detail::write_rows(path, h, w, PNG_COLOR_TYPE_GRAY, 8, ptrs);
}

/// Depth in millimeters, 0 = no reading.
inline Tensor<uint16_t> read_png_depth16(const std::string& path) {
  int h = 0, w = 0;
  const auto rows = detail::read_rows(path, PNG_COLOR_TYPE_GRAY, 16, &h, &w);
  Tensor<uint16_t> d({h, w});
  for (int y = 0; y < h; ++y) {
    const png_byte* row = rows[size_t(y)].data();
    for (int x = 0; x < w; ++x) {
      uint16_t v;
      std::memcpy(&v, row + size_t(x) * 2, 2);
      d.at(y, x) = v;
    }
  }
  return d;
}

inline void write_png_depth16(const std::string& path, const Tensor<uint16_t>& d) {
  if (d.ndim() != 2) throw std::invalid_argument("write_png_depth16: depth must be [H,W]");
  const int h = d.dim(0), w = d.dim(1);
  std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h), std::vector<png_byte>(size_t(w) * 2));
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint16_t v = d.at(y, x);
      std::memcpy(rows[size_t(y)].data() + size_t(x) * 2, &v, 2);
    }
    ptrs[size_t(y)] = rows[size_t(y)].data();
  }
  detail::write_rows(path, h, w, PNG_COLOR_TYPE_GRAY, 16, ptrs);
}

}  // namespace branchseg
