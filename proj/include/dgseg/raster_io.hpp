#pragma once

// Raster file I/O.
//
//  * PNG (8-bit gray or RGB) for images and label masks, via libpng.
//    Doubles in [0,1] map to 0..255 on save; load maps back to v/255.
//  * "DBR1" for exact float64 rasters (pseudo-depth, predictions):
//    magic "DBR1", then u32 height, width, channels, then height*width*
//    channels little-endian IEEE float64 values, row-major interleaved.
//    Written only on little-endian hosts (checked at compile time).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"

static_assert(std::endian::native == std::endian::little,
              "raster_io assumes a little-endian host");

namespace dgseg {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ValidationError("cannot open file: " + path);
  return f;
}

} // namespace detail

inline void save_png(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3)
    throw ValidationError("save_png: raster must have 1 or 3 channels");
  if (r.height <= 0 || r.width <= 0)
    throw ValidationError("save_png: empty raster");

  auto f = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("save_png: libpng error writing " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, r.width, r.height, 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(r.width) * r.channels);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) {
        double v = r.at(y, x, c);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[static_cast<std::size_t>(x) * r.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Loads an 8-bit PNG as a 1- or 3-channel raster with values v/255.
/// Palette and low-bit-depth images are expanded; 16-bit is reduced;
/// an alpha channel is stripped.
inline Raster load_png(const std::string& path) {
  auto f = detail::open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw ValidationError("load_png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("load_png: libpng error reading " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("load_png: unsupported channel count in " + path);
  }

  Raster r(h, w, ch);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * ch);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        r.at(y, x, c) = row[static_cast<std::size_t>(x) * ch + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

inline void save_raster64(const std::string& path, const Raster& r) {
  if (r.height <= 0 || r.width <= 0)
    throw ValidationError("save_raster64: empty raster");
  auto f = detail::open_file(path, "wb");
  const char magic[4] = {'D', 'B', 'R', '1'};
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(r.height),
                           static_cast<std::uint32_t>(r.width),
                           static_cast<std::uint32_t>(r.channels)};
  if (std::fwrite(magic, 1, 4, f.get()) != 4 ||
      std::fwrite(dims, sizeof(std::uint32_t), 3, f.get()) != 3 ||
      std::fwrite(r.data.data(), sizeof(double), r.data.size(), f.get()) != r.data.size())
    throw ValidationError("save_raster64: short write to " + path);
}

inline Raster load_raster64(const std::string& path) {
  auto f = detail::open_file(path, "rb");
  char magic[4];
  std::uint32_t dims[3];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "DBR1", 4) != 0)
    throw ValidationError("load_raster64: bad magic in " + path);
  if (std::fread(dims, sizeof(std::uint32_t), 3, f.get()) != 3)
    throw ValidationError("load_raster64: truncated header in " + path);
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 ||
      dims[0] > (1u << 20) || dims[1] > (1u << 20) || dims[2] > 64)
    throw ValidationError("load_raster64: implausible dimensions in " + path);
  Raster r(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]));
  if (std::fread(r.data.data(), sizeof(double), r.data.size(), f.get()) != r.data.size())
    throw ValidationError("load_raster64: truncated data in " + path);
  long extra = 0;
  char probe;
  if (std::fread(&probe, 1, 1, f.get()) == 1) extra = 1;
  if (extra) throw ValidationError("load_raster64: trailing bytes in " + path);
  if (!r.all_finite())
    throw ValidationError("load_raster64: non-finite values in " + path);
  return r;
}

} // namespace dgseg
