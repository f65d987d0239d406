#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/image.hpp"

namespace grain_ad {
namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3 after normalization
  std::vector<std::uint8_t> bytes;
};

inline RawPng read_png_raw(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw DataError("cannot open image: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }
  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  if (out.channels == 2) out.channels = 1;  // gray+alpha whose alpha survived
  const auto rowbytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> buffer(rowbytes * out.height);
  rows.resize(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = buffer.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  const int stride = png_get_channels(png, info);
  png_destroy_read_struct(&png, &info, nullptr);

  if (stride == out.channels) {
    out.bytes = std::move(buffer);
  } else {
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    for (std::size_t px = 0; px < static_cast<std::size_t>(out.width) * out.height; ++px)
      for (int c = 0; c < out.channels; ++c) out.bytes[px * out.channels + c] = buffer[px * stride + c];
  }
  if (out.channels != 1 && out.channels != 3) throw DataError("unsupported PNG channel layout: " + path.string());
  return out;
}

inline void write_png_raw(const std::filesystem::path& path, int width, int height, int channels,
                          const std::vector<std::uint8_t>& bytes) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw DataError("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(r) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// Reads an 8-bit PNG. Palette, 16-bit and alpha inputs are normalized to
/// gray or RGB; values become byte/255.
inline Image read_png(const std::filesystem::path& path) {
  auto raw = detail::read_png_raw(path);
  Image img(raw.width, raw.height, raw.channels);
  auto dst = img.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(raw.bytes[i]) / 255.0f;
  return img;
}

/// Reads a single-channel mask; any nonzero sample counts as foreground.
/// RGB masks are accepted and collapse to "any channel nonzero".
inline BinaryMask read_mask_png(const std::filesystem::path& path) {
  auto raw = detail::read_png_raw(path);
  BinaryMask mask(raw.width, raw.height);
  auto bits = mask.bits();
  for (std::size_t px = 0; px < bits.size(); ++px) {
    bool on = false;
    for (int c = 0; c < raw.channels; ++c) on = on || raw.bytes[px * raw.channels + c] != 0;
    bits[px] = on ? 1 : 0;
  }
  return mask;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.values().size());
  auto src = img.values();
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f));
  detail::write_png_raw(path, img.width(), img.height(), img.channels(), bytes);
}

/// Masks are written as 0 / 255 gray.
inline void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  auto bits = mask.bits();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = bits[i] ? 255 : 0;
  detail::write_png_raw(path, mask.width(), mask.height(), 1, bytes);
}

}  // namespace grain_ad
