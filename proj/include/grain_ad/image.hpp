#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grain_ad/error.hpp"

namespace grain_ad {

/// Working resolution every image is brought to before synthesis and
/// feature extraction.
inline constexpr int kWorkingSize = 256;

/// Row-major H×W grid of {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height) {
    detail::require(width >= 0 && height >= 0, "BinaryMask: negative dimensions");
    bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
  }

  static BinaryMask full(int width, int height) { return BinaryMask(width, height, 1); }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return bits_.size(); }

  std::uint8_t operator()(int row, int col) const noexcept {
    return bits_[static_cast<std::size_t>(row) * width_ + col];
  }
  void set(int row, int col, bool on) noexcept {
    bits_[static_cast<std::size_t>(row) * width_ + col] = on ? 1 : 0;
  }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::size_t area() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  bool same_shape(const BinaryMask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  detail::require(a.same_shape(b), "mask_and: dimension mismatch");
  BinaryMask out(a.width(), a.height());
  auto dst = out.bits();
  auto lhs = a.bits();
  auto rhs = b.bits();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = lhs[i] & rhs[i];
  return out;
}

/// H×W×C color image, interleaved, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f)
      : width_(width), height_(height), channels_(channels) {
    detail::require(width >= 1 && height >= 1, "Image: dimensions must be positive");
    detail::require(channels == 1 || channels == 3, "Image: channels must be 1 or 3");
    values_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  float& at(int row, int col, int ch) noexcept {
    return values_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  float at(int row, int col, int ch) const noexcept {
    return values_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  const std::optional<BinaryMask>& foreground() const noexcept { return foreground_; }
  void set_foreground(BinaryMask mask) {
    detail::require(mask.width() == width_ && mask.height() == height_,
                    "Image: foreground mask does not match image dimensions");
    foreground_ = std::move(mask);
  }
  void clear_foreground() noexcept { foreground_.reset(); }

  /// The stored foreground, or an all-one mask when none was provided.
  BinaryMask foreground_or_full() const {
    return foreground_ ? *foreground_ : BinaryMask::full(width_, height_);
  }

  bool same_shape(const Image& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> values_;
  std::optional<BinaryMask> foreground_;
};

/// Bilinear resampling with half-pixel centers and edge clamping. The
/// foreground mask, when present, is resampled nearest-neighbour.
inline BinaryMask resize_mask(const BinaryMask& src, int width, int height);

inline Image resize_image(const Image& src, int width, int height) {
  detail::require(width >= 1 && height >= 1, "resize_image: dimensions must be positive");
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height, src.channels());
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  const int c = src.channels();
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - y0;
    for (int q = 0; q < width; ++q) {
      const double fx = std::clamp((q + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch);
        const double bot = (1 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch);
        out.at(r, q, ch) = static_cast<float>(std::clamp((1 - wy) * top + wy * bot, 0.0, 1.0));
      }
    }
  }
  if (src.foreground()) out.set_foreground(resize_mask(*src.foreground(), width, height));
  return out;
}

inline BinaryMask resize_mask(const BinaryMask& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  BinaryMask out(width, height);
  for (int r = 0; r < height; ++r) {
    const int sr = std::min(static_cast<int>((r + 0.5) * src.height() / height), src.height() - 1);
    for (int q = 0; q < width; ++q) {
      const int sq = std::min(static_cast<int>((q + 0.5) * src.width() / width), src.width() - 1);
      out.set(r, q, src(sr, sq));
    }
  }
  return out;
}

/// Brings an image to the working resolution.
inline Image to_working_resolution(const Image& img) {
  return resize_image(img, kWorkingSize, kWorkingSize);
}

/// Replicates a single-channel image into three channels (no-op for RGB).
inline Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  Image out(img.width(), img.height(), 3);
  auto src = img.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
  if (img.foreground()) out.set_foreground(*img.foreground());
  return out;
}

/// Snaps every value to the nearest multiple of 1/255 so the image survives
/// an 8-bit PNG round trip unchanged.
inline void quantize_8bit(Image& img) {
  for (float& v : img.values()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

}  // namespace grain_ad
