#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "grain_ad/error.hpp"

namespace grain_ad {

/// h×w×c grid of feature vectors, channel-interleaved (position-major), so
/// the data is directly a (h*w) × c row-major matrix.
template <class T>
class FeatureMap {
 public:
  using value_type = T;

  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, int stage = 0, T fill = T{0})
      : height_(height), width_(width), channels_(channels), stage_(stage) {
    detail::require(height >= 0 && width >= 0 && channels >= 0, "FeatureMap: negative dimensions");
    values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  int stage() const noexcept { return stage_; }
  void set_stage(int s) noexcept { stage_ = s; }
  int positions() const noexcept { return height_ * width_; }

  T& at(int row, int col, int ch) noexcept {
    return values_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  T at(int row, int col, int ch) const noexcept {
    return values_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  /// Feature vector at a flat position index.
  std::span<const T> vec(int position) const noexcept {
    return std::span<const T>(values_).subspan(static_cast<std::size_t>(position) * channels_, channels_);
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  bool same_shape(const FeatureMap& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  bool all_finite() const noexcept {
    for (T v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  int stage_ = 0;
  std::vector<T> values_;
};

}  // namespace grain_ad
