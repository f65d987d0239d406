#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/image.hpp"
#include "grain_ad/noise.hpp"
#include "grain_ad/png_io.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

/// Opacity blend of a source image into a normal image under a binary mask:
///   out = (1-M)*x + beta*(M*a) + (1-beta)*(M*x)
/// Unmasked pixels are copied from i_x exactly. Masked pixels are clamped to
/// the closed interval spanned by x and a so rounding cannot leave it.
inline Image blend_anomaly(const Image& i_x, const Image& i_a, const BinaryMask& mask, double beta) {
  detail::require(i_x.same_shape(i_a), "blend_anomaly: image dimension mismatch");
  detail::require(mask.width() == i_x.width() && mask.height() == i_x.height(),
                  "blend_anomaly: mask dimension mismatch");
  detail::require(beta >= 0.0 && beta <= 1.0, "blend_anomaly: beta must lie in [0,1]");

  Image out = i_x;
  const double keep = 1.0 - beta;
  const int channels = i_x.channels();
  auto bits = mask.bits();
  auto x = i_x.values();
  auto a = i_a.values();
  auto dst = out.values();
  for (std::size_t px = 0; px < bits.size(); ++px) {
    if (!bits[px]) continue;
    for (int c = 0; c < channels; ++c) {
      const std::size_t k = px * channels + c;
      const auto v = static_cast<float>(beta * a[k] + keep * x[k]);
      dst[k] = std::clamp(v, std::min(x[k], a[k]), std::max(x[k], a[k]));
    }
  }
  return out;
}

struct BetaRange {
  double lo = 0.15;
  double hi = 1.0;
};

/// Uniform opacity draw from `range` (default [0.15, 1]).
inline double sample_beta(Rng& rng, BetaRange range = {}) {
  detail::require(range.lo >= 0.0 && range.lo <= range.hi && range.hi <= 1.0, "sample_beta: invalid beta range");
  return std::min(range.hi, range.lo + (range.hi - range.lo) * rng.uniform());
}

/// Where the arbitrary source images I_a come from: a directory of PNGs or a
/// procedural colored-noise texture generator.
class SourcePool {
 public:
  static SourcePool procedural() { return SourcePool{}; }

  /// Loads every *.png under `dir` (non-recursive, sorted by name).
  static SourcePool directory(const std::filesystem::path& dir) {
    SourcePool pool;
    pool.procedural_ = false;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw DataError("source pool is not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("source pool contains no PNG images: " + dir.string());
    for (const auto& f : files) pool.images_.push_back(std::make_shared<const Image>(read_png(f)));
    return pool;
  }

  bool is_procedural() const noexcept { return procedural_; }
  std::size_t size() const noexcept { return images_.size(); }

  /// One source image at (width, height, channels).
  Image sample(int width, int height, int channels, Rng& rng) const {
    if (procedural_) return procedural_texture(width, height, channels, rng.next_u64());
    const auto& src = *images_[rng.below(images_.size())];
    Image img = resize_image(src, width, height);
    img.clear_foreground();
    if (img.channels() == channels) return img;
    if (channels == 3) return to_rgb(img);
    Image gray(width, height, 1);
    for (std::size_t px = 0; px < gray.pixel_count(); ++px) {
      auto v = img.values();
      gray.values()[px] = (v[3 * px] + v[3 * px + 1] + v[3 * px + 2]) / 3.0f;
    }
    return gray;
  }

  /// Seeded multi-scale colored noise: a coarse field blends between two
  /// random colors, a fine per-channel field adds grain.
  static Image procedural_texture(int width, int height, int channels, std::uint64_t seed) {
    Rng rng(seed);
    float base[3], accent[3];
    for (int c = 0; c < 3; ++c) base[c] = static_cast<float>(rng.uniform(0.05, 0.95));
    for (int c = 0; c < 3; ++c) accent[c] = static_cast<float>(rng.uniform(0.05, 0.95));
    static constexpr int kCoarsePeriods[] = {16, 32, 64};
    const int coarse_period = kCoarsePeriods[rng.below(3)];
    const double fine_amp = rng.uniform(0.05, 0.2);
    const auto coarse = perlin_field(width, height, coarse_period, rng.next_u64(), {3, 0.5});
    Image img(width, height, channels);
    for (int c = 0; c < channels; ++c) {
      const auto fine = perlin_field(width, height, 4, rng.next_u64());
      for (std::size_t px = 0; px < img.pixel_count(); ++px) {
        const double w = 0.5 + 0.5 * coarse.values[px];
        const int cc = channels == 1 ? 0 : c;
        const double v = (1.0 - w) * base[cc] + w * accent[cc] + fine_amp * fine.values[px];
        img.values()[px * channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    return img;
  }

 private:
  SourcePool() = default;
  bool procedural_ = true;
  std::vector<std::shared_ptr<const Image>> images_;
};

inline Image sample_source_image(const SourcePool& pool, int width, int height, int channels, Rng& rng) {
  return pool.sample(width, height, channels, rng);
}

struct SynthConfig {
  int grid_period = 16;
  NoiseOctaves octaves{};
  double threshold = 0.4;
  double max_area_ratio = 0.2;  // r
  BetaRange beta{};
  std::shared_ptr<const SourcePool> source = std::make_shared<const SourcePool>(SourcePool::procedural());
};

struct SynthesisResult {
  Image image;        // I_n
  BinaryMask mask;    // M'_b
  Image source;       // I_a
  double beta = 0.0;
  bool degenerate = false;  // empty M'_b: image == I_x, caller should resample
};

/// Image-level anomaly simulation: noise field -> thresholded mask ->
/// foreground/area constraint -> opacity draw -> blend.
/// Draw order from `rng`: field seed, beta, source image.
inline SynthesisResult synthesize_anomaly(const Image& i_x, const SynthConfig& cfg, Rng& rng) {
  const std::uint64_t field_seed = rng.next_u64();
  const double beta = sample_beta(rng, cfg.beta);
  Image source = sample_source_image(*cfg.source, i_x.width(), i_x.height(), i_x.channels(), rng);

  const auto field = perlin_field(i_x.width(), i_x.height(), cfg.grid_period, field_seed, cfg.octaves);
  const auto raw = binary_mask_from_field(field, cfg.threshold);
  auto mask = constrain_mask(raw, MaskConstraint{cfg.max_area_ratio, i_x.foreground_or_full()}, field);

  SynthesisResult result;
  result.beta = beta;
  result.source = std::move(source);
  if (mask.area() == 0) {
    result.image = i_x;
    result.mask = std::move(mask);
    result.degenerate = true;
    return result;
  }
  result.image = blend_anomaly(i_x, result.source, mask, beta);
  result.mask = std::move(mask);
  return result;
}

}  // namespace grain_ad
