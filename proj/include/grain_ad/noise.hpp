#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/image.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

/// Per-pixel lattice gradient noise in [-1,1], row-major.
struct NoiseField {
  int width = 0;
  int height = 0;
  int grid_period = 1;
  std::uint64_t seed = 0;
  std::vector<double> values;

  double operator()(int row, int col) const noexcept {
    return values[static_cast<std::size_t>(row) * width + col];
  }
};

struct NoiseOctaves {
  int count = 1;
  double persistence = 0.5;
};

namespace detail {

inline constexpr double kDiag = std::numbers::sqrt2 / 2.0;

// Eight unit gradient directions, 45 degrees apart.
inline constexpr double kGradients[8][2] = {
    {1.0, 0.0}, {kDiag, kDiag}, {0.0, 1.0}, {-kDiag, kDiag},
    {-1.0, 0.0}, {-kDiag, -kDiag}, {0.0, -1.0}, {kDiag, -kDiag},
};

inline const double* lattice_gradient(std::int64_t ix, std::int64_t iy, std::uint64_t seed) noexcept {
  const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x8CB92BA72F3D8DD7ULL ^
                                             static_cast<std::uint64_t>(iy)));
  return kGradients[h >> 61];
}

inline double fade(double t) noexcept { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// Single-octave classic gradient noise, raw range [-sqrt(1/2), sqrt(1/2)].
inline void accumulate_octave(std::span<double> out, int width, int height, int period,
                              std::uint64_t seed, double amplitude) {
  const double inv = 1.0 / period;
  for (int row = 0; row < height; ++row) {
    const std::int64_t iy = row / period;
    const double ty = (row - iy * period) * inv;
    const double fy = fade(ty);
    for (int col = 0; col < width; ++col) {
      const std::int64_t ix = col / period;
      const double tx = (col - ix * period) * inv;
      const double* g00 = lattice_gradient(ix, iy, seed);
      const double* g10 = lattice_gradient(ix + 1, iy, seed);
      const double* g01 = lattice_gradient(ix, iy + 1, seed);
      const double* g11 = lattice_gradient(ix + 1, iy + 1, seed);
      const double n00 = g00[0] * tx + g00[1] * ty;
      const double n10 = g10[0] * (tx - 1.0) + g10[1] * ty;
      const double n01 = g01[0] * tx + g01[1] * (ty - 1.0);
      const double n11 = g11[0] * (tx - 1.0) + g11[1] * (ty - 1.0);
      const double fx = fade(tx);
      const double top = n00 + fx * (n10 - n00);
      const double bottom = n01 + fx * (n11 - n01);
      out[static_cast<std::size_t>(row) * width + col] += amplitude * (top + fy * (bottom - top));
    }
  }
}

}  // namespace detail

/// Classic 2-D lattice gradient noise scaled to [-1,1].
///
/// Octave k uses period grid_period / 2^k (at least 1) and amplitude
/// persistence^k; the sum is divided by the total amplitude so the range is
/// preserved. With a single octave the field is exactly zero at every pixel
/// whose coordinates are multiples of grid_period.
inline NoiseField perlin_field(int width, int height, int grid_period, std::uint64_t seed,
                               NoiseOctaves octaves = {}) {
  detail::require(width >= 1 && height >= 1, "perlin_field: dimensions must be positive");
  detail::require(grid_period >= 1, "perlin_field: grid_period must be positive");
  detail::require(octaves.count >= 1, "perlin_field: octave count must be positive");
  detail::require(octaves.persistence > 0.0, "perlin_field: persistence must be positive");

  NoiseField field{width, height, grid_period, seed,
                   std::vector<double>(static_cast<std::size_t>(width) * height, 0.0)};
  double amplitude = 1.0;
  double total = 0.0;
  int period = grid_period;
  for (int k = 0; k < octaves.count; ++k) {
    const std::uint64_t octave_seed = k == 0 ? mix64(seed) : derive_seed(seed, static_cast<std::uint64_t>(k));
    detail::accumulate_octave(field.values, width, height, period, octave_seed, amplitude);
    total += amplitude;
    amplitude *= octaves.persistence;
    period = std::max(1, period / 2);
  }
  const double scale = std::numbers::sqrt2 / total;
  for (double& v : field.values) v = std::clamp(v * scale, -1.0, 1.0);
  return field;
}

/// bit = field > threshold.
inline BinaryMask binary_mask_from_field(const NoiseField& field, double threshold) {
  detail::require(threshold > -1.0 && threshold < 1.0, "binary_mask_from_field: threshold must lie in (-1,1)");
  BinaryMask mask(field.width, field.height);
  auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = field.values[i] > threshold ? 1 : 0;
  return mask;
}

struct MaskConstraint {
  double max_area_ratio = 0.2;
  BinaryMask foreground;
};

inline constexpr int kConstraintBisectionSteps = 20;

/// AND of the noise mask with the foreground, shrunk until its area is at
/// most max_area_ratio * area(foreground).
///
/// Shrinking re-thresholds `field` (intersected with m_b, so the result is
/// always a subset of both inputs). Bisection over the threshold keeps an
/// upper end that satisfies the bound; the mask at that end is returned.
inline BinaryMask constrain_mask(const BinaryMask& m_b, const MaskConstraint& constraint, const NoiseField& field) {
  const double r = constraint.max_area_ratio;
  detail::require(r >= 0.0 && r <= 1.0, "constrain_mask: max_area_ratio must lie in [0,1]");
  detail::require(m_b.same_shape(constraint.foreground) && m_b.width() == field.width &&
                      m_b.height() == field.height,
                  "constrain_mask: dimension mismatch");

  BinaryMask joint = mask_and(m_b, constraint.foreground);
  const double limit = r * static_cast<double>(constraint.foreground.area());
  if (static_cast<double>(joint.area()) <= limit) return joint;

  auto rethreshold = [&](double t) {
    BinaryMask out(joint.width(), joint.height());
    auto dst = out.bits();
    auto src = joint.bits();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] && field.values[i] > t) ? 1 : 0;
    return out;
  };

  // joint fails at lo; everything passes at hi = 1 since the field never exceeds 1.
  double lo = -1.0;
  double hi = 1.0;
  for (int step = 0; step < kConstraintBisectionSteps; ++step) {
    const double mid = 0.5 * (lo + hi);
    if (static_cast<double>(rethreshold(mid).area()) <= limit)
      hi = mid;
    else
      lo = mid;
  }
  return rethreshold(hi);
}

}  // namespace grain_ad
