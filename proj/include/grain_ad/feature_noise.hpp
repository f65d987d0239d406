#pragma once

#include <cmath>
#include <cstdint>

#include "grain_ad/error.hpp"
#include "grain_ad/feature_map.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

struct GaussianNoiseParams {
  double mu = 0.0;
  double sigma = 0.025;
  std::uint64_t seed = 0;
};

/// Feature-level anomaly simulation: every scalar entry receives an
/// independent N(mu, sigma^2) draw (Rng::normal, row-major entry order).
template <class T>
FeatureMap<T> add_feature_noise(const FeatureMap<T>& f, const GaussianNoiseParams& params) {
  detail::require(params.sigma >= 0.0 && std::isfinite(params.sigma), "add_feature_noise: sigma must be >= 0");
  detail::require(std::isfinite(params.mu), "add_feature_noise: mu must be finite");
  if (params.sigma == 0.0 && params.mu == 0.0) return f;
  FeatureMap<T> out = f;
  Rng rng(params.seed);
  for (T& v : out.values()) v = static_cast<T>(static_cast<double>(v) + rng.normal(params.mu, params.sigma));
  return out;
}

}  // namespace grain_ad
