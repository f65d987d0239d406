#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/feature_map.hpp"

namespace grain_ad {

/// Per-channel standardization of patch-aware features,
/// out = (f - mean) * inv_std, fitted on the training normals.
struct FeatureNormalizer {
  static constexpr double kVarianceEpsilon = 1e-4;

  std::vector<float> mean;
  std::vector<float> inv_std;

  int channels() const noexcept { return static_cast<int>(mean.size()); }

  static FeatureNormalizer identity(int channels) {
    detail::require(channels >= 0, "FeatureNormalizer: negative channel count");
    return {std::vector<float>(static_cast<std::size_t>(channels), 0.0f),
            std::vector<float>(static_cast<std::size_t>(channels), 1.0f)};
  }

  /// Two-pass mean and population variance over every position of every
  /// map, accumulated in double.
  template <class T>
  static FeatureNormalizer fit(std::span<const FeatureMap<T>> maps) {
    detail::require(!maps.empty(), "FeatureNormalizer: nothing to fit");
    const int c = maps.front().channels();
    std::vector<double> sum(static_cast<std::size_t>(c), 0.0), sq(static_cast<std::size_t>(c), 0.0);
    double count = 0.0;
    for (const auto& f : maps) {
      detail::require(f.channels() == c, "FeatureNormalizer: channel count differs between maps");
      for (int pos = 0; pos < f.positions(); ++pos) {
        const auto v = f.vec(pos);
        for (int k = 0; k < c; ++k) sum[static_cast<std::size_t>(k)] += static_cast<double>(v[static_cast<std::size_t>(k)]);
      }
      count += f.positions();
    }
    detail::require(count > 0, "FeatureNormalizer: maps have no positions");
    for (double& s : sum) s /= count;
    for (const auto& f : maps)
      for (int pos = 0; pos < f.positions(); ++pos) {
        const auto v = f.vec(pos);
        for (int k = 0; k < c; ++k) {
          const double d = static_cast<double>(v[static_cast<std::size_t>(k)]) - sum[static_cast<std::size_t>(k)];
          sq[static_cast<std::size_t>(k)] += d * d;
        }
      }
    FeatureNormalizer n;
    for (int k = 0; k < c; ++k) {
      n.mean.push_back(static_cast<float>(sum[static_cast<std::size_t>(k)]));
      n.inv_std.push_back(static_cast<float>(1.0 / std::sqrt(sq[static_cast<std::size_t>(k)] / count + kVarianceEpsilon)));
    }
    return n;
  }

  template <class T>
  void apply(FeatureMap<T>& f) const {
    detail::require(f.channels() == channels(), "FeatureNormalizer: channel count mismatch");
    const auto c = static_cast<std::size_t>(f.channels());
    auto v = f.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t k = i % c;
      v[i] = static_cast<T>((static_cast<double>(v[i]) - mean[k]) * inv_std[k]);
    }
  }

  template <class T>
  FeatureMap<T> operator()(FeatureMap<T> f) const {
    apply(f);
    return f;
  }

  /// Chain rule through apply(): scales each gradient column by inv_std.
  template <class Derived>
  void backward(Eigen::MatrixBase<Derived>& grad) const {
    for (Eigen::Index k = 0; k < grad.cols(); ++k) grad.col(k) *= static_cast<typename Derived::Scalar>(inv_std[static_cast<std::size_t>(k)]);
  }

  bool operator==(const FeatureNormalizer&) const = default;
};

}  // namespace grain_ad
