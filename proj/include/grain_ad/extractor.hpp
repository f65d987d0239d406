#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grain_ad/binary_io.hpp"
#include "grain_ad/error.hpp"
#include "grain_ad/feature_map.hpp"
#include "grain_ad/image.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class WeightSource : std::uint8_t { SeededFixed = 0, File = 1 };

/// Configuration of the hierarchical feature extractor.
///
/// Stage 1 is a kernel-4 stride-4 patchify convolution, every later stage a
/// kernel-3 stride-2 convolution with one pixel of zero padding; each is
/// followed by ReLU. Stage s therefore runs at input / 2^(s+1).
struct ExtractorSpec {
  int input_channels = 3;
  std::vector<int> stage_channels{32, 64, 128, 256};
  int patch_size = 3;
  std::vector<int> fusion_stages{3, 4};  // 1-based stage numbers, ascending
  WeightSource weight_source = WeightSource::SeededFixed;
  std::uint64_t seed = 0;
  std::filesystem::path weights_file;  // used when weight_source == File

  int stage_count() const noexcept { return static_cast<int>(stage_channels.size()); }

  /// Channel count of the fused patch-aware feature.
  int fused_channels() const {
    int total = 0;
    for (int s : fusion_stages) total += stage_channels.at(static_cast<std::size_t>(s - 1));
    return total;
  }

  void validate() const {
    detail::require(input_channels == 1 || input_channels == 3, "ExtractorSpec: input_channels must be 1 or 3");
    detail::require(!stage_channels.empty(), "ExtractorSpec: at least one stage required");
    for (int c : stage_channels) detail::require(c >= 1, "ExtractorSpec: stage channel counts must be positive");
    detail::require(patch_size >= 1 && patch_size % 2 == 1, "ExtractorSpec: patch size must be odd and >= 1");
    detail::require(!fusion_stages.empty(), "ExtractorSpec: fusion stages must be non-empty");
    for (std::size_t i = 0; i < fusion_stages.size(); ++i) {
      detail::require(fusion_stages[i] >= 1 && fusion_stages[i] <= stage_count(),
                      "ExtractorSpec: fusion stage out of range");
      if (i > 0) detail::require(fusion_stages[i] > fusion_stages[i - 1], "ExtractorSpec: fusion stages must ascend");
    }
  }

  bool operator==(const ExtractorSpec&) const = default;
};

struct ConvGeometry {
  int kernel;
  int stride;
  int pad;
};

inline constexpr ConvGeometry stage_geometry(int stage_index) noexcept {
  return stage_index == 0 ? ConvGeometry{4, 4, 0} : ConvGeometry{3, 2, 1};
}

inline int conv_output_size(int in, ConvGeometry g) noexcept { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

template <class T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  ConvGeometry geometry{};
  RowMatrix<T> weight;  // out × (kernel*kernel*in), columns ordered (ky, kx, cin)
  ColVector<T> bias;

  int fan_in() const noexcept { return geometry.kernel * geometry.kernel * in_channels; }

  template <class U>
  ConvLayer<U> cast() const {
    return ConvLayer<U>{in_channels, out_channels, geometry, weight.template cast<U>(), bias.template cast<U>()};
  }
};

/// Patch matrix: one row per output position, (ky, kx, cin) per column.
template <class T>
RowMatrix<T> im2col(const FeatureMap<T>& in, ConvGeometry g) {
  const int oh = conv_output_size(in.height(), g);
  const int ow = conv_output_size(in.width(), g);
  const int c = in.channels();
  RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(oh) * ow, g.kernel * g.kernel * c);
  for (int r = 0; r < oh; ++r) {
    for (int q = 0; q < ow; ++q) {
      T* row = cols.data() + (static_cast<Eigen::Index>(r) * ow + q) * cols.cols();
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int y = r * g.stride - g.pad + ky;
        if (y < 0 || y >= in.height()) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int x = q * g.stride - g.pad + kx;
          if (x < 0 || x >= in.width()) continue;
          const T* src = in.data() + (static_cast<std::size_t>(y) * in.width() + x) * c;
          std::copy(src, src + c, row + (ky * g.kernel + kx) * c);
        }
      }
    }
  }
  return cols;
}

/// conv + bias + ReLU over a precomputed patch matrix.
template <class T>
FeatureMap<T> conv_relu(const ConvLayer<T>& layer, const RowMatrix<T>& cols, int out_h, int out_w, int stage) {
  FeatureMap<T> out(out_h, out_w, layer.out_channels, stage);
  Eigen::Map<RowMatrix<T>> dst(out.data(), cols.rows(), layer.out_channels);
  dst.noalias() = cols * layer.weight.transpose();
  dst.rowwise() += layer.bias.transpose();
  dst = dst.cwiseMax(T{0});
  return out;
}

template <class T>
FeatureMap<T> image_to_map(const Image& img, int channels) {
  FeatureMap<T> out(img.height(), img.width(), channels);
  auto src = img.values();
  auto dst = out.values();
  const std::size_t n = img.pixel_count();
  if (img.channels() == channels) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  } else if (channels == 3) {
    for (std::size_t px = 0; px < n; ++px) dst[3 * px] = dst[3 * px + 1] = dst[3 * px + 2] = static_cast<T>(src[px]);
  } else {
    for (std::size_t px = 0; px < n; ++px)
      dst[px] = (static_cast<T>(src[3 * px]) + static_cast<T>(src[3 * px + 1]) + static_cast<T>(src[3 * px + 2])) / T{3};
  }
  return out;
}

namespace detail {

// Rows (or columns, when the matrix is tall) made orthonormal by modified
// Gram-Schmidt in double precision, then scaled by `gain`.
inline RowMatrix<double> orthogonal_matrix(int rows, int cols, Rng& rng, double gain) {
  const bool tall = rows > cols;
  const int n = tall ? cols : rows;
  const int dim = tall ? rows : cols;
  RowMatrix<double> basis(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) basis(i, j) = rng.normal();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) basis.row(i) -= basis.row(i).dot(basis.row(k)) * basis.row(k);
    const double norm = basis.row(i).norm();
    basis.row(i) /= norm;
  }
  basis *= gain;
  if (tall) return basis.transpose();
  return basis;
}

}  // namespace detail

inline constexpr char kWeightFileMagic[5] = "GAEW";
inline constexpr std::uint32_t kWeightFileVersion = 1;

/// Frozen-by-default hierarchical convolutional feature extractor.
template <class T>
class Extractor {
 public:
  Extractor() = default;

  explicit Extractor(ExtractorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.weight_source == WeightSource::File) {
      layers_ = load_layers(spec_.weights_file);
    } else {
      layers_ = seeded_layers();
    }
  }

  Extractor(ExtractorSpec spec, std::vector<ConvLayer<T>> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
    spec_.validate();
    check_layers(layers_, "in-memory weights");
  }

  const ExtractorSpec& spec() const noexcept { return spec_; }
  const std::vector<ConvLayer<T>>& layers() const noexcept { return layers_; }
  std::vector<ConvLayer<T>>& layers() noexcept { return layers_; }

  /// One map per stage, stage numbers 1..n.
  std::vector<FeatureMap<T>> extract_hierarchical(const Image& image) const {
    std::vector<FeatureMap<T>> maps;
    maps.reserve(layers_.size());
    FeatureMap<T> current = image_to_map<T>(image, spec_.input_channels);
    for (std::size_t s = 0; s < layers_.size(); ++s) {
      const auto& layer = layers_[s];
      const int oh = conv_output_size(current.height(), layer.geometry);
      const int ow = conv_output_size(current.width(), layer.geometry);
      detail::require(oh >= 1 && ow >= 1, "extract_hierarchical: input too small for stage " + std::to_string(s + 1));
      const auto cols = im2col(current, layer.geometry);
      maps.push_back(conv_relu(layer, cols, oh, ow, static_cast<int>(s + 1)));
      current = maps.back();
    }
    return maps;
  }

  template <class U>
  Extractor<U> cast() const {
    std::vector<ConvLayer<U>> layers;
    for (const auto& l : layers_) layers.push_back(l.template cast<U>());
    return Extractor<U>(spec_, std::move(layers));
  }

  /// Writes the weight file: magic "GAEW", u32 version, u32 layer count, then
  /// per layer u32 out, in, kernel, stride, pad followed by float32 weights
  /// (out, ky, kx, in order) and float32 biases. Little-endian throughout.
  void write_layers(binary::Writer& w) const {
    w.put_u32(static_cast<std::uint32_t>(layers_.size()));
    for (const auto& l : layers_) {
      w.put_u32(static_cast<std::uint32_t>(l.out_channels));
      w.put_u32(static_cast<std::uint32_t>(l.in_channels));
      w.put_u32(static_cast<std::uint32_t>(l.geometry.kernel));
      w.put_u32(static_cast<std::uint32_t>(l.geometry.stride));
      w.put_u32(static_cast<std::uint32_t>(l.geometry.pad));
      w.put_f32_array(std::span<const T>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
      w.put_f32_array(std::span<const T>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
    }
  }

  void save_weights(const std::filesystem::path& path) const {
    binary::Writer w;
    w.put_magic(kWeightFileMagic);
    w.put_u32(kWeightFileVersion);
    write_layers(w);
    w.save(path);
  }

  std::vector<ConvLayer<T>> read_layers(binary::Reader& r) const {
    const auto count = r.get_u32();
    if (count != static_cast<std::uint32_t>(spec_.stage_count()))
      throw ModelLoadError(r.origin() + ": expected " + std::to_string(spec_.stage_count()) + " layers, found " +
                           std::to_string(count));
    std::vector<ConvLayer<T>> layers;
    for (std::uint32_t s = 0; s < count; ++s) {
      const auto expect = expected_layer(static_cast<int>(s));
      ConvLayer<T> l;
      l.out_channels = static_cast<int>(r.get_u32());
      l.in_channels = static_cast<int>(r.get_u32());
      l.geometry.kernel = static_cast<int>(r.get_u32());
      l.geometry.stride = static_cast<int>(r.get_u32());
      l.geometry.pad = static_cast<int>(r.get_u32());
      if (l.out_channels != expect.out_channels || l.in_channels != expect.in_channels ||
          l.geometry.kernel != expect.geometry.kernel || l.geometry.stride != expect.geometry.stride ||
          l.geometry.pad != expect.geometry.pad)
        throw ModelLoadError(r.origin() + ": shape mismatch in layer " + std::to_string(s + 1));
      l.weight.resize(l.out_channels, l.fan_in());
      l.bias.resize(l.out_channels);
      r.get_f32_array(std::span<T>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
      r.get_f32_array(std::span<T>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
      layers.push_back(std::move(l));
    }
    return layers;
  }

 private:
  ConvLayer<T> expected_layer(int s) const {
    ConvLayer<T> l;
    l.in_channels = s == 0 ? spec_.input_channels : spec_.stage_channels[static_cast<std::size_t>(s - 1)];
    l.out_channels = spec_.stage_channels[static_cast<std::size_t>(s)];
    l.geometry = stage_geometry(s);
    return l;
  }

  void check_layers(const std::vector<ConvLayer<T>>& layers, const std::string& origin) const {
    if (layers.size() != static_cast<std::size_t>(spec_.stage_count()))
      throw ModelLoadError(origin + ": layer count does not match extractor spec");
    for (int s = 0; s < spec_.stage_count(); ++s) {
      const auto e = expected_layer(s);
      const auto& l = layers[static_cast<std::size_t>(s)];
      if (l.in_channels != e.in_channels || l.out_channels != e.out_channels || l.weight.rows() != e.out_channels ||
          l.weight.cols() != e.fan_in() || l.bias.size() != e.out_channels)
        throw ModelLoadError(origin + ": shape mismatch in layer " + std::to_string(s + 1));
    }
  }

  std::vector<ConvLayer<T>> seeded_layers() const {
    std::vector<ConvLayer<T>> layers;
    for (int s = 0; s < spec_.stage_count(); ++s) {
      auto l = expected_layer(s);
      Rng rng(derive_seed(spec_.seed, 0xE7u, static_cast<std::uint64_t>(s)));
      l.weight = detail::orthogonal_matrix(l.out_channels, l.fan_in(), rng, std::sqrt(2.0)).template cast<T>();
      l.bias = ColVector<T>::Zero(l.out_channels);
      layers.push_back(std::move(l));
    }
    return layers;
  }

  std::vector<ConvLayer<T>> load_layers(const std::filesystem::path& path) const {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) throw ModelLoadError("weight file not found: " + path.string());
    auto r = binary::Reader::from_file(path);
    r.expect_magic(kWeightFileMagic);
    const auto version = r.get_u32();
    if (version != kWeightFileVersion)
      throw ModelLoadError(path.string() + ": unsupported weight file version " + std::to_string(version));
    auto layers = read_layers(r);
    if (!r.at_end()) throw ModelLoadError(path.string() + ": trailing bytes after weights");
    return layers;
  }

  ExtractorSpec spec_;
  std::vector<ConvLayer<T>> layers_;
};

/// Mean over the p×p neighbourhood of every position, clipped to the map
/// and divided by the clipped count. Resolution and channels are unchanged.
template <class T>
FeatureMap<T> aggregate_patches(const FeatureMap<T>& f, int p) {
  detail::require(p >= 1 && p % 2 == 1, "aggregate_patches: patch size must be odd and >= 1");
  if (p == 1) return f;
  const int half = p / 2;
  const int c = f.channels();
  FeatureMap<T> out(f.height(), f.width(), c, f.stage());
  std::vector<double> acc(static_cast<std::size_t>(c));
  for (int r = 0; r < f.height(); ++r) {
    const int r0 = std::max(0, r - half), r1 = std::min(f.height() - 1, r + half);
    for (int q = 0; q < f.width(); ++q) {
      const int q0 = std::max(0, q - half), q1 = std::min(f.width() - 1, q + half);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int y = r0; y <= r1; ++y)
        for (int x = q0; x <= q1; ++x) {
          const T* src = f.data() + (static_cast<std::size_t>(y) * f.width() + x) * c;
          for (int k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += static_cast<double>(src[k]);
        }
      const double count = static_cast<double>((r1 - r0 + 1) * (q1 - q0 + 1));
      T* dst = out.data() + (static_cast<std::size_t>(r) * f.width() + q) * c;
      for (int k = 0; k < c; ++k) dst[k] = static_cast<T>(acc[static_cast<std::size_t>(k)] / count);
    }
  }
  return out;
}

/// Transpose of aggregate_patches (each output gradient spread evenly over
/// the neighbourhood that produced it).
template <class T>
FeatureMap<T> aggregate_patches_backward(const FeatureMap<T>& grad, int p) {
  if (p == 1) return grad;
  const int half = p / 2;
  const int c = grad.channels();
  FeatureMap<T> out(grad.height(), grad.width(), c, grad.stage());
  for (int r = 0; r < grad.height(); ++r) {
    const int r0 = std::max(0, r - half), r1 = std::min(grad.height() - 1, r + half);
    for (int q = 0; q < grad.width(); ++q) {
      const int q0 = std::max(0, q - half), q1 = std::min(grad.width() - 1, q + half);
      const T inv = T{1} / static_cast<T>((r1 - r0 + 1) * (q1 - q0 + 1));
      const T* src = grad.data() + (static_cast<std::size_t>(r) * grad.width() + q) * c;
      for (int y = r0; y <= r1; ++y)
        for (int x = q0; x <= q1; ++x) {
          T* dst = out.data() + (static_cast<std::size_t>(y) * grad.width() + x) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k] * inv;
        }
    }
  }
  return out;
}

namespace detail {

struct InterpTap {
  int lo;
  int hi;
  double w;  // weight of hi
};

// Align-corners sample positions: the first and last outputs land exactly on
// the first and last inputs.
inline std::vector<InterpTap> align_corners_taps(int in, int out) {
  std::vector<InterpTap> taps(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    const double src = (out == 1 || in == 1) ? 0.0 : static_cast<double>(i) * (in - 1) / (out - 1);
    const int lo = std::min(static_cast<int>(src), in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling of a feature map (align-corners convention).
template <class T>
FeatureMap<T> interpolate_bilinear(const FeatureMap<T>& f, int out_h, int out_w) {
  const auto ty = detail::align_corners_taps(f.height(), out_h);
  const auto tx = detail::align_corners_taps(f.width(), out_w);
  const int c = f.channels();
  FeatureMap<T> out(out_h, out_w, c, f.stage());
  for (int r = 0; r < out_h; ++r) {
    const auto& y = ty[static_cast<std::size_t>(r)];
    for (int q = 0; q < out_w; ++q) {
      const auto& x = tx[static_cast<std::size_t>(q)];
      const double w00 = (1 - y.w) * (1 - x.w), w01 = (1 - y.w) * x.w;
      const double w10 = y.w * (1 - x.w), w11 = y.w * x.w;
      for (int k = 0; k < c; ++k) {
        const double v = w00 * f.at(y.lo, x.lo, k) + w01 * f.at(y.lo, x.hi, k) + w10 * f.at(y.hi, x.lo, k) +
                         w11 * f.at(y.hi, x.hi, k);
        out.at(r, q, k) = static_cast<T>(v);
      }
    }
  }
  return out;
}

/// Transpose of interpolate_bilinear.
template <class T>
FeatureMap<T> interpolate_bilinear_backward(const FeatureMap<T>& grad, int in_h, int in_w) {
  const auto ty = detail::align_corners_taps(in_h, grad.height());
  const auto tx = detail::align_corners_taps(in_w, grad.width());
  const int c = grad.channels();
  FeatureMap<T> out(in_h, in_w, c, grad.stage());
  for (int r = 0; r < grad.height(); ++r) {
    const auto& y = ty[static_cast<std::size_t>(r)];
    for (int q = 0; q < grad.width(); ++q) {
      const auto& x = tx[static_cast<std::size_t>(q)];
      const T w00 = static_cast<T>((1 - y.w) * (1 - x.w)), w01 = static_cast<T>((1 - y.w) * x.w);
      const T w10 = static_cast<T>(y.w * (1 - x.w)), w11 = static_cast<T>(y.w * x.w);
      for (int k = 0; k < c; ++k) {
        const T g = grad.at(r, q, k);
        out.at(y.lo, x.lo, k) += w00 * g;
        out.at(y.lo, x.hi, k) += w01 * g;
        out.at(y.hi, x.lo, k) += w10 * g;
        out.at(y.hi, x.hi, k) += w11 * g;
      }
    }
  }
  return out;
}

/// concat[f_low, interpolate(f_high)] along channels at f_low's resolution.
template <class T>
FeatureMap<T> fuse_features(const FeatureMap<T>& f_low, const FeatureMap<T>& f_high) {
  detail::require(f_high.height() <= f_low.height() && f_high.width() <= f_low.width(),
                  "fuse_features: higher stage must not exceed lower stage resolution");
  const auto up = interpolate_bilinear(f_high, f_low.height(), f_low.width());
  const int c1 = f_low.channels(), c2 = f_high.channels();
  FeatureMap<T> out(f_low.height(), f_low.width(), c1 + c2, f_low.stage());
  for (int pos = 0; pos < f_low.positions(); ++pos) {
    T* dst = out.data() + static_cast<std::size_t>(pos) * (c1 + c2);
    std::copy_n(f_low.data() + static_cast<std::size_t>(pos) * c1, c1, dst);
    std::copy_n(up.data() + static_cast<std::size_t>(pos) * c2, c2, dst + c1);
  }
  return out;
}

/// Aggregates each fusion stage and concatenates them, the later stages
/// interpolated to the first fusion stage's resolution.
template <class T>
FeatureMap<T> fuse_stages(const std::vector<FeatureMap<T>>& stages, const ExtractorSpec& spec) {
  FeatureMap<T> fused = aggregate_patches(stages.at(static_cast<std::size_t>(spec.fusion_stages.front() - 1)), spec.patch_size);
  for (std::size_t i = 1; i < spec.fusion_stages.size(); ++i) {
    const auto& f = stages.at(static_cast<std::size_t>(spec.fusion_stages[i] - 1));
    fused = fuse_features(fused, aggregate_patches(f, spec.patch_size));
  }
  return fused;
}

/// Patch-aware features of one image: extract, aggregate, fuse.
template <class T>
FeatureMap<T> patch_features(const Image& image, const Extractor<T>& extractor) {
  return fuse_stages(extractor.extract_hierarchical(image), extractor.spec());
}

}  // namespace grain_ad
