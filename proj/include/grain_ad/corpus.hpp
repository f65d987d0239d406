#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "grain_ad/dataset.hpp"
#include "grain_ad/error.hpp"
#include "grain_ad/image.hpp"
#include "grain_ad/noise.hpp"
#include "grain_ad/png_io.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

enum class DefectType { Spot, Hole, Discoloration };

inline const char* to_string(DefectType d) noexcept {
  switch (d) {
    case DefectType::Spot: return "spot";
    case DefectType::Hole: return "hole";
    default: return "discoloration";
  }
}

inline DefectType defect_from_string(const std::string& s) {
  if (s == "spot") return DefectType::Spot;
  if (s == "hole") return DefectType::Hole;
  if (s == "discoloration") return DefectType::Discoloration;
  throw ConfigError("unknown defect type: " + s);
}

struct CorpusParams {
  int train_normals = 300;
  int test_normals = 50;
  int test_anomalies = 50;
  int image_size = kWorkingSize;
  std::vector<DefectType> defects{DefectType::Spot, DefectType::Hole, DefectType::Discoloration};
};

/// A rendered kernel plus the background layer behind it.
struct GrainRendering {
  Image image;       // foreground attached
  Image background;
  double cx = 0, cy = 0, semi_major = 0, semi_minor = 0, angle = 0;

  // Elliptical coordinates (u along the major axis, v along the minor axis),
  // both normalized so the silhouette edge is u^2 + v^2 = 1.
  std::pair<double, double> local(double x, double y) const noexcept {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    return {(dx * c + dy * s) / semi_major, (-dx * s + dy * c) / semi_minor};
  }
};

struct DefectRendering {
  Image image;
  BinaryMask defect;  // pixels altered by the defect
  DefectType type{};
};

/// Seeded desk-scale grain images: an elliptical kernel with shading, a
/// crease and low-amplitude texture on a dark noisy background.
inline GrainRendering render_grain(std::uint64_t seed, int size = kWorkingSize) {
  detail::require(size >= 32, "render_grain: image size must be >= 32");
  Rng rng(seed);
  GrainRendering g;
  const double scale = size / 256.0;
  g.cx = size / 2.0 + rng.uniform(-10, 10) * scale;
  g.cy = size / 2.0 + rng.uniform(-10, 10) * scale;
  g.semi_major = rng.uniform(78, 96) * scale;
  g.semi_minor = rng.uniform(40, 52) * scale;
  g.angle = rng.uniform(-0.3, 0.3);
  const double base[3] = {0.78 + rng.uniform(-0.04, 0.04), 0.60 + rng.uniform(-0.04, 0.04),
                          0.36 + rng.uniform(-0.04, 0.04)};
  const auto texture = perlin_field(size, size, std::max(1, static_cast<int>(16 * scale)), rng.next_u64(), {2, 0.5});
  const auto bg_noise = perlin_field(size, size, std::max(1, static_cast<int>(8 * scale)), rng.next_u64());
  const double crease_width = 2.5 * scale;

  g.image = Image(size, size, 3);
  g.background = Image(size, size, 3);
  BinaryMask fg(size, size);
  static constexpr double kBackground[3] = {0.10, 0.11, 0.13};
  for (int r = 0; r < size; ++r) {
    for (int q = 0; q < size; ++q) {
      const std::size_t px = static_cast<std::size_t>(r) * size + q;
      for (int c = 0; c < 3; ++c)
        g.background.at(r, q, c) = static_cast<float>(kBackground[c] + 0.015 * bg_noise.values[px]);
      const auto [u, v] = g.local(q + 0.5, r + 0.5);
      const double d2 = u * u + v * v;
      if (d2 > 1.0) {
        for (int c = 0; c < 3; ++c) g.image.at(r, q, c) = g.background.at(r, q, c);
        continue;
      }
      fg.set(r, q, true);
      const double vpx = v * g.semi_minor;
      const double crease = std::abs(u) < 0.85 ? 0.12 * std::exp(-vpx * vpx / (2 * crease_width * crease_width)) : 0.0;
      const double shade = 1.0 - 0.3 * d2 - crease;
      for (int c = 0; c < 3; ++c)
        g.image.at(r, q, c) = static_cast<float>(std::clamp(base[c] * shade + 0.06 * texture.values[px], 0.0, 1.0));
    }
  }
  quantize_8bit(g.image);
  quantize_8bit(g.background);
  g.image.set_foreground(std::move(fg));
  return g;
}

/// Injects one defect into a clean rendering. Spots darken a disc,
/// holes replace a disc on the silhouette edge with background (and remove
/// it from the foreground), discoloration shifts the hue of an ellipse.
inline DefectRendering inject_defect(const GrainRendering& clean, DefectType type, std::uint64_t seed) {
  Rng rng(seed);
  const int w = clean.image.width(), h = clean.image.height();
  const double scale = w / 256.0;
  const BinaryMask& fg = *clean.image.foreground();
  DefectRendering out{clean.image, BinaryMask(w, h), type};
  BinaryMask new_fg = fg;

  auto for_each_fg_pixel = [&](auto&& fn) {
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q)
        if (fg(r, q)) fn(r, q);
  };
  // A point inside the kernel at normalized radius < max_d, in pixels.
  auto interior_point = [&](double max_d) {
    const double t = rng.uniform(0, 2 * std::numbers::pi), rad = max_d * std::sqrt(rng.uniform());
    const double u = rad * std::cos(t), v = rad * std::sin(t);
    const double c = std::cos(clean.angle), s = std::sin(clean.angle);
    const double lx = u * clean.semi_major, ly = v * clean.semi_minor;
    return std::pair{clean.cx + lx * c - ly * s, clean.cy + lx * s + ly * c};
  };

  switch (type) {
    case DefectType::Spot: {
      const int count = 1 + static_cast<int>(rng.below(2));
      static constexpr double kMold[3] = {0.06, 0.07, 0.04};
      for (int k = 0; k < count; ++k) {
        const auto [sx, sy] = interior_point(0.6);
        const double radius = rng.uniform(9, 15) * scale;
        for_each_fg_pixel([&](int r, int q) {
          const double dx = q + 0.5 - sx, dy = r + 0.5 - sy;
          if (dx * dx + dy * dy > radius * radius || out.defect(r, q)) return;
          out.defect.set(r, q, true);
          for (int c = 0; c < 3; ++c) out.image.at(r, q, c) = static_cast<float>(0.3 * clean.image.at(r, q, c) + 0.7 * kMold[c]);
        });
      }
      break;
    }
    case DefectType::Hole: {
      const double t = rng.uniform(0, 2 * std::numbers::pi);
      const double c = std::cos(clean.angle), s = std::sin(clean.angle);
      const double lx = std::cos(t) * clean.semi_major * 0.95, ly = std::sin(t) * clean.semi_minor * 0.95;
      const double hx = clean.cx + lx * c - ly * s, hy = clean.cy + lx * s + ly * c;
      const double radius = rng.uniform(16, 28) * scale;
      for_each_fg_pixel([&](int r, int q) {
        const double dx = q + 0.5 - hx, dy = r + 0.5 - hy;
        if (dx * dx + dy * dy > radius * radius) return;
        out.defect.set(r, q, true);
        new_fg.set(r, q, false);
        for (int ch = 0; ch < 3; ++ch) out.image.at(r, q, ch) = clean.background.at(r, q, ch);
      });
      break;
    }
    case DefectType::Discoloration: {
      const auto [sx, sy] = interior_point(0.5);
      const double ra = rng.uniform(16, 30) * scale, rb = rng.uniform(12, 22) * scale;
      const double phi = rng.uniform(0, std::numbers::pi);
      static constexpr double kTint[3] = {0.78, 0.5, 0.42};
      for_each_fg_pixel([&](int r, int q) {
        const double dx = q + 0.5 - sx, dy = r + 0.5 - sy;
        const double a = (dx * std::cos(phi) + dy * std::sin(phi)) / ra;
        const double b = (-dx * std::sin(phi) + dy * std::cos(phi)) / rb;
        if (a * a + b * b > 1.0) return;
        out.defect.set(r, q, true);
        for (int ch = 0; ch < 3; ++ch) out.image.at(r, q, ch) = static_cast<float>(clean.image.at(r, q, ch) * kTint[ch]);
      });
      break;
    }
  }
  quantize_8bit(out.image);
  out.image.set_foreground(std::move(new_fg));
  return out;
}

/// Seeds for corpus item k of a given role.
inline std::uint64_t corpus_item_seed(std::uint64_t seed, std::uint64_t role, std::uint64_t index) {
  return derive_seed(seed, 0xC0u, role, index);
}

inline constexpr std::uint64_t kRoleTrainNormal = 0;
inline constexpr std::uint64_t kRoleTestNormal = 1;
inline constexpr std::uint64_t kRoleTestAnomaly = 2;
inline constexpr std::uint64_t kRoleDefect = 3;

/// The clean rendering and the defective image of test anomaly `index`.
inline std::pair<GrainRendering, DefectRendering> corpus_anomaly(const CorpusParams& params, std::uint64_t seed,
                                                                 int index) {
  auto clean = render_grain(corpus_item_seed(seed, kRoleTestAnomaly, static_cast<std::uint64_t>(index)), params.image_size);
  const auto type = params.defects[static_cast<std::size_t>(index) % params.defects.size()];
  auto defect = inject_defect(clean, type, corpus_item_seed(seed, kRoleDefect, static_cast<std::uint64_t>(index)));
  return {std::move(clean), std::move(defect)};
}

/// Procedural stand-in corpus. Normals are clean renderings (category
/// "good"); anomalies are fresh renderings with one injected defect,
/// cycling through params.defects (category = defect name).
inline std::pair<Dataset, Dataset> generate_synthetic_corpus(const CorpusParams& params, std::uint64_t seed,
                                                             std::shared_ptr<AccessLog> log = std::make_shared<AccessLog>()) {
  if (params.train_normals <= 0) throw ConfigError("synthetic corpus: train_normals must be positive");
  if (params.test_normals < 0 || params.test_anomalies < 0) throw ConfigError("synthetic corpus: negative counts");
  if (params.test_normals + params.test_anomalies == 0) throw ConfigError("synthetic corpus: empty test split");
  if (params.test_anomalies > 0 && params.defects.empty()) throw ConfigError("synthetic corpus: no defect types");

  auto make_id = [](const std::string& split, const std::string& cat, int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", k);
    return split + "/" + cat + "/" + buf + ".png";
  };
  auto item = [&](const std::string& split, const std::string& cat, int k, int label, const Image& img) {
    DatasetItem it;
    it.id = make_id(split, cat, k);
    it.category = cat;
    it.label = label;
    it.payload = std::make_shared<const PackedImage>(PackedImage::pack(img));
    return it;
  };

  std::vector<DatasetItem> train, test;
  for (int k = 0; k < params.train_normals; ++k)
    train.push_back(item("train", "good", k, 0,
                         render_grain(corpus_item_seed(seed, kRoleTrainNormal, static_cast<std::uint64_t>(k)), params.image_size).image));
  for (int k = 0; k < params.test_normals; ++k)
    test.push_back(item("test", "good", k, 0,
                        render_grain(corpus_item_seed(seed, kRoleTestNormal, static_cast<std::uint64_t>(k)), params.image_size).image));
  for (int k = 0; k < params.test_anomalies; ++k) {
    auto [clean, defect] = corpus_anomaly(params, seed, k);
    test.push_back(item("test", to_string(defect.type), k, 1, defect.image));
  }
  auto by_id = [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; };
  std::sort(test.begin(), test.end(), by_id);
  return {Dataset(Split::Train, std::move(train), log), Dataset(Split::Test, std::move(test), log)};
}

/// Writes datasets in the pre-split category-folder layout understood by
/// load_dataset, foreground masks under masks/.
inline void write_dataset_tree(const std::filesystem::path& root, const std::vector<const Dataset*>& splits) {
  for (const Dataset* ds : splits) {
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto& it = ds->item(i);
      const Image img = it.payload ? it.payload->unpack() : ds->load(i);
      const auto path = root / it.id;
      std::filesystem::create_directories(path.parent_path());
      write_png(path, img);
      if (img.foreground()) {
        const auto mask_path = root / "masks" / it.id;
        std::filesystem::create_directories(mask_path.parent_path());
        write_mask_png(mask_path, *img.foreground());
      }
    }
  }
}

}  // namespace grain_ad
