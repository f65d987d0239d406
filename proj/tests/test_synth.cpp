#include <gtest/gtest.h>

#include <filesystem>

#include "grain_ad/png_io.hpp"
#include "grain_ad/synth.hpp"

using namespace grain_ad;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Image img(w, h, c);
  Rng rng(seed);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(Blend, EmptyMaskIsIdentity) {
  const auto x = random_image(16, 16, 3, 1);
  const auto a = random_image(16, 16, 3, 2);
  EXPECT_EQ(blend_anomaly(x, a, BinaryMask(16, 16), 0.7), x);
}

TEST(Blend, FullMaskFullOpacityIsSource) {
  const auto x = random_image(16, 16, 3, 1);
  const auto a = random_image(16, 16, 3, 2);
  EXPECT_EQ(blend_anomaly(x, a, BinaryMask::full(16, 16), 1.0).values()[0], a.values()[0]);
  const auto out = blend_anomaly(x, a, BinaryMask::full(16, 16), 1.0);
  EXPECT_TRUE(std::equal(out.values().begin(), out.values().end(), a.values().begin()));
}

TEST(Blend, SinglePixelHalfOpacity) {
  Image x(1, 1, 1, 0.2f), a(1, 1, 1, 0.8f);
  const auto out = blend_anomaly(x, a, BinaryMask::full(1, 1), 0.5);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.5f);
}

TEST(Blend, LocalityAndConvexity) {
  const auto x = random_image(32, 20, 3, 3);
  const auto a = random_image(32, 20, 3, 4);
  BinaryMask m(32, 20);
  Rng rng(5);
  for (auto& b : m.bits()) b = rng.uniform() < 0.4;
  const auto out = blend_anomaly(x, a, m, 0.37);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 32; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = out.at(r, c, ch), xv = x.at(r, c, ch), av = a.at(r, c, ch);
        if (!m(r, c)) {
          EXPECT_EQ(v, xv);
        } else {
          EXPECT_GE(v, std::min(xv, av));
          EXPECT_LE(v, std::max(xv, av));
        }
      }
}

TEST(Blend, RejectsMismatch) {
  const auto x = random_image(8, 8, 3, 1);
  EXPECT_THROW(blend_anomaly(x, random_image(8, 8, 1, 2), BinaryMask(8, 8), 0.5), InvalidArgument);
  EXPECT_THROW(blend_anomaly(x, x, BinaryMask(4, 8), 0.5), InvalidArgument);
  EXPECT_THROW(blend_anomaly(x, x, BinaryMask(8, 8), 1.5), InvalidArgument);
}

TEST(SampleBeta, RangeAndMean) {
  Rng rng(17);
  double lo = 2, hi = -1, sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const double b = sample_beta(rng);
    lo = std::min(lo, b);
    hi = std::max(hi, b);
    sum += b;
  }
  EXPECT_GE(lo, 0.15);
  EXPECT_LE(hi, 1.0);
  EXPECT_NEAR(sum / 10000, 0.575, 0.02);
}

TEST(SampleBeta, Deterministic) {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_beta(a), sample_beta(b));
}

TEST(SourcePool, ProceduralDeterministicAndInRange) {
  EXPECT_EQ(SourcePool::procedural_texture(64, 48, 3, 5), SourcePool::procedural_texture(64, 48, 3, 5));
  const auto pool = SourcePool::procedural();
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto img = sample_source_image(pool, 24, 24, 3, rng);
    for (float v : img.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(SourcePool, DirectoryWithOneImage) {
  const auto dir = std::filesystem::temp_directory_path() / "grain_ad_tests" / "pool1";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto img = random_image(40, 30, 3, 8);
  quantize_8bit(img);
  write_png(dir / "only.png", img);
  const auto pool = SourcePool::directory(dir);
  Rng rng(0);
  EXPECT_EQ(sample_source_image(pool, 40, 30, 3, rng), img);
  EXPECT_EQ(sample_source_image(pool, 20, 20, 3, rng), resize_image(img, 20, 20));
}

TEST(SourcePool, EmptyDirectoryIsDataError) {
  const auto dir = std::filesystem::temp_directory_path() / "grain_ad_tests" / "pool0";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  EXPECT_THROW(SourcePool::directory(dir), DataError);
  EXPECT_THROW(SourcePool::directory(dir / "missing"), DataError);
}

TEST(Synthesize, ZeroRatioIsDegenerate) {
  const auto x = random_image(64, 64, 3, 1);
  SynthConfig cfg;
  cfg.max_area_ratio = 0.0;
  Rng rng(2);
  const auto res = synthesize_anomaly(x, cfg, rng);
  EXPECT_TRUE(res.degenerate);
  EXPECT_EQ(res.image, x);
  EXPECT_EQ(res.mask.area(), 0u);
}

TEST(Synthesize, DeterministicAndLocal) {
  auto x = random_image(128, 128, 3, 1);
  BinaryMask fg(128, 128);
  for (int r = 16; r < 112; ++r)
    for (int c = 24; c < 104; ++c) fg.set(r, c, true);
  x.set_foreground(fg);
  SynthConfig cfg;
  int nondegenerate = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r1(seed), r2(seed);
    const auto a = synthesize_anomaly(x, cfg, r1);
    const auto b = synthesize_anomaly(x, cfg, r2);
    ASSERT_EQ(a.image, b.image);
    ASSERT_EQ(a.mask, b.mask);
    EXPECT_LE(static_cast<double>(a.mask.area()), 0.2 * static_cast<double>(fg.area()));
    if (a.degenerate) continue;
    ++nondegenerate;
    EXPECT_GE(a.beta, 0.15);
    for (int r = 0; r < 128; ++r)
      for (int c = 0; c < 128; ++c) {
        if (a.mask(r, c)) {
          EXPECT_TRUE(fg(r, c));
        }
        bool differs = false;
        for (int ch = 0; ch < 3; ++ch) differs |= a.image.at(r, c, ch) != x.at(r, c, ch);
        if (!a.mask(r, c)) {
          EXPECT_FALSE(differs);
        }
      }
  }
  EXPECT_GT(nondegenerate, 10);
}
