#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "grain_ad/dataset.hpp"
#include "grain_ad/png_io.hpp"

using namespace grain_ad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "grain_ad_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_images(const fs::path& dir, int count, float value = 0.5f) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03d.png", i);
    write_png(dir / name, Image(8, 8, 3, value));
  }
}

std::vector<DatasetItem> fake_items(const std::map<std::string, int>& per_category) {
  std::vector<DatasetItem> items;
  for (const auto& [cat, n] : per_category)
    for (int i = 0; i < n; ++i) {
      DatasetItem it;
      it.id = cat + "/" + std::to_string(i);
      it.category = cat;
      items.push_back(it);
    }
  return items;
}

}  // namespace

TEST(LoadDataset, PreSplitCategoryFolders) {
  const auto root = fresh_dir("presplit");
  write_images(root / "train" / "good", 10);
  write_images(root / "test" / "good", 4);
  write_images(root / "test" / "defect", 6);
  const auto d = load_dataset(root);
  EXPECT_EQ(d.train.size(), 10u);
  EXPECT_EQ(d.test.size(), 10u);
  EXPECT_EQ(d.test.count_label(1), 6u);
  EXPECT_TRUE(d.unassigned.empty());
  const auto again = load_dataset(root, Layout::CategoryFolders);
  for (std::size_t i = 0; i < d.test.size(); ++i) EXPECT_EQ(d.test.item(i).id, again.test.item(i).id);
  EXPECT_TRUE(std::is_sorted(d.test.items().begin(), d.test.items().end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
}

TEST(LoadDataset, MasksAreAttached) {
  const auto root = fresh_dir("masks");
  write_images(root / "train" / "good", 1);
  write_images(root / "test" / "good", 1);
  BinaryMask m(8, 8);
  m.set(2, 3, true);
  fs::create_directories(root / "masks" / "train" / "good");
  write_mask_png(root / "masks" / "train" / "good" / "000.png", m);
  const auto d = load_dataset(root);
  const auto img = d.train.load(0);
  ASSERT_TRUE(img.foreground());
  EXPECT_EQ(img.width(), kWorkingSize);
  EXPECT_GT(img.foreground()->area(), 0u);
  EXPECT_FALSE(d.test.load(0).foreground());
}

TEST(LoadDataset, Errors) {
  EXPECT_THROW(load_dataset(fresh_dir("empty")), DataError);
  EXPECT_THROW(load_dataset(fs::temp_directory_path() / "grain_ad_tests" / "does-not-exist"), DataError);
  const auto root = fresh_dir("badtrain");
  write_images(root / "train" / "crack", 2);
  write_images(root / "test" / "good", 2);
  EXPECT_THROW(load_dataset(root), DataError);
  const auto broken = fresh_dir("broken");
  fs::create_directories(broken / "good");
  std::ofstream(broken / "good" / "x.png") << "not a png";
  try {
    load_dataset(broken);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("x.png"), std::string::npos);
  }
}

TEST(LoadDataset, Manifest) {
  const auto root = fresh_dir("manifest");
  write_images(root / "img", 3);
  {
    std::ofstream m(root / kManifestName);
    m << "# path\tlabel\tcategory\n";
    m << "img/002.png\t1\tSD\n";
    m << "img/000.png\t0\tHY\n";
    m << "img/001.png\t0\tHY\t\n";
  }
  const auto d = load_dataset(root);
  ASSERT_EQ(d.unassigned.size(), 3u);
  EXPECT_EQ(d.unassigned[0].id, "img/000.png");
  EXPECT_EQ(d.unassigned[2].label, 1);
  {
    std::ofstream m(root / kManifestName);
    m << "img/000.png\t7\tHY\n";
  }
  EXPECT_THROW(load_dataset(root, Layout::Manifest), DataError);
}

TEST(Dataset, TrainSplitRejectsAnomalies) {
  auto items = fake_items({{"x", 1}});
  items[0].label = 1;
  EXPECT_THROW(Dataset(Split::Train, items), DataError);
  EXPECT_NO_THROW(Dataset(Split::Test, items));
}

TEST(SubsetScheme, SeventyThirty) {
  auto [train, test] = apply_subset_scheme(fake_items({{"HY", 100}}), SubsetScheme::set1(), 0.7, 0);
  EXPECT_EQ(train.size(), 70u);
  EXPECT_EQ(test.size(), 30u);
}

TEST(SubsetScheme, Stratified) {
  auto items = fake_items({{"HY", 10}, {"BN", 10}, {"SD", 5}});
  auto [train, test] = apply_subset_scheme(items, SubsetScheme::set2(), 0.7, 3);
  std::map<std::string, int> train_counts, test_counts;
  for (const auto& it : train.items()) ++train_counts[it.category];
  for (const auto& it : test.items()) ++test_counts[it.category];
  EXPECT_EQ(train_counts["HY"], 7);
  EXPECT_EQ(train_counts["BN"], 7);
  EXPECT_EQ(test_counts["HY"], 3);
  EXPECT_EQ(test_counts["BN"], 3);
  EXPECT_EQ(test_counts["SD"], 5);
  EXPECT_EQ(train.count_label(1), 0u);
  EXPECT_EQ(test.count_label(1), 5u);
}

TEST(SubsetScheme, Set2MarksEdibleNormal) {
  auto items = fake_items({{"HY", 4}, {"BN", 4}, {"AP", 4}, {"BP", 4}, {"HD", 4}, {"SD", 2}, {"FS", 2}, {"MY", 2}, {"IM", 2}});
  auto [train, test] = apply_subset_scheme(items, SubsetScheme::set2(), 0.5, 0);
  for (const auto& it : train.items()) EXPECT_TRUE(SubsetScheme::set2().normal.count(it.category));
  for (const auto& it : test.items())
    EXPECT_EQ(it.label, SubsetScheme::set2().anomalous.count(it.category) ? 1 : 0) << it.category;
  EXPECT_EQ(test.count_label(1), 8u);
  auto [train1, test1] = apply_subset_scheme(items, SubsetScheme::set1(), 0.5, 0);
  for (const auto& it : train1.items()) EXPECT_EQ(it.category, "HY");
  EXPECT_EQ(test1.count_label(1), 24u);
}

TEST(SubsetScheme, RemainderWithinOneAndSeeded) {
  auto items = fake_items({{"HY", 7}, {"BN", 5}, {"AP", 3}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto [train, test] = apply_subset_scheme(items, SubsetScheme::set2(), 0.7, seed);
    EXPECT_EQ(train.size(), 11u);  // round(0.7 * 15)
    std::map<std::string, int> counts;
    for (const auto& it : train.items()) ++counts[it.category];
    EXPECT_NEAR(counts["HY"], 4.9, 1.0);
    EXPECT_NEAR(counts["BN"], 3.5, 1.0);
    EXPECT_NEAR(counts["AP"], 2.1, 1.0);
    auto [again, unused] = apply_subset_scheme(items, SubsetScheme::set2(), 0.7, seed);
    for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train.item(i).id, again.item(i).id);
  }
}

TEST(SubsetScheme, Errors) {
  EXPECT_THROW(apply_subset_scheme(fake_items({{"XX", 2}}), SubsetScheme::set1(), 0.7, 0), ConfigError);
  EXPECT_THROW(apply_subset_scheme(fake_items({{"HY", 2}}), SubsetScheme::set1(), 1.0, 0), ConfigError);
  EXPECT_THROW(SubsetScheme::by_name("set3"), ConfigError);
  SubsetScheme bad{"bad", {"A"}, {"A"}};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(AccessLog, RecordsReads) {
  const auto root = fresh_dir("log");
  write_images(root / "train" / "good", 2);
  write_images(root / "test" / "bad", 2);
  const auto d = load_dataset(root);
  d.train.load(0);
  d.test.load(1);
  EXPECT_EQ(d.log->count_split(Split::Train), 1u);
  EXPECT_EQ(d.log->count_if(1), 1u);
}

TEST(PackedImage, RoundTrip) {
  Image img(5, 4, 3);
  Rng rng(1);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  quantize_8bit(img);
  BinaryMask fg(5, 4);
  fg.set(1, 1, true);
  img.set_foreground(fg);
  EXPECT_EQ(PackedImage::pack(img).unpack(), img);
}
