#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/image.hpp"
#include "grain_ad/png_io.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

enum class Split : std::uint8_t { Train, Test, Unassigned };

inline const char* to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

/// 8-bit image kept in memory by the synthetic corpus.
struct PackedImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
  std::optional<BinaryMask> foreground;

  static PackedImage pack(const Image& img) {
    PackedImage p{img.width(), img.height(), img.channels(), std::vector<std::uint8_t>(img.values().size()),
                  img.foreground()};
    auto v = img.values();
    for (std::size_t i = 0; i < p.bytes.size(); ++i)
      p.bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0f, 1.0f) * 255.0f));
    return p;
  }

  Image unpack() const {
    Image img(width, height, channels);
    auto v = img.values();
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<float>(bytes[i]) / 255.0f;
    if (foreground) img.set_foreground(*foreground);
    return img;
  }
};

struct DatasetItem {
  std::string id;
  int label = 0;  // 0 normal, 1 anomalous
  std::string category;
  std::filesystem::path image_path;                 // empty for in-memory items
  std::optional<std::filesystem::path> mask_path;
  std::shared_ptr<const PackedImage> payload;       // in-memory items
};

/// Records every image read made through a Dataset.
class AccessLog {
 public:
  struct Record {
    std::string id;
    int label;
    Split split;
  };

  void record(const DatasetItem& item, Split split) {
    std::lock_guard lock(mutex_);
    records_.push_back({item.id, item.label, split});
  }

  std::vector<Record> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

  std::size_t count_if(int label) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const Record& r) { return r.label == label; }));
  }

  std::size_t count_split(Split split) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const Record& r) { return r.split == split; }));
  }

  void clear() {
    std::lock_guard lock(mutex_);
    records_.clear();
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Record> records_;
};

/// An ordered list of items belonging to one split. A train split may only
/// hold normal items. Every image read goes through load(), which logs it.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Split split, std::vector<DatasetItem> items, std::shared_ptr<AccessLog> log = std::make_shared<AccessLog>())
      : split_(split), items_(std::move(items)), log_(std::move(log)) {
    if (split_ == Split::Train) {
      for (const auto& it : items_)
        if (it.label != 0) throw DataError("train split may only contain normal items: " + it.id);
    }
  }

  Split split() const noexcept { return split_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const DatasetItem& item(std::size_t i) const { return items_.at(i); }
  const std::vector<DatasetItem>& items() const noexcept { return items_; }
  const std::shared_ptr<AccessLog>& log() const noexcept { return log_; }
  void set_log(std::shared_ptr<AccessLog> log) { log_ = std::move(log); }

  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [&](const DatasetItem& it) { return it.label == label; }));
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& it : items_) out.push_back(it.label);
    return out;
  }

  /// Reads item i at the working resolution (foreground attached when known).
  Image load(std::size_t i) const {
    const auto& it = items_.at(i);
    if (log_) log_->record(it, split_);
    Image img;
    if (it.payload) {
      img = it.payload->unpack();
    } else {
      img = read_png(it.image_path);
      if (it.mask_path) {
        auto mask = read_mask_png(*it.mask_path);
        if (mask.width() != img.width() || mask.height() != img.height())
          throw DataError("mask dimensions do not match image: " + it.mask_path->string());
        img.set_foreground(std::move(mask));
      }
    }
    return to_working_resolution(img);
  }

 private:
  Split split_ = Split::Unassigned;
  std::vector<DatasetItem> items_;
  std::shared_ptr<AccessLog> log_;
};

enum class Layout { Auto, CategoryFolders, Manifest };

inline constexpr const char* kManifestName = "manifest.tsv";

/// Result of enumerating a dataset root: pre-split items land in train /
/// test, everything else in `unassigned` awaiting a subset scheme.
struct LoadedDataset {
  Dataset train;
  Dataset test;
  std::vector<DatasetItem> unassigned;
  std::shared_ptr<AccessLog> log;
};

/// Folder names that mean "normal" when no subset scheme is applied.
inline bool is_normal_category(const std::string& name) {
  return name == "good" || name == "healthy" || name == "HY" || name == "normal";
}

namespace detail {

inline void check_readable_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  if (!in || !in.read(reinterpret_cast<char*>(sig), 8) || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("unreadable image: " + path.string());
}

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png"))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// <root>/<prefix>/<category>/*.png with optional masks at
// <root>/masks/<prefix>/<category>/<same name>.
inline std::vector<DatasetItem> scan_category_folders(const std::filesystem::path& root,
                                                      const std::filesystem::path& prefix) {
  std::vector<DatasetItem> items;
  for (const auto& cat_dir : sorted_entries(root / prefix, true)) {
    const std::string category = cat_dir.filename().string();
    if (prefix.empty() && category == "masks") continue;
    for (const auto& file : sorted_entries(cat_dir, false)) {
      DatasetItem it;
      it.id = (prefix / category / file.filename()).generic_string();
      it.category = category;
      it.label = is_normal_category(category) ? 0 : 1;
      it.image_path = file;
      const auto mask = root / "masks" / prefix / category / file.filename();
      if (std::filesystem::is_regular_file(mask)) it.mask_path = mask;
      check_readable_png(file);
      if (it.mask_path) check_readable_png(*it.mask_path);
      items.push_back(std::move(it));
    }
  }
  return items;
}

inline std::vector<DatasetItem> read_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  std::vector<DatasetItem> items;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 3 || fields.size() > 4)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields");
    DatasetItem it;
    it.id = fields[0];
    if (fields[1] != "0" && fields[1] != "1")
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    it.label = fields[1] == "1" ? 1 : 0;
    it.category = fields[2];
    it.image_path = root / fields[0];
    if (fields.size() == 4 && !fields[3].empty()) it.mask_path = root / fields[3];
    check_readable_png(it.image_path);
    if (it.mask_path) check_readable_png(*it.mask_path);
    items.push_back(std::move(it));
  }
  std::sort(items.begin(), items.end(), [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });
  return items;
}

}  // namespace detail

/// Enumerates a dataset root.
///
/// Category folders: when <root>/train and <root>/test exist the tree is
/// pre-split (train/<cat>/*.png, test/<cat>/*.png); otherwise every
/// <root>/<cat>/ folder is an unassigned category. Folder names good,
/// healthy, HY and normal are label 0, anything else label 1. Foreground
/// masks are optional and mirror the image path under <root>/masks/.
///
/// Manifest: <root>/manifest.tsv, one record per line:
///   relative-image-path TAB label(0|1) TAB category [TAB relative-mask-path]
/// Blank lines and lines starting with '#' are ignored. Items are unassigned.
///
/// Items are ordered lexicographically by id.
inline LoadedDataset load_dataset(const std::filesystem::path& root, Layout layout = Layout::Auto) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) throw DataError("dataset root does not exist: " + root.string());
  if (layout == Layout::Auto)
    layout = std::filesystem::is_regular_file(root / kManifestName) ? Layout::Manifest : Layout::CategoryFolders;

  LoadedDataset out;
  out.log = std::make_shared<AccessLog>();
  std::vector<DatasetItem> train, test;
  if (layout == Layout::Manifest) {
    out.unassigned = detail::read_manifest(root);
  } else if (std::filesystem::is_directory(root / "train") && std::filesystem::is_directory(root / "test")) {
    train = detail::scan_category_folders(root, "train");
    test = detail::scan_category_folders(root, "test");
  } else {
    out.unassigned = detail::scan_category_folders(root, "");
  }
  if (train.empty() && test.empty() && out.unassigned.empty())
    throw DataError("dataset root contains no images: " + root.string());
  for (const auto& it : train)
    if (it.label != 0) throw DataError("anomalous item found under train/: " + it.id);
  out.train = Dataset(Split::Train, std::move(train), out.log);
  out.test = Dataset(Split::Test, std::move(test), out.log);
  return out;
}

/// Which categories count as normal and which as anomalous.
struct SubsetScheme {
  std::string name;
  std::set<std::string> normal;
  std::set<std::string> anomalous;

  /// Only healthy grains are normal.
  static SubsetScheme set1() {
    return {"set1", {"HY"}, {"BN", "AP", "BP", "HD", "SD", "FS", "MY", "IM"}};
  }
  /// Healthy plus the edible damaged categories are normal.
  static SubsetScheme set2() {
    return {"set2", {"HY", "BN", "AP", "BP", "HD"}, {"SD", "FS", "MY", "IM"}};
  }

  static SubsetScheme by_name(const std::string& name) {
    if (name == "set1") return set1();
    if (name == "set2") return set2();
    throw ConfigError("unknown subset scheme: " + name);
  }

  /// Normal = the usual good/healthy folder names, every other listed
  /// category anomalous.
  static SubsetScheme from_items(const std::vector<DatasetItem>& items) {
    SubsetScheme s{"labels", {}, {}};
    for (const auto& it : items) (it.label == 0 ? s.normal : s.anomalous).insert(it.category);
    return s;
  }

  void validate() const {
    for (const auto& c : normal)
      if (anomalous.count(c)) throw ConfigError("subset scheme " + name + ": category in both sets: " + c);
  }
};

/// Relabels items by `scheme` and splits them. Normal items are split per
/// category at `split_ratio` (floor per category; the remainder needed to
/// reach round(ratio * total) goes to categories picked in seeded order).
/// Every anomalous item goes to test. Within a split, input order is kept.
inline std::pair<Dataset, Dataset> apply_subset_scheme(std::vector<DatasetItem> items, const SubsetScheme& scheme,
                                                       double split_ratio, std::uint64_t seed,
                                                       std::shared_ptr<AccessLog> log = std::make_shared<AccessLog>()) {
  scheme.validate();
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split ratio must lie in (0,1)");

  std::map<std::string, std::vector<std::size_t>> normal_by_category;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& it = items[i];
    if (scheme.normal.count(it.category)) {
      it.label = 0;
      normal_by_category[it.category].push_back(i);
    } else if (scheme.anomalous.count(it.category)) {
      it.label = 1;
    } else {
      throw ConfigError("category '" + it.category + "' is not covered by subset scheme " + scheme.name);
    }
  }

  Rng rng(derive_seed(seed, 0x5B117u));
  std::size_t total_normals = 0;
  std::vector<std::string> with_fraction;
  std::map<std::string, std::size_t> quota;
  for (const auto& [cat, idx] : normal_by_category) {
    total_normals += idx.size();
    const double exact = split_ratio * static_cast<double>(idx.size());
    quota[cat] = static_cast<std::size_t>(std::floor(exact));
    if (exact - std::floor(exact) > 0.0) with_fraction.push_back(cat);
  }
  std::size_t assigned = 0;
  for (const auto& [cat, q] : quota) assigned += q;
  const auto target = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(total_normals)));
  rng.shuffle(with_fraction);
  for (std::size_t k = 0; assigned < target && k < with_fraction.size(); ++k, ++assigned) ++quota[with_fraction[k]];

  std::vector<bool> to_train(items.size(), false);
  for (auto& [cat, idx] : normal_by_category) {
    std::vector<std::size_t> order = idx;
    rng.shuffle(order);
    for (std::size_t k = 0; k < quota[cat]; ++k) to_train[order[k]] = true;
  }

  std::vector<DatasetItem> train, test;
  for (std::size_t i = 0; i < items.size(); ++i) (to_train[i] ? train : test).push_back(std::move(items[i]));
  return {Dataset(Split::Train, std::move(train), log), Dataset(Split::Test, std::move(test), log)};
}

}  // namespace grain_ad
