#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grain_ad/corpus.hpp"
#include "grain_ad/dataset.hpp"
#include "grain_ad/discriminator.hpp"
#include "grain_ad/metrics.hpp"
#include "grain_ad/png_io.hpp"
#include "grain_ad/synth.hpp"

namespace grain_ad {

inline constexpr const char* kDataRootEnv = "GRAIN_AD_DATA_ROOT";

/// Everything a command needs. Each field has a default; the CLI fills it
/// from defaults < config file < flags.
struct RunConfig {
  std::string command;

  // data: a dataset root, or the synthetic corpus when empty
  std::string data_root;
  std::string layout = "auto";   // auto | folders | manifest
  std::string scheme = "labels"; // labels | set1 | set2 (unsplit roots only)
  double split_ratio = 0.7;
  std::uint64_t split_seed = 0;
  CorpusParams corpus{};
  std::uint64_t corpus_seed = 0;

  ExtractorSpec extractor{};
  TrainConfig train{};

  std::string out = "out";
  std::vector<std::string> models;
  std::vector<std::string> images;
  int synth_count = 8;
  int ablate_seeds = 3;
  std::vector<std::pair<double, double>> ablate_arms{{0.0, 0.2}, {0.025, 0.0}, {0.025, 0.2}};  // (sigma, r)
  double threshold = kDefaultDecisionThreshold;
  unsigned workers = 1;

  /// The effective configuration as key = value lines (also valid config
  /// file input).
  std::string describe() const;
};

namespace detail {

template <class T>
std::string join(const std::vector<T>& v, const char* sep = ",") {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? sep : "") << v[i];
  return out.str();
}

inline std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline void ensure_out_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create output directory: " + dir.string());
  const auto probe = dir / ".write-probe";
  {
    std::ofstream p(probe);
    if (!p) throw Error("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

inline const char* to_string(Augmentation a) { return a == Augmentation::FlipRotate ? "fliprot" : "none"; }

}  // namespace detail

inline std::string RunConfig::describe() const {
  std::ostringstream o;
  o << std::setprecision(17);
  std::vector<std::string> defect_names;
  for (auto d : corpus.defects) defect_names.emplace_back(to_string(d));
  std::vector<std::string> arms;
  for (auto [s, r] : ablate_arms) arms.push_back(detail::fmt(s) + ":" + detail::fmt(r));
  o << "data_root = \"" << data_root << "\"\n"
    << "layout = \"" << layout << "\"\n"
    << "scheme = \"" << scheme << "\"\n"
    << "split_ratio = " << split_ratio << "\n"
    << "split_seed = " << split_seed << "\n"
    << "corpus_seed = " << corpus_seed << "\n"
    << "train_normals = " << corpus.train_normals << "\n"
    << "test_normals = " << corpus.test_normals << "\n"
    << "test_anomalies = " << corpus.test_anomalies << "\n"
    << "defects = \"" << detail::join(defect_names) << "\"\n"
    << "stage_channels = \"" << detail::join(extractor.stage_channels) << "\"\n"
    << "patch_size = " << extractor.patch_size << "\n"
    << "fusion_stages = \"" << detail::join(extractor.fusion_stages) << "\"\n"
    << "extractor_seed = " << extractor.seed << "\n"
    << "extractor_weights = \"" << extractor.weights_file.generic_string() << "\"\n"
    << "lr = " << train.adam.learning_rate << "\n"
    << "beta1 = " << train.adam.beta1 << "\n"
    << "beta2 = " << train.adam.beta2 << "\n"
    << "weight_decay = " << train.adam.weight_decay << "\n"
    << "batch_size = " << train.batch_size << "\n"
    << "epochs = " << train.epochs << "\n"
    << "seed = " << train.seed << "\n"
    << "sigma = " << train.sigma << "\n"
    << "mu = " << train.mu << "\n"
    << "r = " << train.max_area_ratio << "\n"
    << "mask_threshold = " << train.mask_threshold << "\n"
    << "grid_period = " << train.grid_period << "\n"
    << "octaves = " << train.octaves << "\n"
    << "persistence = " << train.persistence << "\n"
    << "beta_min = " << train.beta.lo << "\n"
    << "beta_max = " << train.beta.hi << "\n"
    << "hidden = \"" << detail::join(train.hidden) << "\"\n"
    << "fine_tune = " << (train.fine_tune_extractor ? "true" : "false") << "\n"
    << "augmentation = \"" << detail::to_string(train.augmentation) << "\"\n"
    << "source_pool = \"" << train.source_pool << "\"\n"
    << "synth_count = " << synth_count << "\n"
    << "ablate_seeds = " << ablate_seeds << "\n"
    << "ablate_arms = \"" << detail::join(arms) << "\"\n"
    << "threshold = " << threshold << "\n";
  return o.str();
}

/// Train and test splits for a run: the synthetic corpus when no data root
/// is configured, otherwise the dataset tree (split by the subset scheme
/// when it is not pre-split).
inline std::pair<Dataset, Dataset> resolve_data(const RunConfig& cfg) {
  if (cfg.data_root.empty()) return generate_synthetic_corpus(cfg.corpus, cfg.corpus_seed);
  Layout layout = Layout::Auto;
  if (cfg.layout == "folders") layout = Layout::CategoryFolders;
  else if (cfg.layout == "manifest") layout = Layout::Manifest;
  else if (cfg.layout != "auto") throw ConfigError("unknown layout: " + cfg.layout);
  auto loaded = load_dataset(cfg.data_root, layout);
  if (loaded.unassigned.empty()) return {std::move(loaded.train), std::move(loaded.test)};
  const auto scheme = cfg.scheme == "labels" ? SubsetScheme::from_items(loaded.unassigned) : SubsetScheme::by_name(cfg.scheme);
  return apply_subset_scheme(std::move(loaded.unassigned), scheme, cfg.split_ratio, cfg.split_seed, loaded.log);
}

struct SynthSample {
  std::size_t mask_area = 0;
  std::size_t foreground_area = 0;
  double beta = 0.0;
  bool degenerate = false;
};

/// Writes (I_x, I_a, M'_b, I_n) quadruples for the first synth_count train
/// images as <out>/synth/NNNN_{x,a,mask,n}.png plus synth.tsv.
inline std::vector<SynthSample> cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.train.validate();
  const std::filesystem::path dir = std::filesystem::path(cfg.out) / "synth";
  detail::ensure_out_dir(dir);
  auto [train, test] = resolve_data(cfg);
  const auto synth_cfg = cfg.train.synth_config(make_source_pool(cfg.train.source_pool));
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, cfg.synth_count)), train.size());

  std::vector<SynthSample> samples;
  std::ostringstream table;
  table << "index\tid\tmask_area\tforeground_area\tbeta\tdegenerate\n";
  for (std::size_t k = 0; k < n; ++k) {
    const Image i_x = train.load(k);
    Rng rng(derive_seed(cfg.train.seed, 0x5A17u, k));
    const auto res = synthesize_anomaly(i_x, synth_cfg, rng);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", k);
    write_png(dir / (std::string(stem) + "_x.png"), i_x);
    write_png(dir / (std::string(stem) + "_a.png"), res.source);
    write_mask_png(dir / (std::string(stem) + "_mask.png"), res.mask);
    write_png(dir / (std::string(stem) + "_n.png"), res.image);
    SynthSample s{res.mask.area(), i_x.foreground_or_full().area(), res.beta, res.degenerate};
    table << k << '\t' << train.item(k).id << '\t' << s.mask_area << '\t' << s.foreground_area << '\t'
          << detail::fmt(s.beta) << '\t' << (s.degenerate ? 1 : 0) << '\n';
    samples.push_back(s);
  }
  detail::write_text(dir / "synth.tsv", table.str());
  log << "wrote " << n << " synthesis samples to " << dir.string() << "\n";
  return samples;
}

struct TrainOutcome {
  std::filesystem::path model_path;
  std::vector<double> epoch_losses;
  bool loss_decreased = false;
};

/// data -> train -> <out>/model.gadm and <out>/train_log.txt. The log holds
/// the effective config, per-epoch mean loss and the loss trend flag.
inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.train.validate();
  const std::filesystem::path out(cfg.out);
  detail::ensure_out_dir(out);
  auto [train_set, test_set] = resolve_data(cfg);
  const auto result = train(train_set, cfg.extractor, cfg.train, [&](int epoch, double loss) {
    log << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " mean loss " << detail::fmt(loss) << "\n";
    log.flush();
  });
  TrainOutcome outcome;
  outcome.model_path = out / "model.gadm";
  outcome.epoch_losses = result.epoch_losses;
  outcome.loss_decreased = result.epoch_losses.size() >= 2 && result.epoch_losses.back() < result.epoch_losses.front();
  result.model.save(outcome.model_path);

  std::ostringstream text;
  text << "# grain-ad training log\n" << cfg.describe() << "train_items = " << train_set.size() << "\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
    text << "epoch_loss." << e + 1 << " = " << detail::fmt(result.epoch_losses[e]) << "\n";
  text << "loss_trend = " << (outcome.loss_decreased ? "decreasing" : "not-decreasing") << "\n";
  detail::write_text(out / "train_log.txt", text.str());
  log << "model written to " << outcome.model_path.string() << "\n";
  return outcome;
}

inline std::vector<DiscriminatorModel> load_models(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("no model file given (use --model)");
  std::vector<DiscriminatorModel> models;
  for (const auto& p : paths) models.push_back(DiscriminatorModel::load(p));
  return models;
}

/// Loads one or more models (several are ensembled by score averaging),
/// evaluates the test split and writes report.json, scores.tsv and
/// timing.txt under <out>.
inline EvalReport cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto models = load_models(cfg.models);
  const std::filesystem::path out(cfg.out);
  detail::ensure_out_dir(out);
  auto [train_set, test_set] = resolve_data(cfg);
  if (test_set.empty()) throw DataError("cannot evaluate: the test split is empty");
  if (test_set.count_label(0) == 0 || test_set.count_label(1) == 0)
    throw DataError("cannot evaluate: the test split needs both normal and anomalous items for AUROC");
  std::vector<const DiscriminatorModel*> members;
  for (const auto& m : models) members.push_back(&m);
  const auto report = evaluate(members, test_set, cfg.threshold, cfg.workers);
  detail::write_text(out / "report.json", report.to_json());
  detail::write_text(out / "scores.tsv", report.score_table());
  detail::write_text(out / "timing.txt", "wall_clock_seconds = " + detail::fmt(report.wall_clock_seconds) + "\n" +
                                             "items = " + std::to_string(report.items.size()) + "\n");
  log << "AUROC " << detail::fmt(report.auroc) << "  macro-F1@" << cfg.threshold << " " << detail::fmt(report.macro_f1)
      << "  (" << report.items.size() << " items, " << models.size() << " model(s), " << report.wall_clock_seconds
      << " s)\n";
  return report;
}

/// Scores the given image files (or the test split when none are given);
/// prints id/score lines and writes <out>/scores.tsv.
inline std::vector<ScoredItem> cmd_score(const RunConfig& cfg, std::ostream& log) {
  const auto models = load_models(cfg.models);
  std::vector<ScoredItem> scored;
  auto score_image = [&](const Image& img, const std::string& id, int label) {
    std::vector<AnomalyScore> members;
    for (const auto& m : models) members.push_back(anomaly_score(img, m, id));
    scored.push_back({id, ensemble_score(members), label});
  };
  if (!cfg.images.empty()) {
    for (const auto& path : cfg.images) score_image(to_working_resolution(read_png(path)), path, -1);
  } else {
    auto [train_set, test_set] = resolve_data(cfg);
    for (std::size_t i = 0; i < test_set.size(); ++i) score_image(test_set.load(i), test_set.item(i).id, test_set.item(i).label);
  }
  std::ostringstream table;
  table << "id\tscore\tlabel\n" << std::setprecision(17);
  for (const auto& s : scored) {
    table << s.id << '\t' << s.score << '\t' << s.label << '\n';
    log << s.id << '\t' << std::setprecision(6) << s.score << (s.score > cfg.threshold ? "\tanomalous" : "\tnormal") << "\n";
  }
  const std::filesystem::path out(cfg.out);
  detail::ensure_out_dir(out);
  detail::write_text(out / "scores.tsv", table.str());
  return scored;
}

struct AblationRow {
  double sigma = 0.0;
  double r = 0.0;
  std::uint64_t seed = 0;
  double auroc = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::pair<std::pair<double, double>, double>> medians;  // ((sigma, r), median auroc)

  double median_for(double sigma, double r) const {
    for (const auto& [arm, m] : medians)
      if (arm.first == sigma && arm.second == r) return m;
    throw InvalidArgument("no such ablation arm");
  }
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string arm_name(double sigma, double r) {
  if (sigma == 0.0) return "image-only";
  if (r == 0.0) return "feature-only";
  return "combined";
}

/// Trains and evaluates every (sigma, r) arm for ablate_seeds consecutive
/// seeds starting at cfg.train.seed, all on the same data. Writes
/// <out>/ablation.tsv: one row per arm and seed, then one median row per arm.
inline AblationTable cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  if (cfg.ablate_seeds < 1) throw ConfigError("ablate_seeds must be >= 1");
  if (cfg.ablate_arms.empty()) throw ConfigError("no ablation arms");
  for (auto [s, r] : cfg.ablate_arms)
    if (s == 0.0 && r == 0.0) throw ConfigError("ablation arm sigma = 0, r = 0 has no anomaly supervision");
  for (auto [s, r] : cfg.ablate_arms) {
    TrainConfig t = cfg.train;
    t.sigma = s;
    t.max_area_ratio = r;
    t.validate();
  }
  const std::filesystem::path out(cfg.out);
  detail::ensure_out_dir(out);
  auto [train_set, test_set] = resolve_data(cfg);

  AblationTable table;
  std::ostringstream text;
  text << "arm\tsigma\tr\tseed\tauroc\n";
  for (auto [sigma, r] : cfg.ablate_arms) {
    std::vector<double> aurocs;
    for (int k = 0; k < cfg.ablate_seeds; ++k) {
      TrainConfig t = cfg.train;
      t.sigma = sigma;
      t.max_area_ratio = r;
      t.seed = cfg.train.seed + static_cast<std::uint64_t>(k);
      const auto model = train(train_set, cfg.extractor, t).model;
      const auto report = evaluate(model, test_set, cfg.threshold, cfg.workers);
      table.rows.push_back({sigma, r, t.seed, report.auroc});
      aurocs.push_back(report.auroc);
      text << arm_name(sigma, r) << '\t' << detail::fmt(sigma) << '\t' << detail::fmt(r) << '\t' << t.seed << '\t'
           << detail::fmt(report.auroc) << '\n';
      log << arm_name(sigma, r) << " sigma=" << sigma << " r=" << r << " seed=" << t.seed << " AUROC " << report.auroc
          << "\n";
      log.flush();
    }
    table.medians.push_back({{sigma, r}, median(aurocs)});
  }
  for (const auto& [arm, m] : table.medians)
    text << arm_name(arm.first, arm.second) << '\t' << detail::fmt(arm.first) << '\t' << detail::fmt(arm.second)
         << "\tmedian\t" << detail::fmt(m) << '\n';
  detail::write_text(out / "ablation.tsv", text.str());
  return table;
}

/// Writes the synthetic corpus (or the resolved dataset) as a pre-split
/// category-folder tree under <out>.
inline void cmd_corpus(const RunConfig& cfg, std::ostream& log) {
  const std::filesystem::path out(cfg.out);
  detail::ensure_out_dir(out);
  auto [train_set, test_set] = resolve_data(cfg);
  write_dataset_tree(out, {&train_set, &test_set});
  log << "wrote " << train_set.size() << " train and " << test_set.size() << " test images to " << out.string() << "\n";
}

}  // namespace grain_ad
