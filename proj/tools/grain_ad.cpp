// grain-ad command-line front end. Parses flags and the optional config
// file into a RunConfig and dispatches to the command layer.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grain_ad/commands.hpp"

namespace {

using grain_ad::ConfigError;

template <class T>
std::vector<T> parse_list(const std::string& text, const char* key) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::istringstream conv(item);
    T v{};
    if (!(conv >> v) || !conv.eof()) throw ConfigError(std::string("bad value in ") + key + ": " + item);
    out.push_back(v);
  }
  return out;
}

std::vector<std::pair<double, double>> parse_arms(const std::string& text) {
  std::vector<std::pair<double, double>> arms;
  for (const auto& a : parse_list<std::string>(text, "ablate_arms")) {
    const auto colon = a.find(':');
    if (colon == std::string::npos) throw ConfigError("ablation arm must be sigma:r, got " + a);
    const auto s = parse_list<double>(a.substr(0, colon), "ablate_arms");
    const auto r = parse_list<double>(a.substr(colon + 1), "ablate_arms");
    if (s.size() != 1 || r.size() != 1) throw ConfigError("ablation arm must be sigma:r, got " + a);
    arms.emplace_back(s[0], r[0]);
  }
  return arms;
}

}  // namespace

int main(int argc, char** argv) {
  grain_ad::RunConfig cfg;
  if (const char* root = std::getenv(grain_ad::kDataRootEnv)) cfg.data_root = root;

  CLI::App app{"grain-ad: grain kernel anomaly detection with image- and feature-level anomaly synthesis"};
  app.set_config("--config", "", "flat key = value config file; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  std::string defects = "spot,hole,discoloration";
  std::string stage_channels = "32,64,128,256";
  std::string fusion_stages = "3,4";
  std::string hidden = "128,128";
  std::string augmentation = "none";
  std::string arms = "0:0.2,0.025:0,0.025:0.2";
  std::string extractor_weights;
  auto& t = cfg.train;

  app.add_option("--data_root,--data", cfg.data_root, "dataset root (default: synthetic corpus or $GRAIN_AD_DATA_ROOT)");
  app.add_option("--layout", cfg.layout, "auto | folders | manifest")->check(CLI::IsMember({"auto", "folders", "manifest"}));
  app.add_option("--scheme", cfg.scheme, "labels | set1 | set2")->check(CLI::IsMember({"labels", "set1", "set2"}));
  app.add_option("--split_ratio", cfg.split_ratio, "train fraction of each normal category");
  app.add_option("--split_seed", cfg.split_seed);
  app.add_option("--corpus_seed", cfg.corpus_seed);
  app.add_option("--train_normals", cfg.corpus.train_normals);
  app.add_option("--test_normals", cfg.corpus.test_normals);
  app.add_option("--test_anomalies", cfg.corpus.test_anomalies);
  app.add_option("--defects", defects, "comma-separated defect types");
  app.add_option("--stage_channels", stage_channels);
  app.add_option("--patch_size", cfg.extractor.patch_size);
  app.add_option("--fusion_stages", fusion_stages);
  app.add_option("--extractor_seed", cfg.extractor.seed);
  app.add_option("--extractor_weights", extractor_weights, "weight file (default: seeded weights)");
  app.add_option("--lr", t.adam.learning_rate);
  app.add_option("--beta1", t.adam.beta1);
  app.add_option("--beta2", t.adam.beta2);
  app.add_option("--weight_decay", t.adam.weight_decay);
  app.add_option("--batch_size", t.batch_size);
  app.add_option("--epochs", t.epochs);
  app.add_option("--seed", t.seed);
  app.add_option("--sigma", t.sigma, "feature noise std (0 disables the feature branch)");
  app.add_option("--mu", t.mu);
  app.add_option("--r", t.max_area_ratio, "max anomaly area ratio (0 disables the image branch)");
  app.add_option("--mask_threshold", t.mask_threshold);
  app.add_option("--grid_period", t.grid_period);
  app.add_option("--octaves", t.octaves);
  app.add_option("--persistence", t.persistence);
  app.add_option("--beta_min", t.beta.lo);
  app.add_option("--beta_max", t.beta.hi);
  app.add_option("--hidden", hidden);
  app.add_flag("--fine_tune", t.fine_tune_extractor);
  app.add_option("--augmentation", augmentation)->check(CLI::IsMember({"none", "fliprot"}));
  app.add_option("--source_pool", t.source_pool, "procedural or a directory of PNGs");
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--model", cfg.models, "model file (repeat to ensemble)");
  app.add_option("--image", cfg.images, "image file to score (repeatable)");
  app.add_option("--synth_count", cfg.synth_count);
  app.add_option("--ablate_seeds", cfg.ablate_seeds);
  app.add_option("--ablate_arms", arms, "comma-separated sigma:r pairs");
  app.add_option("--threshold", cfg.threshold, "decision threshold for macro-F1");
  app.add_option("--workers", cfg.workers, "evaluation threads");

  app.add_subcommand("corpus", "write the synthetic corpus as a dataset tree");
  app.add_subcommand("synth", "write image-level anomaly synthesis previews");
  app.add_subcommand("train", "train a discriminator");
  app.add_subcommand("eval", "evaluate model(s) on the test split");
  app.add_subcommand("score", "score images or the test split");
  app.add_subcommand("ablate", "sigma/r ablation over several seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.corpus.defects.clear();
    for (const auto& d : parse_list<std::string>(defects, "defects")) cfg.corpus.defects.push_back(grain_ad::defect_from_string(d));
    cfg.extractor.stage_channels = parse_list<int>(stage_channels, "stage_channels");
    cfg.extractor.fusion_stages = parse_list<int>(fusion_stages, "fusion_stages");
    if (!extractor_weights.empty()) {
      cfg.extractor.weight_source = grain_ad::WeightSource::File;
      cfg.extractor.weights_file = extractor_weights;
    }
    t.hidden = parse_list<int>(hidden, "hidden");
    t.augmentation = augmentation == "fliprot" ? grain_ad::Augmentation::FlipRotate : grain_ad::Augmentation::None;
    cfg.ablate_arms = parse_arms(arms);
    cfg.extractor.validate();

    if (cfg.command == "corpus") grain_ad::cmd_corpus(cfg, std::cout);
    else if (cfg.command == "synth") grain_ad::cmd_synth(cfg, std::cout);
    else if (cfg.command == "train") grain_ad::cmd_train(cfg, std::cout);
    else if (cfg.command == "eval") grain_ad::cmd_eval(cfg, std::cout);
    else if (cfg.command == "score") grain_ad::cmd_score(cfg, std::cout);
    else if (cfg.command == "ablate") grain_ad::cmd_ablate(cfg, std::cout);
  } catch (const grain_ad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
