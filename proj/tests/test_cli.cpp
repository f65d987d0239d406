#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grain_ad/metrics.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kSmall =
    " --train_normals 6 --test_normals 3 --test_anomalies 3 --stage_channels 4,6,8,10 --hidden 8,8"
    " --batch_size 4";
const std::string kOneEpoch = " --epochs 1" + kSmall;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "grain_ad_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(GRAIN_AD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> tsv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

double json_number(const std::string& json, const std::string& key) {
  const auto at = json.find("\"" + key + "\":");
  EXPECT_NE(at, std::string::npos) << key;
  return std::stod(json.substr(at + key.size() + 3));
}

}  // namespace

TEST(Cli, UsageErrors) {
  const auto dir = fresh_dir("usage");
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("train --no_such_flag 1"), 0);
  std::ofstream(dir / "bad.toml") << "epochs = 1\nno_such_key = 3\n";
  EXPECT_NE(run("--config " + (dir / "bad.toml").string() + " train --out " + dir.string()), 0);
  EXPECT_FALSE(fs::exists(dir / "model.gadm"));
  EXPECT_EQ(run("eval --out " + dir.string()), 2);
  EXPECT_EQ(run("train --out " + dir.string() + " --train_normals 0"), 2);
}

TEST(Cli, FlagsOverrideConfig) {
  const auto dir = fresh_dir("precedence");
  std::ofstream(dir / "run.toml") << "epochs = 5\nseed = 9\nlr = 0.5\n";
  ASSERT_EQ(run("--config " + (dir / "run.toml").string() + " train --epochs 0 --out " + dir.string() + kSmall), 0);
  const auto log = slurp(dir / "train_log.txt");
  EXPECT_NE(log.find("epochs = 0\n"), std::string::npos);
  EXPECT_NE(log.find("seed = 9\n"), std::string::npos);
  EXPECT_NE(log.find("lr = 0.5\n"), std::string::npos);
  EXPECT_NE(log.find("loss_trend = not-decreasing"), std::string::npos);
}

TEST(Cli, SynthWithZeroRatioLeavesImagesUnchanged) {
  const auto dir = fresh_dir("synth_r0");
  ASSERT_EQ(run("synth --r 0 --synth_count 3 --out " + dir.string() + kOneEpoch), 0);
  for (const char* stem : {"0000", "0001", "0002"})
    EXPECT_EQ(slurp(dir / "synth" / (std::string(stem) + "_x.png")), slurp(dir / "synth" / (std::string(stem) + "_n.png")));
  for (const auto& row : tsv_rows(dir / "synth" / "synth.tsv")) EXPECT_EQ(row.at(2), "0");
}

TEST(Cli, SynthMaskRespectsAreaRatio) {
  const auto dir = fresh_dir("synth_r");
  ASSERT_EQ(run("synth --r 0.2 --synth_count 6 --out " + dir.string() + kOneEpoch), 0);
  const auto rows = tsv_rows(dir / "synth" / "synth.tsv");
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& row : rows) EXPECT_LE(std::stod(row.at(2)), 0.2 * std::stod(row.at(3)));
  const auto again = fresh_dir("synth_r_again");
  ASSERT_EQ(run("synth --r 0.2 --synth_count 6 --out " + again.string() + kOneEpoch), 0);
  for (const auto& e : fs::directory_iterator(dir / "synth"))
    EXPECT_EQ(slurp(e.path()), slurp(again / "synth" / e.path().filename())) << e.path();
}

TEST(Cli, TrainEvalIsReproducibleAndConsistent) {
  const auto a = fresh_dir("run_a");
  const auto b = fresh_dir("run_b");
  ASSERT_EQ(run("train --out " + a.string() + kOneEpoch), 0);
  ASSERT_EQ(run("train --out " + b.string() + kOneEpoch), 0);
  EXPECT_EQ(slurp(a / "model.gadm"), slurp(b / "model.gadm"));
  const auto model = (a / "model.gadm").string();
  ASSERT_EQ(run("eval --model " + model + " --out " + a.string() + kOneEpoch), 0);
  ASSERT_EQ(run("eval --model " + model + " --out " + b.string() + kOneEpoch), 0);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "scores.tsv"), slurp(b / "scores.tsv"));

  const auto report = slurp(a / "report.json");
  const auto items = grain_ad::parse_score_table(slurp(a / "scores.tsv"));
  ASSERT_EQ(items.size(), 6u);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& it : items) {
    scores.push_back(it.score);
    labels.push_back(it.label);
  }
  EXPECT_NEAR(json_number(report, "auroc"), grain_ad::auroc_bruteforce(scores, labels), 1e-12);

  const auto ens = fresh_dir("run_ens");
  ASSERT_EQ(run("eval --model " + model + " --model " + model + " --out " + ens.string() + kOneEpoch), 0);
  EXPECT_DOUBLE_EQ(json_number(slurp(ens / "report.json"), "auroc"), json_number(report, "auroc"));
  EXPECT_EQ(json_number(slurp(ens / "report.json"), "ensemble_members"), 2.0);
}

TEST(Cli, ScoreWritesOneLinePerImage) {
  const auto dir = fresh_dir("score");
  ASSERT_EQ(run("train --epochs 0 --out " + dir.string() + kSmall), 0);
  ASSERT_EQ(run("synth --synth_count 2 --out " + dir.string() + kOneEpoch), 0);
  const auto model = (dir / "model.gadm").string();
  ASSERT_EQ(run("score --model " + model + " --image " + (dir / "synth" / "0000_x.png").string() + " --image " +
                (dir / "synth" / "0001_n.png").string() + " --out " + dir.string() + kOneEpoch),
            0);
  const auto rows = tsv_rows(dir / "scores.tsv");
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) EXPECT_NEAR(std::stod(row.at(1)), 0.5, 0.5);
  EXPECT_EQ(run("score --model " + (dir / "missing.gadm").string() + " --out " + dir.string() + kOneEpoch), 1);
}

TEST(Cli, AblationRejectsUnsupervisedArm) {
  const auto dir = fresh_dir("ablate_bad");
  EXPECT_EQ(run("ablate --ablate_arms 0:0,0.025:0.2 --out " + dir.string() + kOneEpoch), 2);
  EXPECT_FALSE(fs::exists(dir / "ablation.tsv"));
}

TEST(Cli, AblationTable) {
  const auto dir = fresh_dir("ablate");
  ASSERT_EQ(run("ablate --ablate_seeds 2 --ablate_arms 0:0.2,0.025:0,0.025:0.2 --out " + dir.string() + kOneEpoch), 0);
  const auto rows = tsv_rows(dir / "ablation.tsv");
  ASSERT_EQ(rows.size(), 9u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].at(3), std::to_string(i % 2));
    const double v = std::stod(rows[i].at(4));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t i = 6; i < 9; ++i) {
    EXPECT_EQ(rows[i].at(3), "median");
    const double lo = std::min(std::stod(rows[2 * (i - 6)].at(4)), std::stod(rows[2 * (i - 6) + 1].at(4)));
    const double hi = std::max(std::stod(rows[2 * (i - 6)].at(4)), std::stod(rows[2 * (i - 6) + 1].at(4)));
    EXPECT_GE(std::stod(rows[i].at(4)), lo);
    EXPECT_LE(std::stod(rows[i].at(4)), hi);
  }
}
