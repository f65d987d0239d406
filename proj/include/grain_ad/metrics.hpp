#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "grain_ad/dataset.hpp"
#include "grain_ad/discriminator.hpp"
#include "grain_ad/error.hpp"

namespace grain_ad {

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "metric: scores and labels differ in length");
  for (int y : labels) require(y == 0 || y == 1, "metric: labels must be 0 or 1");
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {labels.size() - pos, pos};
}

}  // namespace detail

/// Rank-based AUROC (Mann-Whitney U with mid-ranks for ties): the
/// probability that a random anomalous item outscores a random normal one,
/// ties counting one half.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto [neg, pos] = detail::class_counts(labels);
  if (neg == 0 || pos == 0) throw UndefinedMetric("auroc: both classes must be present");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of doubled ranks of positives keeps everything integral.
  std::uint64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const std::uint64_t doubled_mid_rank = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] == 1) doubled_rank_sum += doubled_mid_rank;
    i = j + 1;
  }
  const std::uint64_t doubled_u = doubled_rank_sum - static_cast<std::uint64_t>(pos) * (pos + 1);
  return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  return auroc(std::span<const double>(scores), std::span<const int>(labels));
}

/// O(n^2) pair enumeration; wins and ties counted in exact integers.
inline double auroc_bruteforce(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto [neg, pos] = detail::class_counts(labels);
  if (neg == 0 || pos == 0) throw UndefinedMetric("auroc: both classes must be present");
  std::uint64_t doubled = 0;
  for (std::size_t a = 0; a < scores.size(); ++a) {
    if (labels[a] != 1) continue;
    for (std::size_t n = 0; n < scores.size(); ++n) {
      if (labels[n] != 0) continue;
      if (scores[a] > scores[n]) doubled += 2;
      else if (scores[a] == scores[n]) doubled += 1;
    }
  }
  return static_cast<double>(doubled) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auroc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
  return auroc_bruteforce(std::span<const double>(scores), std::span<const int>(labels));
}

inline constexpr double kDefaultDecisionThreshold = 0.3;

struct ConfusionCounts {
  std::size_t true_negative = 0, false_positive = 0, false_negative = 0, true_positive = 0;
  std::size_t total() const noexcept { return true_negative + false_positive + false_negative + true_positive; }
};

/// Predictions are score > threshold (anomalous).
inline ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                                 double threshold = kDefaultDecisionThreshold) {
  detail::check_scores(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1) (predicted ? c.true_positive : c.false_negative)++;
    else (predicted ? c.false_positive : c.true_negative)++;
  }
  return c;
}

/// Unweighted mean of the F1 of class 0 and class 1 (a class whose
/// precision + recall is 0 contributes 0).
inline double macro_f1(std::span<const double> scores, std::span<const int> labels,
                       double threshold = kDefaultDecisionThreshold) {
  const auto c = confusion(scores, labels, threshold);
  auto f1 = [](double tp, double fp, double fn) {
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  };
  const double f1_pos = f1(static_cast<double>(c.true_positive), static_cast<double>(c.false_positive),
                           static_cast<double>(c.false_negative));
  const double f1_neg = f1(static_cast<double>(c.true_negative), static_cast<double>(c.false_negative),
                           static_cast<double>(c.false_positive));
  return 0.5 * (f1_pos + f1_neg);
}

inline double macro_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = kDefaultDecisionThreshold) {
  return macro_f1(std::span<const double>(scores), std::span<const int>(labels), threshold);
}

struct ScoredItem {
  std::string id;
  double score = 0.0;
  int label = 0;
};

struct EvalReport {
  std::vector<ScoredItem> items;
  double auroc = 0.5;
  double macro_f1 = 0.0;
  double threshold = kDefaultDecisionThreshold;
  ConfusionCounts counts;
  std::size_t ensemble_members = 1;
  double wall_clock_seconds = 0.0;

  std::vector<double> scores() const {
    std::vector<double> s;
    for (const auto& it : items) s.push_back(it.score);
    return s;
  }
  std::vector<int> labels() const {
    std::vector<int> l;
    for (const auto& it : items) l.push_back(it.label);
    return l;
  }

  /// Structured summary. Timing is left out so identical inputs give
  /// identical bytes; it is written separately.
  std::string to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "grain-ad eval report v1";
    j["items"] = items.size();
    j["positives"] = counts.true_positive + counts.false_negative;
    j["ensemble_members"] = ensemble_members;
    j["auroc"] = auroc;
    j["macro_f1"] = macro_f1;
    j["threshold"] = threshold;
    j["confusion"] = {{"true_negative", counts.true_negative},
                      {"false_positive", counts.false_positive},
                      {"false_negative", counts.false_negative},
                      {"true_positive", counts.true_positive}};
    return j.dump(2) + "\n";
  }

  /// Tab-separated id, score, label with a header line; scores printed
  /// with 17 significant digits so they parse back exactly.
  std::string score_table() const {
    std::ostringstream out;
    out << "id\tscore\tlabel\n";
    out << std::setprecision(17);
    for (const auto& it : items) out << it.id << '\t' << it.score << '\t' << it.label << '\n';
    return out.str();
  }
};

/// Parses a table written by EvalReport::score_table.
inline std::vector<ScoredItem> parse_score_table(const std::string& text) {
  std::vector<ScoredItem> items;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoredItem it;
    std::string score, label;
    if (!std::getline(ls, it.id, '\t') || !std::getline(ls, score, '\t') || !std::getline(ls, label))
      throw DataError("malformed score table line: " + line);
    it.score = std::stod(score);
    it.label = std::stoi(label);
    items.push_back(std::move(it));
  }
  return items;
}

/// Scores every test item with each model (the mean is taken when more
/// than one model is given), then computes the metrics. Scoring may use
/// `workers` threads; results are gathered in item order.
inline EvalReport evaluate(const std::vector<const DiscriminatorModel*>& models, const Dataset& test,
                           double threshold = kDefaultDecisionThreshold, unsigned workers = 1) {
  detail::require(!models.empty(), "evaluate: no models");
  if (test.empty()) throw DataError("evaluate: empty test set");
  const auto start = std::chrono::steady_clock::now();

  EvalReport report;
  report.threshold = threshold;
  report.ensemble_members = models.size();
  report.items.resize(test.size());
  auto score_range = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < test.size(); i += stride) {
      const Image img = test.load(i);
      std::vector<AnomalyScore> members;
      for (const auto* m : models) members.push_back(anomaly_score(img, *m, test.item(i).id));
      report.items[i] = {test.item(i).id, ensemble_score(members), test.item(i).label};
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(test.size())));
  if (workers == 1) {
    score_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(score_range, w, workers);
    for (auto& t : pool) t.join();
  }

  const auto scores = report.scores();
  const auto labels = report.labels();
  report.auroc = auroc(scores, labels);
  report.macro_f1 = macro_f1(scores, labels, threshold);
  report.counts = confusion(scores, labels, threshold);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline EvalReport evaluate(const DiscriminatorModel& model, const Dataset& test,
                           double threshold = kDefaultDecisionThreshold, unsigned workers = 1) {
  return evaluate(std::vector<const DiscriminatorModel*>{&model}, test, threshold, workers);
}

}  // namespace grain_ad
