#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "grain_ad/classifier.hpp"

using namespace grain_ad;

namespace {

FeatureMap<double> random_map(int h, int w, int c, std::uint64_t seed) {
  FeatureMap<double> f(h, w, c);
  Rng rng(seed);
  for (double& v : f.values()) v = rng.uniform(-1.0, 1.0);
  return f;
}

FeatureMap<double> random_probs(int h, int w, Rng& rng) {
  FeatureMap<double> p(h, w, 2);
  for (int pos = 0; pos < p.positions(); ++pos) {
    const double a = rng.uniform(0.01, 0.99);
    p.data()[2 * pos] = 1.0 - a;
    p.data()[2 * pos + 1] = a;
  }
  return p;
}

MlpClassifier<double> zero_model(int in) {
  auto m = MlpClassifier<double>::initialized(in, {4}, 0);
  for (auto p : m.parameters()) std::fill(p.begin(), p.end(), 0.0);
  return m;
}

}  // namespace

TEST(Classify, ZeroModelIsUniform) {
  const auto probs = classify(random_map(3, 4, 6, 1), zero_model(6));
  for (double v : probs.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Classify, HandSetLogits) {
  Linear<double> l{RowMatrix<double>::Zero(2, 1), ColVector<double>::Zero(2)};
  l.weight(1, 0) = 2.0;
  const MlpClassifier<double> m({l});
  FeatureMap<double> f(1, 1, 1, 0, 1.0);
  const auto p = classify(f, m);
  EXPECT_NEAR(p.at(0, 0, 1), std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-12);
  EXPECT_NEAR(p.at(0, 0, 1), 0.8808, 1e-4);
}

TEST(Classify, ProbabilitiesSumToOneAndPositionWise) {
  const auto model = MlpClassifier<double>::initialized(5, {7, 3}, 2);
  const auto f = random_map(4, 3, 5, 3);
  const auto p = classify(f, model);
  for (int pos = 0; pos < p.positions(); ++pos) EXPECT_NEAR(p.vec(pos)[0] + p.vec(pos)[1], 1.0, 1e-12);

  // Reverse the positions: outputs reverse identically.
  FeatureMap<double> g(4, 3, 5);
  for (int pos = 0; pos < 12; ++pos)
    std::copy_n(f.vec(11 - pos).data(), 5, g.data() + pos * 5);
  const auto q = classify(g, model);
  for (int pos = 0; pos < 12; ++pos) EXPECT_EQ(q.vec(pos)[1], p.vec(11 - pos)[1]);
}

TEST(Classify, ChannelMismatch) {
  const auto model = MlpClassifier<double>::initialized(5, {4}, 0);
  EXPECT_THROW(classify(random_map(2, 2, 4, 0), model), InvalidArgument);
}

TEST(BatchLoss, ConfidentCorrectIsZero) {
  FeatureMap<double> px(2, 3, 2), pn(2, 3, 2), pa(2, 3, 2);
  for (int pos = 0; pos < 6; ++pos) {
    px.data()[2 * pos] = 1.0;
    pn.data()[2 * pos + 1] = 1.0;
    pa.data()[2 * pos + 1] = 1.0;
  }
  EXPECT_NEAR(batch_loss(px, pn, pa), 0.0, 1e-9);
}

TEST(BatchLoss, UniformIsLn2) {
  FeatureMap<double> p(3, 3, 2, 0, 0.5);
  EXPECT_NEAR(batch_loss(p, p, p), std::log(2.0), 1e-12);
}

TEST(BatchLoss, MatchesScalarReference) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(4)), w = 1 + static_cast<int>(rng.below(4));
    const auto px = random_probs(h, w, rng), pn = random_probs(h, w, rng), pa = random_probs(h, w, rng);
    double ref = 0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        ref -= std::log(px.at(r, c, 0));
        ref -= std::log(pn.at(r, c, 1));
        ref -= std::log(pa.at(r, c, 1));
      }
    ref /= 3.0 * h * w;
    EXPECT_NEAR(batch_loss(px, pn, pa), ref, 1e-9);
  }
}

TEST(BatchLoss, ClampsZeroProbability) {
  FeatureMap<double> px(1, 1, 2), ok(1, 1, 2);
  px.data()[1] = 1.0;  // normal grid predicted fully anomalous
  ok.data()[1] = 1.0;
  EXPECT_NEAR(batch_loss(px, ok, ok), -std::log(1e-12) / 3.0, 1e-9);
}

TEST(BatchLoss, ShapeMismatch) {
  FeatureMap<double> a(2, 2, 2), b(2, 3, 2);
  EXPECT_THROW(batch_loss(a, b, a), InvalidArgument);
}

TEST(Gradient, MatchesFiniteDifferences) {
  auto model = MlpClassifier<double>::initialized(3, {5, 4}, 7);
  const auto f = random_map(1, 2, 3, 8);
  Eigen::Map<const RowMatrix<double>> x(f.data(), 2, 3);
  const std::vector<int> targets{0, 1};
  auto loss = [&](const MlpClassifier<double>& m) { return mean_cross_entropy(m.forward(x).probs, std::span(targets)); };

  const auto trace = model.forward(x);
  auto grads = model.backward(trace, cross_entropy_logit_grad(trace.probs, std::span(targets)), true);
  auto views = MlpClassifier<double>::gradient_views(grads);
  auto params = model.parameters();
  const double h = 1e-4;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + h;
      const double up = loss(model);
      params[k][i] = saved - h;
      const double down = loss(model);
      params[k][i] = saved;
      const double fd = (up - down) / (2 * h);
      const double an = views[k][i];
      EXPECT_LT(std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)), 1e-4) << k << ":" << i;
    }

  // Input gradient.
  auto fx = f;
  for (std::size_t i = 0; i < fx.values().size(); ++i) {
    const double saved = fx.values()[i];
    Eigen::Map<RowMatrix<double>> xm(fx.data(), 2, 3);
    fx.values()[i] = saved + h;
    const double up = mean_cross_entropy(model.forward(xm).probs, std::span(targets));
    fx.values()[i] = saved - h;
    const double down = mean_cross_entropy(model.forward(xm).probs, std::span(targets));
    fx.values()[i] = saved;
    EXPECT_NEAR(grads.input.data()[i], (up - down) / (2 * h), 1e-7);
  }
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  auto model = MlpClassifier<double>::initialized(3, {4}, 1);
  const auto before = model.layers()[0].weight;
  AdamConfig cfg;
  cfg.learning_rate = 0.0;
  AdamOptimizer<double> opt(cfg);
  auto trace = model.forward(RowMatrix<double>::Ones(2, 3));
  const std::vector<int> t{0, 1};
  auto g = model.backward(trace, cross_entropy_logit_grad(trace.probs, std::span(t)));
  opt.step(model.parameters(), MlpClassifier<double>::gradient_views(g));
  EXPECT_EQ(model.layers()[0].weight, before);
}

TEST(Adam, FirstStepMatchesHandComputation) {
  std::vector<double> p{1.0, -2.0}, g{0.5, -0.25};
  AdamConfig cfg;
  AdamOptimizer<double> opt(cfg);
  opt.step({std::span(p)}, {std::span(g)});
  // Bias-corrected first step: update = g/|g| (up to eps).
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  EXPECT_NEAR(p[0], 1.0 * decay - cfg.learning_rate * 0.5 / (0.5 + cfg.epsilon), 1e-15);
  EXPECT_NEAR(p[1], -2.0 * decay + cfg.learning_rate * 0.25 / (0.25 + cfg.epsilon), 1e-15);
}

TEST(Adam, DecoupledDecayWithZeroGradient) {
  std::vector<double> p{3.0}, g{0.0};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  AdamOptimizer<double> opt(cfg);
  opt.step({std::span(p)}, {std::span(g)});
  EXPECT_DOUBLE_EQ(p[0], 3.0 * 0.95);
}
