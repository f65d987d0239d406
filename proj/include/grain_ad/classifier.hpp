#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "grain_ad/error.hpp"
#include "grain_ad/extractor.hpp"
#include "grain_ad/feature_map.hpp"
#include "grain_ad/random.hpp"

namespace grain_ad {

inline constexpr double kProbabilityFloor = 1e-12;

/// Class indices of the two logits.
enum Label : int { kNormal = 0, kAnomalous = 1 };

template <class T>
struct Linear {
  RowMatrix<T> weight;  // out × in
  ColVector<T> bias;

  int in() const noexcept { return static_cast<int>(weight.cols()); }
  int out() const noexcept { return static_cast<int>(weight.rows()); }
};

/// Position-wise MLP: input -> [hidden, tanh]* -> 2 logits -> softmax.
template <class T>
class MlpClassifier {
 public:
  struct Trace {
    std::vector<RowMatrix<T>> activations;  // [0] is the input, then each hidden output
    RowMatrix<T> probs;                      // N × 2
  };

  struct Gradients {
    std::vector<RowMatrix<T>> weight;
    std::vector<ColVector<T>> bias;
    RowMatrix<T> input;  // dL/dX, filled only when requested
  };

  MlpClassifier() = default;
  explicit MlpClassifier(std::vector<Linear<T>> layers) : layers_(std::move(layers)) { check(); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static MlpClassifier initialized(int input_width, const std::vector<int>& hidden, std::uint64_t seed) {
    detail::require(input_width >= 1, "MlpClassifier: input width must be positive");
    Rng rng(seed);
    std::vector<Linear<T>> layers;
    int in = input_width;
    std::vector<int> widths = hidden;
    widths.push_back(2);
    for (int out : widths) {
      detail::require(out >= 1, "MlpClassifier: layer widths must be positive");
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Linear<T> l{RowMatrix<T>(out, in), ColVector<T>(out)};
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = static_cast<T>(rng.uniform(-bound, bound));
      layers.push_back(std::move(l));
      in = out;
    }
    return MlpClassifier(std::move(layers));
  }

  int input_width() const noexcept { return layers_.empty() ? 0 : layers_.front().in(); }
  const std::vector<Linear<T>>& layers() const noexcept { return layers_; }
  std::vector<Linear<T>>& layers() noexcept { return layers_; }

  std::vector<int> hidden_widths() const {
    std::vector<int> h;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h.push_back(layers_[i].out());
    return h;
  }

  template <class Derived>
  Trace forward(const Eigen::MatrixBase<Derived>& input) const {
    detail::require(input.cols() == input_width(), "classify: feature channels do not match classifier input width");
    Trace trace;
    trace.activations.reserve(layers_.size());
    trace.activations.emplace_back(input);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      RowMatrix<T> z = trace.activations.back() * layers_[i].weight.transpose();
      z.rowwise() += layers_[i].bias.transpose();
      trace.activations.push_back(z.array().tanh().matrix());
    }
    RowMatrix<T> logits = trace.activations.back() * layers_.back().weight.transpose();
    logits.rowwise() += layers_.back().bias.transpose();
    trace.probs = softmax_rows(logits);
    return trace;
  }

  /// Backpropagates dL/dlogits through the network.
  Gradients backward(const Trace& trace, const RowMatrix<T>& dlogits, bool want_input_grad = false) const {
    Gradients g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    RowMatrix<T> dz = dlogits;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& a_prev = trace.activations[k];
      g.weight[k] = dz.transpose() * a_prev;
      g.bias[k] = dz.colwise().sum().transpose();
      if (k == 0 && !want_input_grad) break;
      RowMatrix<T> da = dz * layers_[k].weight;
      if (k == 0) {
        g.input = std::move(da);
        break;
      }
      dz = (da.array() * (T{1} - a_prev.array().square())).matrix();
    }
    return g;
  }

  /// Flat views over every parameter, layer by layer, weight then bias.
  std::vector<std::span<T>> parameters() {
    std::vector<std::span<T>> p;
    for (auto& l : layers_) {
      p.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      p.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return p;
  }

  static std::vector<std::span<T>> gradient_views(Gradients& g) {
    std::vector<std::span<T>> p;
    for (std::size_t k = 0; k < g.weight.size(); ++k) {
      p.emplace_back(g.weight[k].data(), static_cast<std::size_t>(g.weight[k].size()));
      p.emplace_back(g.bias[k].data(), static_cast<std::size_t>(g.bias[k].size()));
    }
    return p;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  template <class U>
  MlpClassifier<U> cast() const {
    std::vector<Linear<U>> layers;
    for (const auto& l : layers_) layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    return MlpClassifier<U>(std::move(layers));
  }

  static RowMatrix<T> softmax_rows(const RowMatrix<T>& logits) {
    RowMatrix<T> p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const T m = logits.row(i).maxCoeff();
      T sum = 0;
      for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += (p(i, j) = std::exp(logits(i, j) - m));
      p.row(i) /= sum;
    }
    return p;
  }

 private:
  void check() const {
    detail::require(!layers_.empty(), "MlpClassifier: no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      detail::require(layers_[i].bias.size() == layers_[i].weight.rows(), "MlpClassifier: bias shape mismatch");
      if (i > 0) detail::require(layers_[i].in() == layers_[i - 1].out(), "MlpClassifier: layer shapes do not chain");
    }
    detail::require(layers_.back().out() == 2, "MlpClassifier: output layer must have 2 logits");
  }

  std::vector<Linear<T>> layers_;
};

/// Per-position class probabilities (channel 0 normal, channel 1 anomalous),
/// same spatial shape as `f`.
template <class T>
FeatureMap<T> classify(const FeatureMap<T>& f, const MlpClassifier<T>& model) {
  detail::require(f.channels() == model.input_width(), "classify: feature channels do not match classifier input width");
  Eigen::Map<const RowMatrix<T>> x(f.data(), f.positions(), f.channels());
  const auto trace = model.forward(x);
  FeatureMap<T> out(f.height(), f.width(), 2, f.stage());
  Eigen::Map<RowMatrix<T>>(out.data(), f.positions(), 2) = trace.probs;
  return out;
}

/// -log(max(p[target], 1e-12)) averaged over every row.
template <class T>
double mean_cross_entropy(const RowMatrix<T>& probs, std::span<const int> targets) {
  detail::require(static_cast<std::size_t>(probs.rows()) == targets.size(), "cross entropy: target count mismatch");
  detail::require(probs.rows() > 0, "cross entropy: no predictions");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    total -= std::log(std::max(static_cast<double>(probs(i, targets[static_cast<std::size_t>(i)])), kProbabilityFloor));
  return total / static_cast<double>(probs.rows());
}

/// Gradient of mean_cross_entropy w.r.t. the logits: (p - onehot) / N.
/// The floor is treated as inactive.
template <class T>
RowMatrix<T> cross_entropy_logit_grad(const RowMatrix<T>& probs, std::span<const int> targets) {
  RowMatrix<T> g = probs;
  for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, targets[static_cast<std::size_t>(i)]) -= T{1};
  return g / static_cast<T>(g.rows());
}

/// Objective over the three prediction grids: every position of preds_x
/// targets normal, every position of preds_n and preds_a targets anomalous;
/// the loss is the mean over all positions of all three grids.
template <class T>
double batch_loss(const FeatureMap<T>& preds_x, const FeatureMap<T>& preds_n, const FeatureMap<T>& preds_a) {
  detail::require(preds_x.height() == preds_n.height() && preds_x.width() == preds_n.width() &&
                      preds_x.height() == preds_a.height() && preds_x.width() == preds_a.width(),
                  "batch_loss: prediction grids differ in shape");
  detail::require(preds_x.channels() == 2 && preds_n.channels() == 2 && preds_a.channels() == 2,
                  "batch_loss: predictions must have 2 channels");
  const int n = preds_x.positions();
  RowMatrix<T> probs(3 * n, 2);
  std::vector<int> targets(static_cast<std::size_t>(3 * n));
  const FeatureMap<T>* grids[3] = {&preds_x, &preds_n, &preds_a};
  for (int g = 0; g < 3; ++g) {
    probs.middleRows(static_cast<Eigen::Index>(g) * n, n) = Eigen::Map<const RowMatrix<T>>(grids[g]->data(), n, 2);
    std::fill_n(targets.begin() + static_cast<std::ptrdiff_t>(g) * n, n, g == 0 ? kNormal : kAnomalous);
  }
  return mean_cross_entropy(probs, std::span<const int>(targets));
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.8;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay:
///   p <- p * (1 - lr*wd);  p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<std::span<T>>& params, const std::vector<std::span<T>>& grads) {
    detail::require(params.size() == grads.size(), "Adam: parameter/gradient count mismatch");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    detail::require(first_.size() == params.size(), "Adam: parameter layout changed");
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const double decay = 1.0 - cfg_.learning_rate * cfg_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& m = first_[k];
      auto& v = second_[k];
      const auto p = params[k];
      const auto g = grads[k];
      detail::require(p.size() == g.size() && p.size() == m.size(), "Adam: parameter shape changed");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        p[i] = static_cast<T>(static_cast<double>(p[i]) * decay - cfg_.learning_rate * update);
      }
    }
  }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_{};
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace grain_ad
