#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grain_ad/augment.hpp"
#include "grain_ad/binary_io.hpp"
#include "grain_ad/classifier.hpp"
#include "grain_ad/dataset.hpp"
#include "grain_ad/error.hpp"
#include "grain_ad/extractor.hpp"
#include "grain_ad/feature_noise.hpp"
#include "grain_ad/feature_norm.hpp"
#include "grain_ad/synth.hpp"

namespace grain_ad {

inline constexpr const char* kLibraryVersion = "grain-ad 1.0.0";

/// Training hyperparameters. Defaults are the published regime: Adam with
/// momentum (0.8, 0.999), weight decay 1e-4, learning rate 1e-3, batch 4.
struct TrainConfig {
  AdamConfig adam{};
  int batch_size = 4;
  int epochs = 8;
  std::uint64_t seed = 0;

  double sigma = 0.025;          // feature-level noise std; 0 disables that branch
  double mu = 0.0;
  double max_area_ratio = 0.2;   // r; 0 disables the image-level branch
  double mask_threshold = 0.4;
  int grid_period = 16;
  int octaves = 1;
  double persistence = 0.5;
  BetaRange beta{};
  int resample_attempts = 5;

  std::vector<int> hidden{128, 128};
  bool fine_tune_extractor = false;
  Augmentation augmentation = Augmentation::None;
  std::string source_pool = "procedural";  // or a directory of PNGs

  bool image_branch() const noexcept { return max_area_ratio > 0.0; }
  bool feature_branch() const noexcept { return sigma > 0.0; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(adam.learning_rate >= 0.0)) fail("learning rate must be >= 0");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0))
      fail("Adam momentum components must lie in (0,1)");
    if (!(adam.weight_decay >= 0.0) || !(adam.epsilon > 0.0)) fail("weight decay must be >= 0 and epsilon > 0");
    if (batch_size < 1) fail("batch size must be positive");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(sigma >= 0.0)) fail("sigma must be >= 0");
    if (!(max_area_ratio >= 0.0 && max_area_ratio <= 1.0)) fail("r must lie in [0,1]");
    if (!image_branch() && !feature_branch())
      fail("sigma = 0 and r = 0 together leave no anomaly supervision");
    if (!(mask_threshold > -1.0 && mask_threshold < 1.0)) fail("mask threshold must lie in (-1,1)");
    if (grid_period < 1 || octaves < 1 || !(persistence > 0.0)) fail("invalid noise parameters");
    if (!(beta.lo >= 0.0 && beta.lo <= beta.hi && beta.hi <= 1.0)) fail("beta range must lie within [0,1]");
    if (resample_attempts < 1) fail("resample attempts must be >= 1");
    for (int h : hidden)
      if (h < 1) fail("hidden widths must be positive");
  }

  SynthConfig synth_config(std::shared_ptr<const SourcePool> pool) const {
    SynthConfig s;
    s.grid_period = grid_period;
    s.octaves = {octaves, persistence};
    s.threshold = mask_threshold;
    s.max_area_ratio = max_area_ratio;
    s.beta = beta;
    s.source = std::move(pool);
    return s;
  }

  bool operator==(const TrainConfig& o) const {
    return adam.learning_rate == o.adam.learning_rate && adam.beta1 == o.adam.beta1 && adam.beta2 == o.adam.beta2 &&
           adam.weight_decay == o.adam.weight_decay && adam.epsilon == o.adam.epsilon && batch_size == o.batch_size &&
           epochs == o.epochs && seed == o.seed && sigma == o.sigma && mu == o.mu &&
           max_area_ratio == o.max_area_ratio && mask_threshold == o.mask_threshold && grid_period == o.grid_period &&
           octaves == o.octaves && persistence == o.persistence && beta.lo == o.beta.lo && beta.hi == o.beta.hi &&
           resample_attempts == o.resample_attempts && hidden == o.hidden &&
           fine_tune_extractor == o.fine_tune_extractor && augmentation == o.augmentation &&
           source_pool == o.source_pool;
  }
};

inline std::shared_ptr<const SourcePool> make_source_pool(const std::string& description) {
  if (description.empty() || description == "procedural")
    return std::make_shared<const SourcePool>(SourcePool::procedural());
  return std::make_shared<const SourcePool>(SourcePool::directory(description));
}

inline constexpr char kModelMagic[5] = "GADM";
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// The trained artifact: extractor, feature normalizer, classifier and the
/// configuration that produced them.
struct DiscriminatorModel {
  Extractor<float> extractor;
  FeatureNormalizer normalizer;
  MlpClassifier<float> classifier;
  TrainConfig config;
  std::string version = kLibraryVersion;

  static DiscriminatorModel initialized(const ExtractorSpec& spec, const TrainConfig& config) {
    config.validate();
    DiscriminatorModel m;
    m.extractor = Extractor<float>(spec);
    m.normalizer = FeatureNormalizer::identity(spec.fused_channels());
    m.classifier = MlpClassifier<float>::initialized(spec.fused_channels(), config.hidden,
                                                     derive_seed(config.seed, 0xC1A55u));
    m.config = config;
    return m;
  }

  /// Normalized patch-aware features of an image at working resolution.
  FeatureMap<float> features(const Image& image) const { return normalizer(patch_features(image, extractor)); }

  /// Extractor weights are embedded unless they can be regenerated from
  /// the spec's seed.
  bool embeds_extractor() const noexcept {
    return extractor.spec().weight_source == WeightSource::File || config.fine_tune_extractor;
  }

  /// Model file, little-endian:
  ///   "GADM" u32 format-version, string library-version
  ///   extractor spec: u32 input-channels, u32 n, u32[n] stage channels,
  ///     u32 patch size, u32 m, u32[m] fusion stages, u8 weight source,
  ///     u64 seed, string weights path, u8 embedded [+ layer block]
  ///   normalizer: u32 channels, f32[c] mean, f32[c] inverse std
  ///   classifier: u32 layer count, per layer u32 out, u32 in,
  ///     f32[out*in] weights (row-major), f32[out] bias
  ///   train config: f64 lr, beta1, beta2, weight decay, epsilon;
  ///     u32 batch, u32 epochs, u64 seed; f64 sigma, mu, r, threshold;
  ///     u32 grid period, u32 octaves, f64 persistence, f64 beta lo, hi;
  ///     u32 resample attempts, u8 fine-tune, u8 augmentation,
  ///     string source pool
  /// Strings are u32 length + bytes.
  std::vector<unsigned char> serialize() const {
    binary::Writer w;
    w.put_magic(kModelMagic);
    w.put_u32(kModelFormatVersion);
    w.put_string(version);

    const auto& spec = extractor.spec();
    w.put_u32(static_cast<std::uint32_t>(spec.input_channels));
    w.put_u32(static_cast<std::uint32_t>(spec.stage_channels.size()));
    for (int c : spec.stage_channels) w.put_u32(static_cast<std::uint32_t>(c));
    w.put_u32(static_cast<std::uint32_t>(spec.patch_size));
    w.put_u32(static_cast<std::uint32_t>(spec.fusion_stages.size()));
    for (int s : spec.fusion_stages) w.put_u32(static_cast<std::uint32_t>(s));
    w.put_u8(static_cast<std::uint8_t>(spec.weight_source));
    w.put_u64(spec.seed);
    w.put_string(spec.weights_file.generic_string());
    w.put_u8(embeds_extractor() ? 1 : 0);
    if (embeds_extractor()) extractor.write_layers(w);

    w.put_u32(static_cast<std::uint32_t>(normalizer.channels()));
    w.put_f32_array(std::span<const float>(normalizer.mean));
    w.put_f32_array(std::span<const float>(normalizer.inv_std));

    w.put_u32(static_cast<std::uint32_t>(classifier.layers().size()));
    for (const auto& l : classifier.layers()) {
      w.put_u32(static_cast<std::uint32_t>(l.out()));
      w.put_u32(static_cast<std::uint32_t>(l.in()));
      w.put_f32_array(std::span<const float>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
      w.put_f32_array(std::span<const float>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
    }

    const auto& c = config;
    w.put_f64(c.adam.learning_rate);
    w.put_f64(c.adam.beta1);
    w.put_f64(c.adam.beta2);
    w.put_f64(c.adam.weight_decay);
    w.put_f64(c.adam.epsilon);
    w.put_u32(static_cast<std::uint32_t>(c.batch_size));
    w.put_u32(static_cast<std::uint32_t>(c.epochs));
    w.put_u64(c.seed);
    w.put_f64(c.sigma);
    w.put_f64(c.mu);
    w.put_f64(c.max_area_ratio);
    w.put_f64(c.mask_threshold);
    w.put_u32(static_cast<std::uint32_t>(c.grid_period));
    w.put_u32(static_cast<std::uint32_t>(c.octaves));
    w.put_f64(c.persistence);
    w.put_f64(c.beta.lo);
    w.put_f64(c.beta.hi);
    w.put_u32(static_cast<std::uint32_t>(c.resample_attempts));
    w.put_u8(c.fine_tune_extractor ? 1 : 0);
    w.put_u8(static_cast<std::uint8_t>(c.augmentation));
    w.put_string(c.source_pool);
    return w.bytes();
  }

  void save(const std::filesystem::path& path) const {
    binary::Writer w;
    const auto bytes = serialize();
    for (auto b : bytes) w.put_u8(b);
    w.save(path);
  }

  static DiscriminatorModel deserialize(binary::Reader& r) {
    r.expect_magic(kModelMagic);
    const auto format = r.get_u32();
    if (format != kModelFormatVersion)
      throw ModelLoadError(r.origin() + ": unsupported model format version " + std::to_string(format));
    DiscriminatorModel m;
    m.version = r.get_string();

    ExtractorSpec spec;
    spec.input_channels = static_cast<int>(r.get_u32());
    spec.stage_channels.resize(r.get_u32());
    for (int& c : spec.stage_channels) c = static_cast<int>(r.get_u32());
    spec.patch_size = static_cast<int>(r.get_u32());
    spec.fusion_stages.resize(r.get_u32());
    for (int& s : spec.fusion_stages) s = static_cast<int>(r.get_u32());
    const auto source = r.get_u8();
    if (source > 1) throw ModelLoadError(r.origin() + ": bad weight source tag");
    spec.weight_source = static_cast<WeightSource>(source);
    spec.seed = r.get_u64();
    spec.weights_file = r.get_string();
    const bool embedded = r.get_u8() != 0;
    try {
      spec.validate();
    } catch (const InvalidArgument& e) {
      throw ModelLoadError(r.origin() + ": " + e.what());
    }
    if (embedded) {
      ExtractorSpec seeded = spec;
      seeded.weight_source = WeightSource::SeededFixed;
      Extractor<float> shape_only(seeded);
      auto layers = shape_only.read_layers(r);
      m.extractor = Extractor<float>(spec, std::move(layers));
    } else {
      if (spec.weight_source == WeightSource::File)
        throw ModelLoadError(r.origin() + ": file-sourced extractor weights missing from model");
      m.extractor = Extractor<float>(spec);
    }

    const auto norm_channels = r.get_u32();
    if (norm_channels != static_cast<std::uint32_t>(spec.fused_channels()))
      throw ModelLoadError(r.origin() + ": normalizer width does not match extractor");
    m.normalizer = FeatureNormalizer::identity(static_cast<int>(norm_channels));
    r.get_f32_array(std::span<float>(m.normalizer.mean));
    r.get_f32_array(std::span<float>(m.normalizer.inv_std));

    std::vector<Linear<float>> layers(r.get_u32());
    if (layers.empty() || layers.size() > 64) throw ModelLoadError(r.origin() + ": bad classifier layer count");
    for (auto& l : layers) {
      const auto out = r.get_u32();
      const auto in = r.get_u32();
      if (out == 0 || in == 0 || out > (1u << 20) || in > (1u << 20))
        throw ModelLoadError(r.origin() + ": bad classifier layer shape");
      l.weight.resize(out, in);
      l.bias.resize(out);
      r.get_f32_array(std::span<float>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
      r.get_f32_array(std::span<float>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
    }
    try {
      m.classifier = MlpClassifier<float>(std::move(layers));
    } catch (const InvalidArgument& e) {
      throw ModelLoadError(r.origin() + ": " + e.what());
    }
    if (m.classifier.input_width() != spec.fused_channels())
      throw ModelLoadError(r.origin() + ": classifier input width does not match extractor");

    auto& c = m.config;
    c.adam.learning_rate = r.get_f64();
    c.adam.beta1 = r.get_f64();
    c.adam.beta2 = r.get_f64();
    c.adam.weight_decay = r.get_f64();
    c.adam.epsilon = r.get_f64();
    c.batch_size = static_cast<int>(r.get_u32());
    c.epochs = static_cast<int>(r.get_u32());
    c.seed = r.get_u64();
    c.sigma = r.get_f64();
    c.mu = r.get_f64();
    c.max_area_ratio = r.get_f64();
    c.mask_threshold = r.get_f64();
    c.grid_period = static_cast<int>(r.get_u32());
    c.octaves = static_cast<int>(r.get_u32());
    c.persistence = r.get_f64();
    c.beta.lo = r.get_f64();
    c.beta.hi = r.get_f64();
    c.resample_attempts = static_cast<int>(r.get_u32());
    c.fine_tune_extractor = r.get_u8() != 0;
    const auto aug = r.get_u8();
    if (aug > 1) throw ModelLoadError(r.origin() + ": bad augmentation tag");
    c.augmentation = static_cast<Augmentation>(aug);
    c.source_pool = r.get_string();
    c.hidden = m.classifier.hidden_widths();
    if (!r.at_end()) throw ModelLoadError(r.origin() + ": trailing bytes after model");
    return m;
  }

  static DiscriminatorModel load(const std::filesystem::path& path) {
    auto r = binary::Reader::from_file(path);
    return deserialize(r);
  }
};

/// Anomaly score of one image: the positive-class probability map over the
/// fused feature grid and its maximum.
struct AnomalyScore {
  std::string id;
  double score = 0.0;
  FeatureMap<float> score_map;  // h×w×1
};

inline AnomalyScore anomaly_score(const Image& image, const DiscriminatorModel& model, std::string id = {}) {
  const Image input = to_working_resolution(image);
  const auto probs = classify(model.features(input), model.classifier);
  AnomalyScore s;
  s.id = std::move(id);
  s.score_map = FeatureMap<float>(probs.height(), probs.width(), 1, probs.stage());
  float best = 0.0f;
  for (int pos = 0; pos < probs.positions(); ++pos) {
    const float p = probs.data()[2 * pos + kAnomalous];
    s.score_map.data()[pos] = p;
    best = std::max(best, p);
  }
  s.score = best;
  return s;
}

/// Arithmetic mean of the member scores.
inline double ensemble_score(const std::vector<AnomalyScore>& members) {
  detail::require(!members.empty(), "ensemble_score: no member scores");
  double total = 0.0;
  for (const auto& m : members) total += m.score;
  return total / static_cast<double>(members.size());
}

/// Mutable training state: model plus optimizer moments and step counter.
struct TrainState {
  DiscriminatorModel model;
  AdamOptimizer<float> classifier_optimizer;
  AdamOptimizer<float> extractor_optimizer;
  std::shared_ptr<const SourcePool> source;
  std::uint64_t step = 0;
  int epoch = 0;

  explicit TrainState(DiscriminatorModel m)
      : model(std::move(m)),
        classifier_optimizer(model.config.adam),
        extractor_optimizer(model.config.adam),
        source(make_source_pool(model.config.source_pool)) {}
};

struct StepDiagnostics {
  double loss = 0.0;
  int image_grids = 0;       // F_n grids that entered the loss
  int degenerate_masks = 0;  // examples whose image branch fell back to pure normal
};

namespace detail {

// One example's contribution to a step.
struct ExampleGrids {
  FeatureMap<float> fx, fn, fa;
  bool has_fn = false, has_fa = false;
  std::vector<FeatureMap<float>> stages_x, stages_n;  // fine-tune only
};

// Gradient of the loss w.r.t. the last extractor stage, given the gradient
// w.r.t. the fused features of one image.
inline void accumulate_last_stage_grad(const Extractor<float>& ex, const std::vector<FeatureMap<float>>& stages,
                                       const RowMatrix<float>& fused_grad, RowMatrix<float>& dw, ColVector<float>& db) {
  const auto& spec = ex.spec();
  const int last = spec.stage_count();
  const auto& out = stages[static_cast<std::size_t>(last - 1)];
  const int c_last = out.channels();
  const int offset = spec.fused_channels() - c_last;
  const auto& front = stages[static_cast<std::size_t>(spec.fusion_stages.front() - 1)];

  FeatureMap<float> g_fused(front.height(), front.width(), c_last);
  for (int pos = 0; pos < front.positions(); ++pos)
    for (int k = 0; k < c_last; ++k) g_fused.data()[static_cast<std::size_t>(pos) * c_last + k] = fused_grad(pos, offset + k);
  FeatureMap<float> g_agg = spec.fusion_stages.front() == last
                                ? g_fused
                                : interpolate_bilinear_backward(g_fused, out.height(), out.width());
  FeatureMap<float> g_out = aggregate_patches_backward(g_agg, spec.patch_size);
  for (std::size_t i = 0; i < g_out.values().size(); ++i)
    if (out.values()[i] <= 0.0f) g_out.values()[i] = 0.0f;
  const auto& layer = ex.layers()[static_cast<std::size_t>(last - 1)];
  const auto cols = im2col(stages[static_cast<std::size_t>(last - 2)], layer.geometry);
  Eigen::Map<const RowMatrix<float>> dz(g_out.data(), g_out.positions(), c_last);
  dw.noalias() += dz.transpose() * cols;
  db.noalias() += dz.colwise().sum().transpose();
}

}  // namespace detail

/// One optimization step over a batch of normal images:
/// synthesize I_n, extract F_x and F_n, perturb F_x into F_a, score all
/// three grids, take the mean cross-entropy (F_x negative, F_n and F_a
/// positive), backpropagate and apply Adam.
///
/// `cached_fx` may hold precomputed F_x per batch image (frozen extractor,
/// no augmentation); pass an empty span to extract them here.
inline StepDiagnostics train_step(TrainState& state, std::span<const Image> batch,
                                  std::span<const FeatureMap<float>* const> cached_fx = {}) {
  detail::require<DataError>(!batch.empty(), "train_step: empty batch");
  const TrainConfig& cfg = state.model.config;
  const bool fine_tune = cfg.fine_tune_extractor;
  const auto synth_cfg = cfg.synth_config(state.source);
  const std::uint64_t step_seed = derive_seed(cfg.seed, 0x57E9u, state.step);

  StepDiagnostics diag;
  std::vector<detail::ExampleGrids> examples(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Rng rng(derive_seed(step_seed, b));
    auto& ex = examples[b];
    Image i_x = batch[b];
    bool augmented = false;
    if (cfg.augmentation == Augmentation::FlipRotate && i_x.width() == i_x.height()) {
      const int k = static_cast<int>(rng.below(8));
      augmented = k != 0;
      i_x = dihedral(i_x, k);
    }

    const bool use_cache = !fine_tune && !augmented && b < cached_fx.size() && cached_fx[b] != nullptr;
    if (use_cache) {
      ex.fx = *cached_fx[b];
    } else if (fine_tune) {
      ex.stages_x = state.model.extractor.extract_hierarchical(i_x);
      ex.fx = state.model.normalizer(fuse_stages(ex.stages_x, state.model.extractor.spec()));
    } else {
      ex.fx = state.model.features(i_x);
    }

    if (cfg.image_branch()) {
      for (int attempt = 0; attempt < cfg.resample_attempts; ++attempt) {
        auto synth = synthesize_anomaly(i_x, synth_cfg, rng);
        if (synth.degenerate) continue;
        if (fine_tune) {
          ex.stages_n = state.model.extractor.extract_hierarchical(synth.image);
          ex.fn = state.model.normalizer(fuse_stages(ex.stages_n, state.model.extractor.spec()));
        } else {
          ex.fn = state.model.features(synth.image);
        }
        ex.has_fn = true;
        break;
      }
      if (!ex.has_fn) ++diag.degenerate_masks;
    }
    if (cfg.feature_branch()) {
      ex.fa = add_feature_noise(ex.fx, GaussianNoiseParams{cfg.mu, cfg.sigma, rng.next_u64()});
      ex.has_fa = true;
    }
    diag.image_grids += ex.has_fn ? 1 : 0;
  }

  // Stack every grid row-wise: per example F_x, then F_n, then F_a.
  const int positions = examples.front().fx.positions();
  const int width = examples.front().fx.channels();
  std::size_t rows = 0;
  for (const auto& ex : examples) rows += static_cast<std::size_t>(positions) * (1 + ex.has_fn + ex.has_fa);
  RowMatrix<float> x(static_cast<Eigen::Index>(rows), width);
  std::vector<int> targets(rows);
  Eigen::Index at = 0;
  auto append = [&](const FeatureMap<float>& f, int target) {
    x.middleRows(at, positions) = Eigen::Map<const RowMatrix<float>>(f.data(), positions, width);
    std::fill_n(targets.begin() + at, positions, target);
    at += positions;
  };
  for (const auto& ex : examples) {
    append(ex.fx, kNormal);
    if (ex.has_fn) append(ex.fn, kAnomalous);
    if (ex.has_fa) append(ex.fa, kAnomalous);
  }

  auto& clf = state.model.classifier;
  const auto trace = clf.forward(x);
  diag.loss = mean_cross_entropy(trace.probs, std::span<const int>(targets));
  if (!std::isfinite(diag.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << state.epoch << ", step " << state.step << " (batch of " << batch.size()
        << ", classifier parameters " << (clf.all_finite() ? "finite" : "non-finite") << ")";
    throw TrainingDivergence(msg.str());
  }
  auto grads = clf.backward(trace, cross_entropy_logit_grad(trace.probs, std::span<const int>(targets)), fine_tune);

  if (fine_tune) {
    auto& extractor = state.model.extractor;
    auto& last = extractor.layers().back();
    RowMatrix<float> dw = RowMatrix<float>::Zero(last.weight.rows(), last.weight.cols());
    ColVector<float> db = ColVector<float>::Zero(last.bias.size());
    Eigen::Index row = 0;
    for (const auto& ex : examples) {
      // F_a = F_x + noise, so its gradient flows into F_x's extraction.
      RowMatrix<float> gx = grads.input.middleRows(row, positions);
      row += positions;
      RowMatrix<float> gn;
      if (ex.has_fn) {
        gn = grads.input.middleRows(row, positions);
        row += positions;
      }
      if (ex.has_fa) {
        gx += grads.input.middleRows(row, positions);
        row += positions;
      }
      state.model.normalizer.backward(gx);
      detail::accumulate_last_stage_grad(extractor, ex.stages_x, gx, dw, db);
      if (ex.has_fn) {
        state.model.normalizer.backward(gn);
        detail::accumulate_last_stage_grad(extractor, ex.stages_n, gn, dw, db);
      }
    }
    std::vector<std::span<float>> params{{last.weight.data(), static_cast<std::size_t>(last.weight.size())},
                                         {last.bias.data(), static_cast<std::size_t>(last.bias.size())}};
    std::vector<std::span<float>> g{{dw.data(), static_cast<std::size_t>(dw.size())},
                                    {db.data(), static_cast<std::size_t>(db.size())}};
    state.extractor_optimizer.step(params, g);
  }

  state.classifier_optimizer.step(clf.parameters(), MlpClassifier<float>::gradient_views(grads));
  if (!clf.all_finite()) throw TrainingDivergence("classifier parameters became non-finite at step " + std::to_string(state.step));
  ++state.step;
  return diag;
}

struct TrainResult {
  DiscriminatorModel model;
  std::vector<double> epoch_losses;  // mean step loss per epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Full training run: epochs × shuffled batches of train_step. Only the
/// train split is ever read.
inline TrainResult train(const Dataset& dataset, const ExtractorSpec& spec, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (dataset.split() != Split::Train) throw DataError("train: dataset is not a train split");
  if (dataset.empty()) throw DataError("train: empty training set");
  if (dataset.size() < static_cast<std::size_t>(config.batch_size))
    throw DataError("train: fewer training images than the batch size");

  TrainState state(DiscriminatorModel::initialized(spec, config));
  TrainResult result;
  if (config.epochs == 0) {
    result.model = std::move(state.model);
    return result;
  }

  // Raw features of every training normal fit the normalizer; with a frozen
  // extractor they are also the F_x cache.
  std::vector<FeatureMap<float>> fx_cache;
  fx_cache.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) fx_cache.push_back(patch_features(dataset.load(i), state.model.extractor));
  state.model.normalizer = FeatureNormalizer::fit(std::span<const FeatureMap<float>>(fx_cache));
  const bool cache = !config.fine_tune_extractor;
  if (cache) {
    for (auto& f : fx_cache) state.model.normalizer.apply(f);
  } else {
    fx_cache.clear();
  }

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 0x0E9Cu, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Image> batch;
      std::vector<const FeatureMap<float>*> cached;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(dataset.load(order[k]));
        cached.push_back(cache ? &fx_cache[order[k]] : nullptr);
      }
      total += train_step(state, batch, cached).loss;
      ++steps;
    }
    result.epoch_losses.push_back(total / steps);
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }
  result.model = std::move(state.model);
  return result;
}

}  // namespace grain_ad
