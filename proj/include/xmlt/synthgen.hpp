#pragma once

// Two-domain long-tailed benchmark generator.
//
// Class structure mirrors a fine-grained recognition setting: clusters of
// visually close classes whose image-feature means sit within a small radius
// of a shared cluster center, far from other clusters. Every class owns one
// title vector (shared across domains) and an ingredient list made of
// cluster-common vectors plus at least one class-unique vector.
//
// The target domain realizes covariate shift through one fixed affine
// transform (orthogonal mixing plus an offset) applied to every target image
// feature. Text is copied from the class spec with small jitter; with
// probability text_error_rate a sample receives the text of a uniformly
// random other class instead.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "xmlt/core.hpp"
#include "xmlt/rng.hpp"

namespace xmlt {

// Generator constants, recorded in every benchmark manifest.
inline constexpr double kClusterCenterNorm = 4.0;
inline constexpr double kMinCenterSeparation = 4.5;
inline constexpr double kIntraClusterRadius = 1.0;
inline constexpr double kFeatureNoiseSigma = 0.35;
inline constexpr double kTextJitterSigma = 0.02;
inline constexpr int kCommonIngredientsPerCluster = 1;
inline constexpr int kUniqueIngredientsPerClass = 2;

struct DomainShift {
  double offset = 0.0;   // magnitude of a fixed random offset vector
  double mixing = 0.0;   // strength of a fixed random orthogonal mixing map
};

struct BenchmarkConfig {
  int num_classes = 30;
  int clusters = 3;
  int feature_dim = 32;
  int text_dim = 32;
  int n_max = 200;
  double imbalance_ratio = 100.0;
  DomainShift domain_shift{2.0, 0.6};
  double label_noise_rate = 0.0;
  double text_error_rate = 0.05;
  int test_per_class = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1) raise(ErrorCode::InvalidConfig, "num_classes must be >= 1");
    if (clusters < 1 || clusters > num_classes)
      raise(ErrorCode::InvalidConfig, "need num_classes >= clusters >= 1");
    if (feature_dim < 1 || text_dim < 1)
      raise(ErrorCode::InvalidConfig, "feature/text dims must be >= 1");
    if (n_max < 1) raise(ErrorCode::InvalidConfig, "n_max must be >= 1");
    if (imbalance_ratio < 1.0) raise(ErrorCode::InvalidConfig, "imbalance_ratio must be >= 1");
    if (label_noise_rate < 0.0 || label_noise_rate > 1.0 || text_error_rate < 0.0 ||
        text_error_rate > 1.0)
      raise(ErrorCode::InvalidConfig, "noise rates must lie in [0,1]");
    if (test_per_class < 1) raise(ErrorCode::InvalidConfig, "test_per_class must be >= 1");
    if (domain_shift.offset < 0.0 || domain_shift.mixing < 0.0)
      raise(ErrorCode::InvalidConfig, "domain shift magnitudes must be >= 0");
  }
};

struct ClassSpec {
  EmbeddingVector class_mean;  // image-feature space
  int cluster_id = 0;
  EmbeddingVector title_vector;                    // one per class, both domains
  std::vector<EmbeddingVector> ingredient_vectors; // cluster-common first, unique last
  int num_common_ingredients = 0;
};

/// Exponential-decay counts: rank r gets round(n_max * IR^(-r/(C-1))),
/// clipped below at 1. `permutation` maps class index -> rank; empty means
/// identity.
inline std::vector<int> long_tailed_counts(int num_classes, int n_max, double imbalance_ratio,
                                           const std::vector<int>& permutation = {}) {
  if (num_classes < 1 || n_max < 1)
    raise(ErrorCode::InvalidConfig, "long_tailed_counts: need C >= 1 and n_max >= 1");
  if (imbalance_ratio < 1.0)
    raise(ErrorCode::InvalidConfig, "long_tailed_counts: imbalance ratio must be >= 1");
  if (!permutation.empty()) {
    if (static_cast<int>(permutation.size()) != num_classes)
      raise(ErrorCode::InvalidInput, "long_tailed_counts: permutation length");
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    for (int r : permutation) {
      if (r < 0 || r >= num_classes || seen[static_cast<std::size_t>(r)])
        raise(ErrorCode::InvalidInput, "long_tailed_counts: not a permutation");
      seen[static_cast<std::size_t>(r)] = true;
    }
  }
  std::vector<int> counts(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const int rank = permutation.empty() ? c : permutation[static_cast<std::size_t>(c)];
    double value = static_cast<double>(n_max);
    if (num_classes > 1) {
      const double exponent = -static_cast<double>(rank) / (num_classes - 1);
      value = n_max * std::pow(imbalance_ratio, exponent);
    }
    counts[static_cast<std::size_t>(c)] =
        std::max(1, static_cast<int>(std::llround(value)));
  }
  return counts;
}

/// Deterministic seeded permutation of the counts (identical multiset).
inline std::vector<int> shuffle_target_distribution(std::vector<int> counts,
                                                    std::uint64_t seed) {
  if (counts.empty()) raise(ErrorCode::InvalidInput, "shuffle_target_distribution: empty");
  Rng rng(seed);
  rng.shuffle(counts);
  return counts;
}

/// max(counts) / min(counts).
inline double imbalance_ratio(const std::vector<int>& counts) {
  if (counts.empty()) raise(ErrorCode::InvalidInput, "imbalance_ratio: empty counts");
  int lo = counts[0], hi = counts[0];
  for (int c : counts) {
    if (c < 1) raise(ErrorCode::InvalidInput, "imbalance_ratio: counts must be >= 1");
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  return static_cast<double>(hi) / static_cast<double>(lo);
}

inline std::vector<ClassSpec> make_class_specs(const BenchmarkConfig& cfg, Rng rng) {
  cfg.validate();
  // Cluster centers: scaled random directions, resampled until pairwise
  // separation holds so intra-cluster distances (< 2 * kIntraClusterRadius)
  // stay below inter-cluster ones by construction.
  std::vector<EmbeddingVector> centers;
  centers.reserve(static_cast<std::size_t>(cfg.clusters));
  int attempts = 0;
  while (static_cast<int>(centers.size()) < cfg.clusters) {
    if (++attempts > 1000 * cfg.clusters)
      raise(ErrorCode::InvalidConfig,
            "make_class_specs: cannot separate cluster centers at this dimension");
    EmbeddingVector candidate = rng.next_unit_vector(cfg.feature_dim);
    for (double& x : candidate) x *= kClusterCenterNorm;
    bool ok = true;
    for (const EmbeddingVector& c : centers) {
      EmbeddingVector diff(candidate.size());
      for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = candidate[k] - c[k];
      if (norm(diff) < kMinCenterSeparation) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(candidate));
  }

  std::vector<std::vector<EmbeddingVector>> common(
      static_cast<std::size_t>(cfg.clusters));
  for (auto& list : common)
    for (int k = 0; k < kCommonIngredientsPerCluster; ++k)
      list.push_back(rng.next_unit_vector(cfg.text_dim));

  std::vector<ClassSpec> specs(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    ClassSpec& spec = specs[static_cast<std::size_t>(c)];
    spec.cluster_id = c % cfg.clusters;
    EmbeddingVector offset = rng.next_unit_vector(cfg.feature_dim);
    spec.class_mean = centers[static_cast<std::size_t>(spec.cluster_id)];
    for (std::size_t k = 0; k < spec.class_mean.size(); ++k)
      spec.class_mean[k] += kIntraClusterRadius * offset[k];
    spec.title_vector = rng.next_unit_vector(cfg.text_dim);
    spec.ingredient_vectors = common[static_cast<std::size_t>(spec.cluster_id)];
    spec.num_common_ingredients = kCommonIngredientsPerCluster;
    for (int k = 0; k < kUniqueIngredientsPerClass; ++k)
      spec.ingredient_vectors.push_back(rng.next_unit_vector(cfg.text_dim));
  }
  return specs;
}

namespace detail {

struct TargetTransform {
  std::vector<double> offset;
  // Orthogonal mixing as a fixed list of Givens rotations (axis pair, angle).
  struct Givens {
    int i, j;
    double c, s;
  };
  std::vector<Givens> rotations;

  void apply(EmbeddingVector& x) const {
    for (const Givens& g : rotations) {
      const double xi = x[static_cast<std::size_t>(g.i)];
      const double xj = x[static_cast<std::size_t>(g.j)];
      x[static_cast<std::size_t>(g.i)] = g.c * xi - g.s * xj;
      x[static_cast<std::size_t>(g.j)] = g.s * xi + g.c * xj;
    }
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += offset[k];
  }
};

/// Derived from the benchmark seed alone so train and test pools shift
/// identically.
inline TargetTransform make_target_transform(const BenchmarkConfig& cfg) {
  TargetTransform t;
  Rng rng = Rng(cfg.seed).split(0x7a6d'7368'6966'74ULL);  // shift stream
  t.offset.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
  if (cfg.domain_shift.offset > 0.0) {
    EmbeddingVector dir = rng.next_unit_vector(cfg.feature_dim);
    for (std::size_t k = 0; k < t.offset.size(); ++k)
      t.offset[k] = cfg.domain_shift.offset * dir[k];
  }
  if (cfg.domain_shift.mixing > 0.0 && cfg.feature_dim > 1) {
    const double max_angle = cfg.domain_shift.mixing * std::numbers::pi / 4.0;
    for (int k = 0; k < cfg.feature_dim; ++k) {
      TargetTransform::Givens g;
      g.i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.feature_dim)));
      g.j = static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(cfg.feature_dim - 1)));
      if (g.j >= g.i) ++g.j;
      const double angle = rng.next_uniform(-max_angle, max_angle);
      g.c = std::cos(angle);
      g.s = std::sin(angle);
      t.rotations.push_back(g);
    }
  }
  return t;
}

}  // namespace detail

/// Emits counts[c] samples per class for one domain. Target samples pass
/// through the fixed covariate-shift transform; ids start at id_start.
inline Dataset synthesize_domain(const std::vector<ClassSpec>& specs,
                                 const std::vector<int>& counts, DomainTag domain,
                                 const BenchmarkConfig& cfg, Rng rng,
                                 std::uint64_t id_start = 0) {
  cfg.validate();
  if (counts.size() != specs.size())
    raise(ErrorCode::InvalidInput, "synthesize_domain: counts/specs length mismatch");

  const detail::TargetTransform shift = detail::make_target_transform(cfg);
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.feature_dim = cfg.feature_dim;
  ds.text_dim = cfg.text_dim;

  std::uint64_t next_id = id_start;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const ClassSpec& spec = specs[c];
    for (int k = 0; k < counts[c]; ++k) {
      Sample s;
      s.id = next_id++;
      s.label = static_cast<int>(c);
      s.domain = domain;
      s.image_feature = spec.class_mean;
      for (double& x : s.image_feature) x += kFeatureNoiseSigma * rng.next_gaussian();
      if (domain == DomainTag::Target) shift.apply(s.image_feature);

      // Whole-text substitution with probability text_error_rate.
      std::size_t donor = c;
      if (specs.size() > 1 && rng.next_unit() < cfg.text_error_rate) {
        std::size_t other = static_cast<std::size_t>(
            rng.next_below(static_cast<std::uint64_t>(specs.size() - 1)));
        donor = other >= c ? other + 1 : other;
      }
      const ClassSpec& text_spec = specs[donor];
      s.title_feature = text_spec.title_vector;
      for (double& x : s.title_feature) x += kTextJitterSigma * rng.next_gaussian();
      s.ingredient_features.reserve(text_spec.ingredient_vectors.size());
      for (const EmbeddingVector& g : text_spec.ingredient_vectors) {
        EmbeddingVector jittered = g;
        for (double& x : jittered) x += kTextJitterSigma * rng.next_gaussian();
        s.ingredient_features.push_back(std::move(jittered));
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

/// Draws exactly test_per_class samples per class into a balanced test set;
/// the remainder stays in train. Disjoint by sample id.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset,
                                                    int test_per_class, Rng rng) {
  if (test_per_class < 1)
    raise(ErrorCode::InvalidConfig, "split_train_test: test_per_class must be >= 1");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (int i = 0; i < static_cast<int>(dataset.samples.size()); ++i)
    by_class[static_cast<std::size_t>(dataset.samples[static_cast<std::size_t>(i)].label)]
        .push_back(i);

  std::vector<bool> is_test(dataset.samples.size(), false);
  for (int c = 0; c < dataset.num_classes; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(members.size()) < test_per_class + 1)
      raise(ErrorCode::InvalidConfig,
            "split_train_test: class " + std::to_string(c) +
                " pool too small for test_per_class + train");
    std::vector<int> chosen =
        rng.sample_indices(static_cast<int>(members.size()), test_per_class);
    for (int pick : chosen)
      is_test[static_cast<std::size_t>(members[static_cast<std::size_t>(pick)])] = true;
  }

  Dataset train, test;
  train.num_classes = test.num_classes = dataset.num_classes;
  train.feature_dim = test.feature_dim = dataset.feature_dim;
  train.text_dim = test.text_dim = dataset.text_dim;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    (is_test[i] ? test : train).samples.push_back(dataset.samples[i]);
  return {std::move(train), std::move(test)};
}

/// Flips each label to a uniformly random other class with the given rate.
/// Applied to training splits only; the balanced test set stays clean.
inline void apply_label_noise(Dataset& ds, double rate, Rng rng) {
  if (rate <= 0.0 || ds.num_classes < 2) return;
  for (Sample& s : ds.samples) {
    if (rng.next_unit() < rate) {
      const int other = static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(ds.num_classes - 1)));
      s.label = other >= s.label ? other + 1 : other;
    }
  }
}

struct Benchmark {
  Dataset source_train;
  Dataset target_train;
  Dataset target_test;
  std::vector<int> source_counts;  // long-tailed, rank order = class order
  std::vector<int> target_counts;  // seeded permutation of source_counts
};

/// Full generation pipeline. Substream ids are fixed so every artifact of a
/// given config is reproducible byte for byte.
inline Benchmark make_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Benchmark b;
  const std::vector<ClassSpec> specs = make_class_specs(cfg, root.split(1));
  b.source_counts = long_tailed_counts(cfg.num_classes, cfg.n_max, cfg.imbalance_ratio);
  b.target_counts = shuffle_target_distribution(b.source_counts, Rng::derive_seed(cfg.seed, 2));

  b.source_train =
      synthesize_domain(specs, b.source_counts, DomainTag::Source, cfg, root.split(3), 0);

  std::vector<int> pool_counts = b.target_counts;
  for (int& c : pool_counts) c += cfg.test_per_class;
  Dataset target_pool = synthesize_domain(specs, pool_counts, DomainTag::Target, cfg,
                                          root.split(4), b.source_train.samples.size());
  auto [train, test] = split_train_test(target_pool, cfg.test_per_class, root.split(5));
  b.target_train = std::move(train);
  b.target_test = std::move(test);

  apply_label_noise(b.source_train, cfg.label_noise_rate, root.split(6));
  apply_label_noise(b.target_train, cfg.label_noise_rate, root.split(7));
  return b;
}

}  // namespace xmlt
