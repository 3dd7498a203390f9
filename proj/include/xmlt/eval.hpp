#pragma once

// Evaluation protocol: Top-k accuracy, head/medium/tail groups, the 3x3
// source-group x target-group matrix, a cross-domain gap diagnostic, and
// deterministic embedding export (raw shared-space vectors or a 2-D PCA).
//
// Group accuracies are sample-weighted by default so that the overall Top-1
// decomposes exactly into the group (and nine-group) aggregates; a class-mean
// mode is available behind a flag. Empty groups are reported as explicit
// nulls, never zero.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmlt/core.hpp"
#include "xmlt/model.hpp"

namespace xmlt {

struct GroupThresholds {
  int head_min_exclusive = 70;  // count > 70  => Head
  int tail_max_exclusive = 15;  // count < 15  => Tail; otherwise Medium
};

/// Fraction of rows whose true label ranks among the k largest logits.
/// Ties resolve toward the lower class index, so a tied competitor with a
/// smaller index outranks the label.
inline double topk_accuracy(const std::vector<std::vector<double>>& logit_rows,
                            const std::vector<int>& labels, int k) {
  if (logit_rows.size() != labels.size())
    raise(ErrorCode::InvalidInput, "topk_accuracy: rows/labels length mismatch");
  if (logit_rows.empty()) raise(ErrorCode::InvalidInput, "topk_accuracy: empty input");
  if (k < 1 || k > static_cast<int>(logit_rows[0].size()))
    raise(ErrorCode::InvalidInput, "topk_accuracy: k out of range");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logit_rows.size(); ++r) {
    const auto& row = logit_rows[r];
    const int y = labels[r];
    if (y < 0 || y >= static_cast<int>(row.size()))
      raise(ErrorCode::InvalidLabel, "topk_accuracy: label out of range");
    const double ly = row[static_cast<std::size_t>(y)];
    int ahead = 0;
    for (int j = 0; j < static_cast<int>(row.size()); ++j) {
      const double lj = row[static_cast<std::size_t>(j)];
      if (lj > ly || (lj == ly && j < y)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logit_rows.size());
}

/// Group follows the target-domain training count only: > 70 Head, 15..70
/// Medium (boundaries inclusive), < 15 Tail.
inline std::vector<ClassGroup> assign_groups(const std::vector<int>& target_train_counts,
                                             GroupThresholds thresholds = {}) {
  if (thresholds.head_min_exclusive < thresholds.tail_max_exclusive)
    raise(ErrorCode::InvalidConfig, "assign_groups: thresholds out of order");
  std::vector<ClassGroup> groups(target_train_counts.size());
  for (std::size_t c = 0; c < target_train_counts.size(); ++c) {
    const int count = target_train_counts[c];
    if (count < 0) raise(ErrorCode::InvalidInput, "assign_groups: negative count");
    if (count > thresholds.head_min_exclusive)
      groups[c] = ClassGroup::Head;
    else if (count < thresholds.tail_max_exclusive)
      groups[c] = ClassGroup::Tail;
    else
      groups[c] = ClassGroup::Medium;
  }
  return groups;
}

enum class GroupAccuracyMode { SampleWeighted, ClassMean };

struct GroupAccuracy {
  std::optional<double> head, medium, tail;

  std::optional<double>& of(ClassGroup g) {
    switch (g) {
      case ClassGroup::Head: return head;
      case ClassGroup::Medium: return medium;
      default: return tail;
    }
  }
};

inline GroupAccuracy group_accuracy(const std::vector<long long>& per_class_correct,
                                    const std::vector<long long>& per_class_totals,
                                    const std::vector<ClassGroup>& groups,
                                    GroupAccuracyMode mode = GroupAccuracyMode::SampleWeighted) {
  if (per_class_correct.size() != groups.size() || per_class_totals.size() != groups.size())
    raise(ErrorCode::InvalidInput, "group_accuracy: length mismatch");
  GroupAccuracy out;
  for (ClassGroup g : {ClassGroup::Head, ClassGroup::Medium, ClassGroup::Tail}) {
    long long correct = 0, total = 0;
    double acc_sum = 0.0;
    long long populated_classes = 0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      if (groups[c] != g || per_class_totals[c] == 0) continue;
      correct += per_class_correct[c];
      total += per_class_totals[c];
      acc_sum += static_cast<double>(per_class_correct[c]) /
                 static_cast<double>(per_class_totals[c]);
      ++populated_classes;
    }
    if (total == 0) continue;  // empty group stays null
    out.of(g) = mode == GroupAccuracyMode::SampleWeighted
                    ? static_cast<double>(correct) / static_cast<double>(total)
                    : acc_sum / static_cast<double>(populated_classes);
  }
  return out;
}

using NineGroupMatrix = std::array<std::array<std::optional<double>, 3>, 3>;

/// Rows index the source-domain group, columns the target-domain group. The
/// nine cells partition all classes; cells without test samples stay null.
inline NineGroupMatrix nine_group_matrix(const std::vector<int>& source_counts,
                                         const std::vector<int>& target_counts,
                                         const std::vector<long long>& per_class_correct,
                                         const std::vector<long long>& per_class_totals,
                                         GroupThresholds thresholds = {}) {
  const std::size_t num_classes = source_counts.size();
  if (target_counts.size() != num_classes || per_class_correct.size() != num_classes ||
      per_class_totals.size() != num_classes)
    raise(ErrorCode::InvalidInput, "nine_group_matrix: length mismatch");
  const std::vector<ClassGroup> src = assign_groups(source_counts, thresholds);
  const std::vector<ClassGroup> tgt = assign_groups(target_counts, thresholds);
  std::array<std::array<long long, 3>, 3> correct{}, total{};
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto r = static_cast<std::size_t>(src[c]);
    const auto col = static_cast<std::size_t>(tgt[c]);
    correct[r][col] += per_class_correct[c];
    total[r][col] += per_class_totals[c];
  }
  NineGroupMatrix m;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t col = 0; col < 3; ++col)
      if (total[r][col] > 0)
        m[r][col] = static_cast<double>(correct[r][col]) /
                    static_cast<double>(total[r][col]);
  return m;
}

/// Mean over classes of the cosine distance between the source and target
/// centroids of the given embeddings. Classes missing either domain are
/// skipped; if none remain the metric is undefined.
inline double domain_gap(const std::vector<EmbeddingVector>& embeddings,
                         const std::vector<int>& labels,
                         const std::vector<DomainTag>& domains, int num_classes) {
  if (embeddings.size() != labels.size() || embeddings.size() != domains.size())
    raise(ErrorCode::InvalidInput, "domain_gap: length mismatch");
  if (num_classes < 1) raise(ErrorCode::InvalidInput, "domain_gap: num_classes");
  if (embeddings.empty()) raise(ErrorCode::Undefined, "domain_gap: no embeddings");
  const std::size_t dim = embeddings[0].size();
  std::vector<EmbeddingVector> centroid_src(static_cast<std::size_t>(num_classes),
                                            EmbeddingVector(dim, 0.0));
  std::vector<EmbeddingVector> centroid_tgt = centroid_src;
  std::vector<long long> count_src(static_cast<std::size_t>(num_classes), 0);
  std::vector<long long> count_tgt(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) raise(ErrorCode::DimMismatch, "domain_gap: mixed dims");
    const auto c = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || labels[i] >= num_classes)
      raise(ErrorCode::InvalidLabel, "domain_gap: label out of range");
    auto& centroid = domains[i] == DomainTag::Source ? centroid_src[c] : centroid_tgt[c];
    auto& count = domains[i] == DomainTag::Source ? count_src[c] : count_tgt[c];
    for (std::size_t k = 0; k < dim; ++k) centroid[k] += embeddings[i][k];
    ++count;
  }
  double sum = 0.0;
  int classes_used = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (count_src[cc] == 0 || count_tgt[cc] == 0) continue;
    for (std::size_t k = 0; k < dim; ++k) {
      centroid_src[cc][k] /= static_cast<double>(count_src[cc]);
      centroid_tgt[cc][k] /= static_cast<double>(count_tgt[cc]);
    }
    sum += 1.0 - cosine_similarity(centroid_src[cc], centroid_tgt[cc]);
    ++classes_used;
  }
  if (classes_used == 0)
    raise(ErrorCode::Undefined, "domain_gap: no class present in both domains");
  return sum / static_cast<double>(classes_used);
}

// ---------------------------------------------------------------------------
// PCA (deterministic, for 2-D embedding export)
// ---------------------------------------------------------------------------

struct Pca2d {
  std::array<EmbeddingVector, 2> components;  // descending eigenvalue order
  std::array<double, 2> eigenvalues{};
  EmbeddingVector mean;
};

namespace detail {

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
/// Adequate and exact enough for the small shared-space dimensions used here.
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigenvalues,
                         std::vector<double>& eigenvectors /* row-major, rows = vectors */) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += std::abs(a[static_cast<std::size_t>(p) * n + q]);
    if (off < 1e-14) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<std::size_t>(p) * n + q];
        if (std::abs(apq) < 1e-18) continue;
        const double app = a[static_cast<std::size_t>(p) * n + p];
        const double aqq = a[static_cast<std::size_t>(q) * n + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<std::size_t>(k) * n + p];
          const double akq = a[static_cast<std::size_t>(k) * n + q];
          a[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<std::size_t>(p) * n + k];
          const double aqk = a[static_cast<std::size_t>(q) * n + k];
          a[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vpk = v[static_cast<std::size_t>(p) * n + k];
          const double vqk = v[static_cast<std::size_t>(q) * n + k];
          v[static_cast<std::size_t>(p) * n + k] = c * vpk - s * vqk;
          v[static_cast<std::size_t>(q) * n + k] = s * vpk + c * vqk;
        }
      }
    }
  }
  eigenvalues.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eigenvalues[static_cast<std::size_t>(i)] =
      a[static_cast<std::size_t>(i) * n + i];
  eigenvectors = std::move(v);
}

}  // namespace detail

/// Top-2 principal components of the rows; component signs fixed so the
/// largest-magnitude coordinate of each is positive.
inline Pca2d fit_pca2d(const std::vector<EmbeddingVector>& rows) {
  if (rows.size() < 2) raise(ErrorCode::InvalidInput, "fit_pca2d: need >= 2 rows");
  const int dim = static_cast<int>(rows[0].size());
  if (dim < 2) raise(ErrorCode::InvalidInput, "fit_pca2d: need dim >= 2");
  Pca2d out;
  out.mean.assign(static_cast<std::size_t>(dim), 0.0);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != dim) raise(ErrorCode::DimMismatch, "fit_pca2d");
    for (int k = 0; k < dim; ++k) out.mean[static_cast<std::size_t>(k)] += r[static_cast<std::size_t>(k)];
  }
  for (double& m : out.mean) m /= static_cast<double>(rows.size());

  std::vector<double> cov(static_cast<std::size_t>(dim) * dim, 0.0);
  for (const auto& r : rows)
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        cov[static_cast<std::size_t>(i) * dim + j] +=
            (r[static_cast<std::size_t>(i)] - out.mean[static_cast<std::size_t>(i)]) *
            (r[static_cast<std::size_t>(j)] - out.mean[static_cast<std::size_t>(j)]);
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      const double value = cov[static_cast<std::size_t>(i) * dim + j] /
                           static_cast<double>(rows.size());
      cov[static_cast<std::size_t>(i) * dim + j] = value;
      cov[static_cast<std::size_t>(j) * dim + i] = value;
    }

  std::vector<double> eigenvalues, eigenvectors;
  detail::jacobi_eigen(cov, dim, eigenvalues, eigenvectors);
  std::array<int, 2> top{0, 1};
  for (int i = 0; i < dim; ++i) {
    if (eigenvalues[static_cast<std::size_t>(i)] >
        eigenvalues[static_cast<std::size_t>(top[0])])
      top = {i, top[0]};
    else if (i != top[0] && eigenvalues[static_cast<std::size_t>(i)] >
                                eigenvalues[static_cast<std::size_t>(top[1])])
      top[1] = i;
  }
  for (int slot = 0; slot < 2; ++slot) {
    EmbeddingVector comp(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k)
      comp[static_cast<std::size_t>(k)] =
          eigenvectors[static_cast<std::size_t>(top[static_cast<std::size_t>(slot)]) * dim + k];
    int arg = 0;
    for (int k = 1; k < dim; ++k)
      if (std::abs(comp[static_cast<std::size_t>(k)]) >
          std::abs(comp[static_cast<std::size_t>(arg)]))
        arg = k;
    if (comp[static_cast<std::size_t>(arg)] < 0)
      for (double& x : comp) x = -x;
    out.components[static_cast<std::size_t>(slot)] = std::move(comp);
    out.eigenvalues[static_cast<std::size_t>(slot)] =
        eigenvalues[static_cast<std::size_t>(top[static_cast<std::size_t>(slot)])];
  }
  return out;
}

inline std::array<double, 2> project_pca2d(const Pca2d& pca, const EmbeddingVector& row) {
  std::array<double, 2> out{};
  for (int slot = 0; slot < 2; ++slot) {
    double acc = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k)
      acc += (row[k] - pca.mean[k]) * pca.components[static_cast<std::size_t>(slot)][k];
    out[static_cast<std::size_t>(slot)] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct MetricsReport {
  double top1_all = 0.0;
  double top5_all = 0.0;
  GroupAccuracy group_top1;
  NineGroupMatrix nine_group;
  std::vector<std::optional<double>> per_class_top1;
  std::optional<double> domain_gap_before;  // raw image features
  std::optional<double> domain_gap_after;   // trained shared-space embeddings
  std::string config_fingerprint;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  bool image_only = false;  // zero the text embedding at inference
  GroupAccuracyMode group_mode = GroupAccuracyMode::SampleWeighted;
  GroupThresholds thresholds{};
};

/// Logits of one sample under the model's inference contract: text enters the
/// fused embedding only through the switches baked into the checkpoint.
inline std::vector<double> inference_logits(const ModelParams& params, const Sample& s,
                                            bool image_only) {
  const EmbeddingVector image_emb = encode_image(params, s.image_feature);
  const bool augment_on = (params.use_title || params.use_ingredients) && !image_only;
  if (!augment_on) {
    EmbeddingVector fused = image_emb;
    if (params.renormalize_fused) fused = l2_normalize(fused).value;
    return classify(params, fused);
  }
  static const std::vector<EmbeddingVector> kNoIngredients;
  const EmbeddingVector zero_title(static_cast<std::size_t>(params.text_dim), 0.0);
  const EmbeddingVector text_emb =
      encode_text(params, params.use_title ? s.title_feature : zero_title,
                  params.use_ingredients ? std::span<const EmbeddingVector>(s.ingredient_features)
                                         : std::span<const EmbeddingVector>(kNoIngredients));
  EmbeddingVector fused = augment(image_emb, text_emb);
  if (params.renormalize_fused) fused = l2_normalize(fused).value;
  return classify(params, fused);
}

/// Core test-set evaluation; domain-gap fields are left unset (they need the
/// training splits and are filled by the caller).
inline MetricsReport evaluate(const ModelParams& params, const Dataset& test,
                              const std::vector<int>& source_train_counts,
                              const std::vector<int>& target_train_counts,
                              const EvalOptions& options = {}) {
  if (test.samples.empty()) raise(ErrorCode::InvalidInput, "evaluate: empty test set");
  if (test.feature_dim != params.feature_dim || test.text_dim != params.text_dim)
    raise(ErrorCode::DimMismatch, "evaluate: dataset dims do not match checkpoint");
  if (test.num_classes > params.num_classes)
    raise(ErrorCode::DimMismatch, "evaluate: dataset has more classes than checkpoint");
  const int num_classes = params.num_classes;
  if (static_cast<int>(source_train_counts.size()) != num_classes ||
      static_cast<int>(target_train_counts.size()) != num_classes)
    raise(ErrorCode::InvalidInput, "evaluate: count vectors must cover all classes");

  std::vector<std::vector<double>> logit_rows;
  logit_rows.reserve(test.samples.size());
  std::vector<int> labels;
  labels.reserve(test.samples.size());
  for (const Sample& s : test.samples) {
    logit_rows.push_back(inference_logits(params, s, options.image_only));
    labels.push_back(s.label);
  }

  MetricsReport report;
  report.top1_all = topk_accuracy(logit_rows, labels, 1);
  report.top5_all = topk_accuracy(logit_rows, labels, std::min(5, num_classes));

  std::vector<long long> per_class_correct(static_cast<std::size_t>(num_classes), 0);
  std::vector<long long> per_class_totals(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < logit_rows.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++per_class_totals[c];
    if (predicted_class(logit_rows[i]) == labels[i]) ++per_class_correct[c];
  }
  report.per_class_top1.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (per_class_totals[cc] > 0)
      report.per_class_top1[cc] = static_cast<double>(per_class_correct[cc]) /
                                  static_cast<double>(per_class_totals[cc]);
  }

  const std::vector<ClassGroup> groups = assign_groups(target_train_counts, options.thresholds);
  report.group_top1 =
      group_accuracy(per_class_correct, per_class_totals, groups, options.group_mode);
  report.nine_group = nine_group_matrix(source_train_counts, target_train_counts,
                                        per_class_correct, per_class_totals,
                                        options.thresholds);
  return report;
}

/// Shared-space image embeddings of every sample, for diagnostics and export.
inline std::vector<EmbeddingVector> project_image_embeddings(const ModelParams& params,
                                                             const Dataset& ds) {
  std::vector<EmbeddingVector> out;
  out.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) out.push_back(encode_image(params, s.image_feature));
  return out;
}

}  // namespace xmlt
