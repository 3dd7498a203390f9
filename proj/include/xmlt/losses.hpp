#pragma once

// Alignment and calibration losses with closed-form gradients.
//
// triplet_alignment_loss: bi-directional cosine triplet hinge over a batch of
// paired image/text embeddings. Row i is a positive pair; rows with a
// different label supply the negatives. Both anchor directions (image and
// text) are summed per anchor, then averaged over anchors, so the value does
// not scale with batch size.
//
// balanced_softmax_loss: cross-entropy whose exponentiated logits are weighted
// by per-class training counts. Uniform counts reduce it to standard
// cross-entropy exactly.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xmlt/core.hpp"

namespace xmlt {

enum class Mining { HardestInBatch, AllPairsMean };

struct TripletBatch {
  std::vector<EmbeddingVector> image_embs;  // projected, shared space
  std::vector<EmbeddingVector> text_embs;   // same length, same space
  std::vector<int> labels;                  // row i is a positive image-text pair
};

struct TripletLossValue {
  double value = 0.0;
  std::vector<EmbeddingVector> image_grads;
  std::vector<EmbeddingVector> text_grads;
  bool no_negatives = false;  // all labels identical; loss 0, grads 0
};

/// One direction of the triplet objective: max(0, neg - pos + margin).
inline double triplet_hinge(double pos_sim, double neg_sim, double margin) {
  return std::max(0.0, neg_sim - pos_sim + margin);
}

namespace detail {

// d cos(a,b) / da = b/(|a||b|) - cos * a/|a|^2, accumulated as coeff * d/da.
inline void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b,
                                   double norm_a, double norm_b, double cos_ab,
                                   double coeff, std::vector<double>& grad_a) {
  const double inv = 1.0 / (norm_a * norm_b);
  const double self = cos_ab / (norm_a * norm_a);
  for (std::size_t k = 0; k < a.size(); ++k)
    grad_a[k] += coeff * (b[k] * inv - a[k] * self);
}

}  // namespace detail

inline TripletLossValue triplet_alignment_loss(const TripletBatch& batch, double margin,
                                               Mining mining = Mining::HardestInBatch) {
  if (margin < 0.0) raise(ErrorCode::InvalidConfig, "triplet margin must be >= 0");
  const std::size_t n = batch.image_embs.size();
  if (n < 2) raise(ErrorCode::InvalidInput, "triplet batch needs >= 2 rows");
  if (batch.text_embs.size() != n || batch.labels.size() != n)
    raise(ErrorCode::InvalidInput, "triplet batch: column lengths differ");
  const std::size_t dim = batch.image_embs[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.image_embs[i].size() != dim || batch.text_embs[i].size() != dim)
      raise(ErrorCode::DimMismatch, "triplet batch: embedding dims differ");
    if (!all_finite(batch.image_embs[i]) || !all_finite(batch.text_embs[i]))
      raise(ErrorCode::InvalidVector, "triplet batch: non-finite embedding");
  }

  TripletLossValue out;
  out.image_grads.assign(n, EmbeddingVector(dim, 0.0));
  out.text_grads.assign(n, EmbeddingVector(dim, 0.0));

  std::vector<double> img_norm(n), txt_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    img_norm[i] = norm(batch.image_embs[i]);
    txt_norm[i] = norm(batch.text_embs[i]);
    if (img_norm[i] <= kNormEps || txt_norm[i] <= kNormEps)
      raise(ErrorCode::DegenerateVector, "triplet batch: zero-norm embedding");
  }

  // sim[i][j] = cos(image_i, text_j); serves both anchor directions.
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sim[i * n + j] =
          dot(batch.image_embs[i], batch.text_embs[j]) / (img_norm[i] * txt_norm[j]);

  std::size_t num_valid = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (batch.labels[j] != batch.labels[i]) {
        ++num_valid;
        break;
      }
  if (num_valid == 0) {
    out.no_negatives = true;
    return out;
  }
  const double anchor_weight = 1.0 / static_cast<double>(num_valid);

  // coeff_{ij} accumulates dLoss/dsim[i][j]; expanded into embedding space after.
  std::vector<double> coeff(n * n, 0.0);
  double value = 0.0;

  auto add_direction = [&](std::size_t anchor, bool image_anchor) {
    const double pos = sim[anchor * n + anchor];
    // Gather in-batch negatives for this anchor.
    double hardest = 0.0;
    std::size_t hardest_j = n;
    std::size_t num_negs = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (batch.labels[j] == batch.labels[anchor]) continue;
      const double s = image_anchor ? sim[anchor * n + j] : sim[j * n + anchor];
      if (num_negs == 0 || s > hardest) {
        hardest = s;
        hardest_j = j;
      }
      ++num_negs;
    }
    if (num_negs == 0) return;  // anchor skipped

    auto apply = [&](std::size_t j, double weight) {
      const double s = image_anchor ? sim[anchor * n + j] : sim[j * n + anchor];
      const double h = triplet_hinge(pos, s, margin);
      value += weight * h;
      if (h > 0.0) {  // zero subgradient at the boundary
        if (image_anchor) {
          coeff[anchor * n + j] += weight;
          coeff[anchor * n + anchor] -= weight;
        } else {
          coeff[j * n + anchor] += weight;
          coeff[anchor * n + anchor] -= weight;
        }
      }
    };

    if (mining == Mining::HardestInBatch) {
      apply(hardest_j, anchor_weight);
    } else {
      const double w = anchor_weight / static_cast<double>(num_negs);
      for (std::size_t j = 0; j < n; ++j)
        if (batch.labels[j] != batch.labels[anchor]) apply(j, w);
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    add_direction(i, true);
    add_direction(i, false);
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double c = coeff[i * n + j];
      if (c == 0.0) continue;
      detail::accumulate_cosine_grad(batch.image_embs[i], batch.text_embs[j], img_norm[i],
                                     txt_norm[j], sim[i * n + j], c, out.image_grads[i]);
      detail::accumulate_cosine_grad(batch.text_embs[j], batch.image_embs[i], txt_norm[j],
                                     img_norm[i], sim[i * n + j], c, out.text_grads[j]);
    }

  out.value = value;
  return out;
}

struct SoftmaxLossValue {
  double value = 0.0;
  std::vector<double> logit_grads;  // softmax(logits + log counts) - onehot(label)
};

/// Calibrated cross-entropy with per-class counts already logged.
/// Hot path for the trainer; balanced_softmax_loss wraps it.
inline SoftmaxLossValue balanced_softmax_from_log_counts(std::span<const double> logits,
                                                         int label,
                                                         std::span<const double> log_counts) {
  const std::size_t k = logits.size();
  if (log_counts.size() != k)
    raise(ErrorCode::InvalidInput, "balanced_softmax: logits/counts length mismatch");
  if (label < 0 || static_cast<std::size_t>(label) >= k)
    raise(ErrorCode::InvalidLabel, "balanced_softmax: label " + std::to_string(label));
  if (!all_finite(logits)) raise(ErrorCode::InvalidVector, "balanced_softmax: non-finite logit");

  SoftmaxLossValue out;
  out.logit_grads.resize(k);
  double max_z = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) max_z = std::max(max_z, logits[i] + log_counts[i]);
  double sum_exp = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.logit_grads[i] = std::exp(logits[i] + log_counts[i] - max_z);
    sum_exp += out.logit_grads[i];
  }
  const double lse = max_z + std::log(sum_exp);
  out.value = lse - (logits[static_cast<std::size_t>(label)] +
                     log_counts[static_cast<std::size_t>(label)]);
  for (std::size_t i = 0; i < k; ++i) out.logit_grads[i] /= sum_exp;
  out.logit_grads[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

/// -log( n_y e^{l_y} / sum_i n_i e^{l_i} ), via a log-sum-exp shift.
inline SoftmaxLossValue balanced_softmax_loss(std::span<const double> logits, int label,
                                              std::span<const int> class_counts) {
  if (class_counts.size() != logits.size())
    raise(ErrorCode::InvalidInput, "balanced_softmax: logits/counts length mismatch");
  std::vector<double> log_counts(class_counts.size());
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    if (class_counts[i] < 1)
      raise(ErrorCode::InvalidCounts, "balanced_softmax: count for class " +
                                          std::to_string(i) + " must be >= 1");
    log_counts[i] = std::log(static_cast<double>(class_counts[i]));
  }
  return balanced_softmax_from_log_counts(logits, label, log_counts);
}

/// Weighted total objective; both terms default to weight 1.
inline double total_loss(double alignment_value, double calibration_value,
                         double lambda_align = 1.0, double lambda_cal = 1.0) {
  if (lambda_align < 0.0 || lambda_cal < 0.0)
    raise(ErrorCode::InvalidConfig, "total_loss: weights must be >= 0");
  return lambda_align * alignment_value + lambda_cal * calibration_value;
}

}  // namespace xmlt
