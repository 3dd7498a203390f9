#pragma once

// SGD training loop with per-domain batching and ablation switches.
//
// An epoch is one pass over the source training set. Each step merges
// batch_per_domain source samples with batch_per_domain target samples; the
// shorter domain cycles through its shuffled order so every batch has both
// halves. The loop is strictly sequential, so identical (config, data, seed)
// reproduce bit-identical parameters.
//
// Ablation switches:
//   use_alignment  off => lambda_align = 0
//   use_calibration off => uniform class counts (plain cross-entropy)
//   use_title / use_ingredients gate which text sources feed the fused
//   classification embedding; with both off the classifier sees the image
//   embedding alone. The alignment loss always pairs images with their full
//   generated text. All four off is the ERM baseline.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xmlt/core.hpp"
#include "xmlt/losses.hpp"
#include "xmlt/model.hpp"
#include "xmlt/rng.hpp"

namespace xmlt {

enum class CountMode { Combined, TargetOnly, SourceOnly };

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_per_domain = 128;
  int epochs = 40;
  double lambda_align = 1.0;
  double lambda_cal = 1.0;
  double margin = 0.3;
  double momentum = 0.0;
  int shared_dim = 32;
  bool use_alignment = true;
  bool use_calibration = true;
  bool use_title = true;
  bool use_ingredients = true;
  CountMode count_mode = CountMode::Combined;
  Mining mining = Mining::HardestInBatch;
  bool renormalize_fused = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate < 0.0) raise(ErrorCode::InvalidConfig, "learning_rate must be >= 0");
    if (batch_per_domain < 2) raise(ErrorCode::InvalidConfig, "batch_per_domain must be >= 2");
    if (epochs < 1) raise(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (lambda_align < 0.0 || lambda_cal < 0.0)
      raise(ErrorCode::InvalidConfig, "loss weights must be >= 0");
    if (margin < 0.0) raise(ErrorCode::InvalidConfig, "margin must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
      raise(ErrorCode::InvalidConfig, "momentum must lie in [0,1)");
    if (shared_dim < 1) raise(ErrorCode::InvalidConfig, "shared_dim must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double total_loss = 0.0;
  double alignment_loss = 0.0;
  double calibration_loss = 0.0;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  double wall_seconds = 0.0;  // excluded from determinism comparisons
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct MergedBatch {
  std::vector<int> source_indices;
  std::vector<int> target_indices;
};

/// Shuffles each domain independently, then pairs consecutive source blocks
/// with target blocks taken modulo the target order. floor(|S|/b) batches;
/// trailing partial source batches are dropped.
inline std::vector<MergedBatch> make_epoch_batches(const Dataset& source,
                                                   const Dataset& target,
                                                   int batch_per_domain, Rng& rng) {
  if (source.samples.empty() || target.samples.empty())
    raise(ErrorCode::InvalidInput, "make_epoch_batches: empty dataset");
  if (batch_per_domain < 1)
    raise(ErrorCode::InvalidConfig, "make_epoch_batches: batch_per_domain must be >= 1");
  std::vector<int> src_order(source.samples.size());
  std::vector<int> tgt_order(target.samples.size());
  for (std::size_t i = 0; i < src_order.size(); ++i) src_order[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < tgt_order.size(); ++i) tgt_order[i] = static_cast<int>(i);
  rng.shuffle(src_order);
  rng.shuffle(tgt_order);

  const std::size_t b = static_cast<std::size_t>(batch_per_domain);
  const std::size_t num_batches = src_order.size() / b;
  std::vector<MergedBatch> batches(num_batches);
  for (std::size_t k = 0; k < num_batches; ++k) {
    MergedBatch& batch = batches[k];
    batch.source_indices.assign(src_order.begin() + static_cast<std::ptrdiff_t>(k * b),
                                src_order.begin() + static_cast<std::ptrdiff_t>((k + 1) * b));
    batch.target_indices.reserve(b);
    for (std::size_t m = 0; m < b; ++m)
      batch.target_indices.push_back(tgt_order[(k * b + m) % tgt_order.size()]);
  }
  return batches;
}

/// Calibration counts under the configured mode; uniform when calibration is
/// switched off (plain cross-entropy).
inline std::vector<int> calibration_counts(const Dataset& source, const Dataset& target,
                                           const TrainConfig& cfg) {
  const int num_classes = source.num_classes;
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  if (!cfg.use_calibration) {
    counts.assign(static_cast<std::size_t>(num_classes), 1);
    return counts;
  }
  const std::vector<int> src = class_counts(source, DomainTag::Source);
  const std::vector<int> tgt = class_counts(target, DomainTag::Target);
  for (int c = 0; c < num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    switch (cfg.count_mode) {
      case CountMode::Combined: counts[cc] = src[cc] + tgt[cc]; break;
      case CountMode::TargetOnly: counts[cc] = tgt[cc]; break;
      case CountMode::SourceOnly: counts[cc] = src[cc]; break;
    }
  }
  return counts;
}

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

inline TrainResult train(const Dataset& source, const Dataset& target,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (source.num_classes != target.num_classes)
    raise(ErrorCode::InvalidInput, "train: datasets disagree on num_classes");
  if (source.feature_dim != target.feature_dim || source.text_dim != target.text_dim)
    raise(ErrorCode::DimMismatch, "train: datasets disagree on feature dims");
  if (source.samples.empty() || target.samples.empty())
    raise(ErrorCode::InvalidInput, "train: empty training split");

  Rng root(cfg.seed);
  ModelParams params = init_params(source.feature_dim, source.text_dim, cfg.shared_dim,
                                   source.num_classes, root.split(1));
  params.use_title = cfg.use_title;
  params.use_ingredients = cfg.use_ingredients;
  params.renormalize_fused = cfg.renormalize_fused;

  ForwardConfig fwd;
  fwd.lambda_align = cfg.use_alignment ? cfg.lambda_align : 0.0;
  fwd.lambda_cal = cfg.lambda_cal;
  fwd.margin = cfg.margin;
  fwd.mining = cfg.mining;
  fwd.use_title = cfg.use_title;
  fwd.use_ingredients = cfg.use_ingredients;
  fwd.renormalize_fused = cfg.renormalize_fused;
  fwd.class_counts = calibration_counts(source, target, cfg);

  Gradients velocity = Gradients::zeros_like(params);
  Rng batch_rng = root.split(2);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<MergedBatch> batches =
        make_epoch_batches(source, target, cfg.batch_per_domain, batch_rng);
    if (batches.empty())
      raise(ErrorCode::InvalidConfig,
            "train: batch_per_domain exceeds the source training set");

    EpochRecord record;
    record.epoch = epoch;
    long long correct_src = 0, total_src = 0, correct_tgt = 0, total_tgt = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<const Sample*> merged;
      merged.reserve(batches[bi].source_indices.size() + batches[bi].target_indices.size());
      for (int idx : batches[bi].source_indices)
        merged.push_back(&source.samples[static_cast<std::size_t>(idx)]);
      for (int idx : batches[bi].target_indices)
        merged.push_back(&target.samples[static_cast<std::size_t>(idx)]);

      Gradients grads = Gradients::zeros_like(params);
      BatchResult batch_result;
      try {
        batch_result = forward_backward(params, merged, fwd, grads);
      } catch (const Error& e) {
        // Inputs were finite at entry, so a non-finite or collapsed
        // intermediate means the optimization blew up; report its location.
        if (e.code() == ErrorCode::TrainingDiverged || e.code() == ErrorCode::InvalidVector ||
            e.code() == ErrorCode::DegenerateVector)
          raise(ErrorCode::TrainingDiverged, "epoch " + std::to_string(epoch) + " batch " +
                                                 std::to_string(bi) + ": " + e.what());
        throw;
      }
      if (!std::isfinite(batch_result.total))
        raise(ErrorCode::TrainingDiverged,
              "epoch " + std::to_string(epoch) + " batch " + std::to_string(bi));

      record.total_loss += batch_result.total;
      record.alignment_loss += batch_result.alignment;
      record.calibration_loss += batch_result.calibration;
      correct_src += batch_result.correct_source;
      total_src += batch_result.total_source;
      correct_tgt += batch_result.correct_target;
      total_tgt += batch_result.total_target;

      // SGD step, optional classical momentum.
      auto step = [&](AffineMap& w, AffineMap& v, const AffineMap& g) {
        if (cfg.momentum > 0.0) {
          for (std::size_t i = 0; i < w.weight.size(); ++i) {
            v.weight[i] = cfg.momentum * v.weight[i] + g.weight[i];
            w.weight[i] -= cfg.learning_rate * v.weight[i];
          }
          for (std::size_t i = 0; i < w.bias.size(); ++i) {
            v.bias[i] = cfg.momentum * v.bias[i] + g.bias[i];
            w.bias[i] -= cfg.learning_rate * v.bias[i];
          }
        } else {
          for (std::size_t i = 0; i < w.weight.size(); ++i)
            w.weight[i] -= cfg.learning_rate * g.weight[i];
          for (std::size_t i = 0; i < w.bias.size(); ++i)
            w.bias[i] -= cfg.learning_rate * g.bias[i];
        }
      };
      step(params.image_head, velocity.image_head, grads.image_head);
      step(params.text_head, velocity.text_head, grads.text_head);
      step(params.classifier, velocity.classifier, grads.classifier);
    }

    const double inv_batches = 1.0 / static_cast<double>(batches.size());
    record.total_loss *= inv_batches;
    record.alignment_loss *= inv_batches;
    record.calibration_loss *= inv_batches;
    record.source_accuracy =
        total_src > 0 ? static_cast<double>(correct_src) / static_cast<double>(total_src) : 0.0;
    record.target_accuracy =
        total_tgt > 0 ? static_cast<double>(correct_tgt) / static_cast<double>(total_tgt) : 0.0;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(record);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace xmlt
