#pragma once

// Trainable projection heads and classifier.
//
// An affine image head and an affine text head project raw features into a
// shared space; both outputs are L2-normalized. The classification embedding
// adds the two modalities (not re-normalized by default). Backpropagation
// through normalization, pooling, concatenation, addition and the affine maps
// is closed-form; forward_backward is a pure function of (params, batch).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xmlt/core.hpp"
#include "xmlt/losses.hpp"
#include "xmlt/rng.hpp"

namespace xmlt {

struct AffineMap {
  int in = 0;
  int out = 0;
  std::vector<double> weight;  // row-major [out][in]
  std::vector<double> bias;    // [out]

  static AffineMap zeros(int in, int out) {
    AffineMap m;
    m.in = in;
    m.out = out;
    m.weight.assign(static_cast<std::size_t>(in) * static_cast<std::size_t>(out), 0.0);
    m.bias.assign(static_cast<std::size_t>(out), 0.0);
    return m;
  }
};

inline std::vector<double> affine_apply(const AffineMap& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.in)
    raise(ErrorCode::DimMismatch, "affine_apply: input dim " + std::to_string(x.size()) +
                                      " != " + std::to_string(m.in));
  std::vector<double> y(static_cast<std::size_t>(m.out));
  for (int r = 0; r < m.out; ++r) {
    const double* row = m.weight.data() + static_cast<std::size_t>(r) * m.in;
    double acc = m.bias[static_cast<std::size_t>(r)];
    for (int c = 0; c < m.in; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
  return y;
}

struct ModelParams {
  AffineMap image_head;  // feature_dim -> shared_dim
  AffineMap text_head;   // 2*text_dim -> shared_dim (concat of title, pooled ingredients)
  AffineMap classifier;  // shared_dim -> num_classes
  int feature_dim = 0;
  int text_dim = 0;
  int shared_dim = 0;
  int num_classes = 0;
  // Inference-time augmentation contract, persisted in the checkpoint.
  bool use_title = true;
  bool use_ingredients = true;
  bool renormalize_fused = false;
};

struct Gradients {
  AffineMap image_head;
  AffineMap text_head;
  AffineMap classifier;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    g.image_head = AffineMap::zeros(p.image_head.in, p.image_head.out);
    g.text_head = AffineMap::zeros(p.text_head.in, p.text_head.out);
    g.classifier = AffineMap::zeros(p.classifier.in, p.classifier.out);
    return g;
  }
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero. Draw order: image head,
/// text head, classifier, each row-major.
inline ModelParams init_params(int feature_dim, int text_dim, int shared_dim, int num_classes,
                               Rng rng) {
  if (feature_dim < 1 || text_dim < 1 || shared_dim < 1 || num_classes < 1)
    raise(ErrorCode::InvalidConfig, "init_params: dims must be >= 1");
  ModelParams p;
  p.feature_dim = feature_dim;
  p.text_dim = text_dim;
  p.shared_dim = shared_dim;
  p.num_classes = num_classes;
  auto init_map = [&rng](int in, int out) {
    AffineMap m = AffineMap::zeros(in, out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : m.weight) w = rng.next_uniform(-scale, scale);
    return m;
  };
  p.image_head = init_map(feature_dim, shared_dim);
  p.text_head = init_map(2 * text_dim, shared_dim);
  p.classifier = init_map(shared_dim, num_classes);
  return p;
}

/// e_img = normalize(W_img raw + b_img); degenerate pre-activations pass
/// through unchanged (an all-zero output marks the degenerate case).
inline EmbeddingVector encode_image(const ModelParams& params, const EmbeddingVector& raw) {
  return l2_normalize(affine_apply(params.image_head, raw)).value;
}

/// Element-wise mean; the empty list pools to the zero vector.
inline EmbeddingVector pool_ingredients(std::span<const EmbeddingVector> vectors,
                                        int text_dim) {
  EmbeddingVector pooled(static_cast<std::size_t>(text_dim), 0.0);
  if (vectors.empty()) return pooled;
  for (const EmbeddingVector& v : vectors) {
    if (static_cast<int>(v.size()) != text_dim)
      raise(ErrorCode::DimMismatch, "pool_ingredients: mixed dims");
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += v[k];
  }
  const double inv = 1.0 / static_cast<double>(vectors.size());
  for (double& x : pooled) x *= inv;
  return pooled;
}

/// e_txt = normalize(W_txt concat(title, pooled ingredients) + b_txt).
inline EmbeddingVector encode_text(const ModelParams& params, const EmbeddingVector& title,
                                   std::span<const EmbeddingVector> ingredients) {
  if (static_cast<int>(title.size()) != params.text_dim)
    raise(ErrorCode::DimMismatch, "encode_text: title dim");
  EmbeddingVector pooled = pool_ingredients(ingredients, params.text_dim);
  EmbeddingVector concat;
  concat.reserve(title.size() + pooled.size());
  concat.insert(concat.end(), title.begin(), title.end());
  concat.insert(concat.end(), pooled.begin(), pooled.end());
  return l2_normalize(affine_apply(params.text_head, concat)).value;
}

/// Element-wise addition of the two modalities; not re-normalized.
inline EmbeddingVector augment(const EmbeddingVector& image_emb,
                               const EmbeddingVector& text_emb) {
  if (image_emb.size() != text_emb.size())
    raise(ErrorCode::DimMismatch, "augment: dims differ");
  EmbeddingVector fused(image_emb.size());
  for (std::size_t k = 0; k < fused.size(); ++k) fused[k] = image_emb[k] + text_emb[k];
  return fused;
}

inline std::vector<double> classify(const ModelParams& params,
                                    const EmbeddingVector& fused) {
  return affine_apply(params.classifier, fused);
}

/// Argmax with ties broken toward the lowest class index.
inline int predicted_class(std::span<const double> logits) {
  if (logits.empty()) raise(ErrorCode::InvalidInput, "predicted_class: empty logits");
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i)
    if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Batched forward/backward
// ---------------------------------------------------------------------------

struct ForwardConfig {
  double lambda_align = 1.0;
  double lambda_cal = 1.0;
  double margin = 0.3;
  Mining mining = Mining::HardestInBatch;
  // Augmentation content switches: which text sources feed the classifier
  // embedding. Alignment always sees the full generated text.
  bool use_title = true;
  bool use_ingredients = true;
  bool renormalize_fused = false;
  std::vector<int> class_counts;  // calibration counts (uniform => plain CE)
};

struct BatchResult {
  double total = 0.0;
  double alignment = 0.0;    // unweighted term values
  double calibration = 0.0;
  bool align_no_negatives = false;
  int correct_source = 0, total_source = 0;
  int correct_target = 0, total_target = 0;
};

namespace detail {

// Backward through y = x/||x||: dx = (dy - y (y . dy)) / ||x||.
// Degenerate inputs passed through normalization unchanged, so dx = dy.
inline std::vector<double> normalize_backward(std::span<const double> y, double input_norm,
                                              bool degenerate,
                                              std::span<const double> dy) {
  std::vector<double> dx(dy.begin(), dy.end());
  if (degenerate) return dx;
  const double proj = dot(y, dy);
  for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = (dy[k] - y[k] * proj) / input_norm;
  return dx;
}

inline void accumulate_affine_grads(AffineMap& grad, std::span<const double> d_out,
                                    std::span<const double> in) {
  for (int r = 0; r < grad.out; ++r) {
    const double g = d_out[static_cast<std::size_t>(r)];
    if (g == 0.0) continue;
    double* row = grad.weight.data() + static_cast<std::size_t>(r) * grad.in;
    for (int c = 0; c < grad.in; ++c) row[c] += g * in[static_cast<std::size_t>(c)];
    grad.bias[static_cast<std::size_t>(r)] += g;
  }
}

inline std::vector<double> affine_backward_input(const AffineMap& m,
                                                 std::span<const double> d_out) {
  std::vector<double> d_in(static_cast<std::size_t>(m.in), 0.0);
  for (int r = 0; r < m.out; ++r) {
    const double g = d_out[static_cast<std::size_t>(r)];
    if (g == 0.0) continue;
    const double* row = m.weight.data() + static_cast<std::size_t>(r) * m.in;
    for (int c = 0; c < m.in; ++c) d_in[static_cast<std::size_t>(c)] += g * row[c];
  }
  return d_in;
}

struct TextPath {
  std::vector<double> concat;   // [title ; pooled]
  std::vector<double> pre;      // W concat + b
  EmbeddingVector emb;          // normalized
  double pre_norm = 0.0;
  bool degenerate = false;
  std::size_t num_ingredients = 0;
};

inline TextPath run_text_head(const ModelParams& params, const EmbeddingVector& title,
                              std::span<const EmbeddingVector> ingredients, bool with_title,
                              bool with_ingredients) {
  TextPath t;
  t.num_ingredients = ingredients.size();
  EmbeddingVector pooled = with_ingredients
                               ? pool_ingredients(ingredients, params.text_dim)
                               : EmbeddingVector(static_cast<std::size_t>(params.text_dim), 0.0);
  t.concat.reserve(2 * static_cast<std::size_t>(params.text_dim));
  if (with_title) {
    t.concat.insert(t.concat.end(), title.begin(), title.end());
  } else {
    t.concat.assign(static_cast<std::size_t>(params.text_dim), 0.0);
  }
  t.concat.insert(t.concat.end(), pooled.begin(), pooled.end());
  t.pre = affine_apply(params.text_head, t.concat);
  t.pre_norm = norm(t.pre);
  Normalized nz = l2_normalize(t.pre);
  t.emb = std::move(nz.value);
  t.degenerate = nz.degenerate;
  return t;
}

}  // namespace detail

/// Full-batch forward and exact backward. The merged batch carries samples of
/// both domains; the alignment loss runs over every (image, text) pair in it.
/// Gradients are accumulated into `grads` (pre-zeroed by the caller).
inline BatchResult forward_backward(const ModelParams& params,
                                    std::span<const Sample* const> batch,
                                    const ForwardConfig& cfg, Gradients& grads) {
  if (cfg.lambda_align < 0.0 || cfg.lambda_cal < 0.0)
    raise(ErrorCode::InvalidConfig, "forward_backward: loss weights must be >= 0");
  const std::size_t n = batch.size();
  if (n == 0) raise(ErrorCode::InvalidInput, "forward_backward: empty batch");
  if (static_cast<int>(cfg.class_counts.size()) != params.num_classes)
    raise(ErrorCode::InvalidCounts, "forward_backward: class_counts size");
  std::vector<double> log_counts(cfg.class_counts.size());
  for (std::size_t i = 0; i < log_counts.size(); ++i) {
    if (cfg.class_counts[i] < 1)
      raise(ErrorCode::InvalidCounts, "forward_backward: count < 1 for class " +
                                          std::to_string(i));
    log_counts[i] = std::log(static_cast<double>(cfg.class_counts[i]));
  }

  const bool augment_on = cfg.use_title || cfg.use_ingredients;
  const bool full_text_reusable = cfg.use_title && cfg.use_ingredients;

  // ---- forward ----
  struct PerSample {
    std::vector<double> image_pre;
    EmbeddingVector image_emb;
    double image_norm = 0.0;
    bool image_degenerate = false;
    detail::TextPath full_text;  // alignment path
    detail::TextPath aug_text;   // classifier path (may alias full_text)
    std::vector<double> fused_pre;  // e_img + e_txt before optional renorm
    EmbeddingVector fused;
    double fused_norm = 0.0;
    bool fused_degenerate = false;
    std::vector<double> logit_grads;
  };
  std::vector<PerSample> fw(n);

  BatchResult result;
  const bool need_alignment = cfg.lambda_align > 0.0;
  double calibration_sum = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = *batch[i];
    PerSample& f = fw[i];
    if (s.label < 0 || s.label >= params.num_classes)
      raise(ErrorCode::InvalidLabel, "forward_backward: label out of range");

    f.image_pre = affine_apply(params.image_head, s.image_feature);
    f.image_norm = norm(f.image_pre);
    Normalized nz = l2_normalize(f.image_pre);
    f.image_emb = std::move(nz.value);
    f.image_degenerate = nz.degenerate;

    if (need_alignment)
      f.full_text = detail::run_text_head(params, s.title_feature, s.ingredient_features,
                                          true, true);
    if (augment_on) {
      if (full_text_reusable && need_alignment) {
        f.aug_text = f.full_text;
      } else {
        f.aug_text = detail::run_text_head(params, s.title_feature, s.ingredient_features,
                                           cfg.use_title, cfg.use_ingredients);
      }
      f.fused_pre = augment(f.image_emb, f.aug_text.emb);
    } else {
      f.fused_pre = f.image_emb;
    }
    if (cfg.renormalize_fused) {
      f.fused_norm = norm(f.fused_pre);
      Normalized fz = l2_normalize(f.fused_pre);
      f.fused = std::move(fz.value);
      f.fused_degenerate = fz.degenerate;
    } else {
      f.fused = f.fused_pre;
    }

    std::vector<double> logits = classify(params, f.fused);
    SoftmaxLossValue cal = balanced_softmax_from_log_counts(logits, s.label, log_counts);
    calibration_sum += cal.value;
    f.logit_grads = std::move(cal.logit_grads);

    const bool correct = predicted_class(logits) == s.label;
    if (s.domain == DomainTag::Source) {
      ++result.total_source;
      result.correct_source += correct ? 1 : 0;
    } else {
      ++result.total_target;
      result.correct_target += correct ? 1 : 0;
    }
  }

  result.calibration = calibration_sum / static_cast<double>(n);

  TripletLossValue align;
  if (need_alignment) {
    TripletBatch tb;
    tb.image_embs.reserve(n);
    tb.text_embs.reserve(n);
    tb.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      tb.image_embs.push_back(fw[i].image_emb);
      tb.text_embs.push_back(fw[i].full_text.emb);
      tb.labels.push_back(batch[i]->label);
    }
    align = triplet_alignment_loss(tb, cfg.margin, cfg.mining);
    result.alignment = align.value;
    result.align_no_negatives = align.no_negatives;
  }

  result.total = total_loss(result.alignment, result.calibration, cfg.lambda_align,
                            cfg.lambda_cal);

  // ---- backward ----
  const double cal_scale = cfg.lambda_cal / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = *batch[i];
    PerSample& f = fw[i];

    std::vector<double> d_fused(static_cast<std::size_t>(params.shared_dim), 0.0);
    if (cfg.lambda_cal > 0.0) {
      for (double& g : f.logit_grads) g *= cal_scale;
      detail::accumulate_affine_grads(grads.classifier, f.logit_grads, f.fused);
      d_fused = detail::affine_backward_input(params.classifier, f.logit_grads);
    }
    if (cfg.renormalize_fused)
      d_fused = detail::normalize_backward(f.fused, f.fused_norm, f.fused_degenerate, d_fused);

    // d wrt the two normalized embeddings feeding the fused vector
    std::vector<double> d_image_emb = d_fused;  // identity for both addends
    if (need_alignment && !align.no_negatives)
      add_scaled(d_image_emb, cfg.lambda_align, align.image_grads[i]);

    std::vector<double> d_image_pre = detail::normalize_backward(
        f.image_emb, f.image_norm, f.image_degenerate, d_image_emb);
    detail::accumulate_affine_grads(grads.image_head, d_image_pre, s.image_feature);

    auto backprop_text = [&](const detail::TextPath& t, std::span<const double> d_emb) {
      std::vector<double> d_pre =
          detail::normalize_backward(t.emb, t.pre_norm, t.degenerate, d_emb);
      detail::accumulate_affine_grads(grads.text_head, d_pre, t.concat);
    };

    if (augment_on && need_alignment && full_text_reusable && !align.no_negatives) {
      // shared path: classifier and alignment gradients add
      std::vector<double> d_text = d_fused;
      add_scaled(d_text, cfg.lambda_align, align.text_grads[i]);
      backprop_text(f.full_text, d_text);
    } else {
      if (augment_on) backprop_text(f.aug_text, d_fused);
      if (need_alignment && !align.no_negatives) {
        std::vector<double> d_text(static_cast<std::size_t>(params.shared_dim), 0.0);
        add_scaled(d_text, cfg.lambda_align, align.text_grads[i]);
        backprop_text(f.full_text, d_text);
      }
    }
  }

  if (!std::isfinite(result.total))
    raise(ErrorCode::TrainingDiverged, "non-finite loss");
  return result;
}

}  // namespace xmlt
