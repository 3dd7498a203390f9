#pragma once

// Shared test utilities: central finite differences (the independent oracle
// for every analytic gradient), smoothness filters for hinge losses, and
// small random-instance generators.

#include <cmath>
#include <functional>
#include <vector>

#include "xmlt/core.hpp"
#include "xmlt/losses.hpp"
#include "xmlt/model.hpp"
#include "xmlt/rng.hpp"

namespace xmlt::testing {

inline constexpr double kFdStep = 1e-6;

/// Central finite difference of f along coordinate i of x.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i,
                                 double h = kFdStep) {
  const double original = x[i];
  x[i] = original + h;
  const double up = f(x);
  x[i] = original - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

/// Relative agreement check suited to gradient vectors: components where both
/// sides are ~0 agree trivially; otherwise |a-fd| <= tol * max(|a|,|fd|,1).
inline bool gradients_match(double analytic, double numeric, double tol = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1.0});
  return std::abs(analytic - numeric) <= tol * scale;
}

inline std::vector<double> random_vector(Rng& rng, int dim, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = rng.next_uniform(lo, hi);
  return v;
}

/// Rejects triplet instances near a hinge boundary or a hardest-negative tie,
/// where the subgradient convention makes finite differences meaningless.
inline bool triplet_instance_is_smooth(const TripletBatch& batch, double margin,
                                       double tol = 1e-4) {
  const std::size_t n = batch.image_embs.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (bool image_anchor : {true, false}) {
      const auto& anchor = image_anchor ? batch.image_embs[i] : batch.text_embs[i];
      const auto& pos = image_anchor ? batch.text_embs[i] : batch.image_embs[i];
      const double pos_sim = cosine_similarity(anchor, pos);
      double best = -2.0, second = -2.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (batch.labels[j] == batch.labels[i]) continue;
        const auto& neg = image_anchor ? batch.text_embs[j] : batch.image_embs[j];
        const double s = cosine_similarity(anchor, neg);
        if (std::abs(s - pos_sim + margin) < tol) return false;  // hinge boundary
        if (s > best) {
          second = best;
          best = s;
        } else if (s > second) {
          second = s;
        }
      }
      if (second > -2.0 && best - second < tol) return false;  // selection tie
    }
  }
  return true;
}

/// Random triplet batch with >= 2 distinct labels, unit-vector embeddings.
inline TripletBatch make_random_triplet_batch(Rng& rng, int max_rows = 6, int max_dim = 8) {
  const int n = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_rows - 1)));
  const int dim = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_dim - 1)));
  TripletBatch batch;
  for (int i = 0; i < n; ++i) {
    batch.image_embs.push_back(rng.next_unit_vector(dim));
    batch.text_embs.push_back(rng.next_unit_vector(dim));
    batch.labels.push_back(static_cast<int>(rng.next_below(3)));
  }
  bool has_negative = false;
  for (int i = 1; i < n; ++i) has_negative |= batch.labels[i] != batch.labels[0];
  if (!has_negative) batch.labels[0] = batch.labels[0] == 0 ? 1 : 0;
  return batch;
}

// ---------------------------------------------------------------------------
// Whole-model instances for end-to-end gradient checks
// ---------------------------------------------------------------------------

inline std::vector<double> flatten_params(const ModelParams& p) {
  std::vector<double> flat;
  for (const AffineMap* m : {&p.image_head, &p.text_head, &p.classifier}) {
    flat.insert(flat.end(), m->weight.begin(), m->weight.end());
    flat.insert(flat.end(), m->bias.begin(), m->bias.end());
  }
  return flat;
}

inline void set_params_from_flat(ModelParams& p, const std::vector<double>& flat) {
  std::size_t pos = 0;
  for (AffineMap* m : {&p.image_head, &p.text_head, &p.classifier}) {
    for (double& w : m->weight) w = flat[pos++];
    for (double& b : m->bias) b = flat[pos++];
  }
}

inline std::vector<double> flatten_grads(const Gradients& g) {
  std::vector<double> flat;
  for (const AffineMap* m : {&g.image_head, &g.text_head, &g.classifier}) {
    flat.insert(flat.end(), m->weight.begin(), m->weight.end());
    flat.insert(flat.end(), m->bias.begin(), m->bias.end());
  }
  return flat;
}

struct ModelInstance {
  ModelParams params;
  std::vector<Sample> samples;
  ForwardConfig config;

  std::vector<const Sample*> batch_view() const {
    std::vector<const Sample*> view;
    for (const Sample& s : samples) view.push_back(&s);
    return view;
  }
};

inline double model_loss(const ModelInstance& inst) {
  Gradients scratch = Gradients::zeros_like(inst.params);
  return forward_backward(inst.params, inst.batch_view(), inst.config, scratch).total;
}

inline ModelInstance make_random_model_instance(Rng& rng, int feature_dim = 4,
                                                int text_dim = 4, int shared_dim = 3,
                                                int num_classes = 3, int batch = 4) {
  ModelInstance inst;
  inst.params =
      init_params(feature_dim, text_dim, shared_dim, num_classes, Rng(rng.next_u64()));
  // Keep pre-activations away from zero norm by adding a bias offset.
  for (double& b : inst.params.image_head.bias) b = rng.next_uniform(-0.2, 0.2);
  for (double& b : inst.params.text_head.bias) b = rng.next_uniform(-0.2, 0.2);

  inst.config.lambda_align = rng.next_unit() < 0.2 ? 0.0 : 1.0;
  inst.config.lambda_cal = rng.next_unit() < 0.2 ? 0.5 : 1.0;
  inst.config.margin = 0.3;
  inst.config.mining = rng.next_unit() < 0.5 ? Mining::HardestInBatch : Mining::AllPairsMean;
  inst.config.use_title = rng.next_unit() < 0.8;
  inst.config.use_ingredients = rng.next_unit() < 0.8;
  inst.config.renormalize_fused = rng.next_unit() < 0.3;
  inst.config.class_counts.assign(static_cast<std::size_t>(num_classes), 1);
  for (int& c : inst.config.class_counts) c = 1 + static_cast<int>(rng.next_below(40));

  for (int i = 0; i < batch; ++i) {
    Sample s;
    s.id = static_cast<std::uint64_t>(i);
    s.label = i < 2 ? i % num_classes  // guarantee two distinct labels
                    : static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_classes)));
    s.domain = i % 2 == 0 ? DomainTag::Source : DomainTag::Target;
    s.image_feature = random_vector(rng, feature_dim, -1.5, 1.5);
    s.title_feature = random_vector(rng, text_dim, -1.0, 1.0);
    const int num_ingredients = static_cast<int>(rng.next_below(3));
    for (int g = 0; g < num_ingredients; ++g)
      s.ingredient_features.push_back(random_vector(rng, text_dim, -1.0, 1.0));
    inst.samples.push_back(std::move(s));
  }
  return inst;
}

/// The alignment term must sit away from its nondifferentiable set for finite
/// differences to apply; checked on the forward embeddings.
inline bool model_instance_is_smooth(const ModelInstance& inst) {
  if (inst.config.lambda_align == 0.0) return true;
  TripletBatch tb;
  for (const Sample& s : inst.samples) {
    tb.image_embs.push_back(encode_image(inst.params, s.image_feature));
    tb.text_embs.push_back(encode_text(inst.params, s.title_feature, s.ingredient_features));
    tb.labels.push_back(s.label);
  }
  for (const auto& v : tb.image_embs)
    if (norm(v) <= 1e-6) return false;
  for (const auto& v : tb.text_embs)
    if (norm(v) <= 1e-6) return false;
  return triplet_instance_is_smooth(tb, inst.config.margin);
}

}  // namespace xmlt::testing
