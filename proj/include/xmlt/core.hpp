#pragma once

// Core domain types and vector math shared by every xmlt module.
//
// Embeddings are plain std::vector<double>; all loss and gradient math runs
// in 64-bit floats so numerical tests are deterministic and finite-difference
// checks are meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmlt {

enum class ErrorCode {
  InvalidVector,
  DimMismatch,
  DegenerateVector,
  InvalidConfig,
  InvalidInput,
  InvalidCounts,
  InvalidLabel,
  TrainingDiverged,
  BadCheckpoint,
  NotAnEmbeddingFile,
  CorruptFile,
  InvalidPayload,
  WriteError,
  Undefined,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidVector: return "InvalidVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::DegenerateVector: return "DegenerateVector";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidCounts: return "InvalidCounts";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::NotAnEmbeddingFile: return "NotAnEmbeddingFile";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::InvalidPayload: return "InvalidPayload";
    case ErrorCode::WriteError: return "WriteError";
    case ErrorCode::Undefined: return "Undefined";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

/// Fixed-dimension feature vector; dim == size().
using EmbeddingVector = std::vector<double>;

enum class DomainTag : std::uint8_t { Source = 0, Target = 1 };

inline const char* domain_name(DomainTag d) {
  return d == DomainTag::Source ? "source" : "target";
}

enum class ClassGroup : std::uint8_t { Head = 0, Medium = 1, Tail = 2 };

inline const char* group_name(ClassGroup g) {
  switch (g) {
    case ClassGroup::Head: return "head";
    case ClassGroup::Medium: return "medium";
    case ClassGroup::Tail: return "tail";
  }
  return "?";
}

/// One training/test instance. Features enter as numeric vectors; there is
/// no image decoding or tokenization anywhere in the library.
struct Sample {
  std::uint64_t id = 0;
  EmbeddingVector image_feature;
  EmbeddingVector title_feature;
  std::vector<EmbeddingVector> ingredient_features;
  int label = 0;
  DomainTag domain = DomainTag::Source;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  int feature_dim = 0;
  int text_dim = 0;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Per-class sample counts of one domain.
inline std::vector<int> class_counts(const Dataset& ds, DomainTag domain) {
  std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (const Sample& s : ds.samples) {
    if (s.domain == domain) ++counts[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

/// Checks every dataset invariant; throws on the first violation.
inline void validate_dataset(const Dataset& ds) {
  if (ds.num_classes < 1) raise(ErrorCode::InvalidInput, "num_classes must be >= 1");
  if (ds.feature_dim < 1 || ds.text_dim < 1)
    raise(ErrorCode::InvalidInput, "dims must be >= 1");
  for (const Sample& s : ds.samples) {
    if (s.label < 0 || s.label >= ds.num_classes)
      raise(ErrorCode::InvalidInput,
            "label " + std::to_string(s.label) + " out of range for sample " +
                std::to_string(s.id));
    if (static_cast<int>(s.image_feature.size()) != ds.feature_dim)
      raise(ErrorCode::DimMismatch, "image feature dim of sample " + std::to_string(s.id));
    if (static_cast<int>(s.title_feature.size()) != ds.text_dim)
      raise(ErrorCode::DimMismatch, "title feature dim of sample " + std::to_string(s.id));
    for (const EmbeddingVector& g : s.ingredient_features)
      if (static_cast<int>(g.size()) != ds.text_dim)
        raise(ErrorCode::DimMismatch, "ingredient dim of sample " + std::to_string(s.id));
    if (!all_finite(s.image_feature) || !all_finite(s.title_feature))
      raise(ErrorCode::InvalidPayload, "non-finite feature in sample " + std::to_string(s.id));
  }
}

// ---------------------------------------------------------------------------
// Vector math
// ---------------------------------------------------------------------------

/// Norm threshold below which a vector counts as degenerate (zero direction).
inline constexpr double kNormEps = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) raise(ErrorCode::DimMismatch, "dot: sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// y += alpha * x
inline void add_scaled(std::vector<double>& y, double alpha, std::span<const double> x) {
  if (y.size() != x.size()) raise(ErrorCode::DimMismatch, "add_scaled: sizes differ");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

struct Normalized {
  EmbeddingVector value;
  bool degenerate = false;  // ||input|| <= kNormEps; value is the input unchanged
};

/// Scales to unit Euclidean norm. Inputs with norm <= kNormEps are returned
/// unchanged and flagged instead of dividing by (near) zero. The division is
/// pre-scaled by the largest magnitude so norms beyond sqrt(DBL_MAX) still
/// normalize instead of collapsing to zero.
inline Normalized l2_normalize(const EmbeddingVector& v) {
  if (!all_finite(v)) raise(ErrorCode::InvalidVector, "l2_normalize: non-finite input");
  double max_abs = 0.0;
  for (double x : v) max_abs = std::max(max_abs, std::abs(x));
  if (max_abs == 0.0) return {v, true};
  double acc = 0.0;
  for (double x : v) {
    const double scaled = x / max_abs;
    acc += scaled * scaled;
  }
  const double scaled_norm = std::sqrt(acc);  // in [1, sqrt(dim)]
  if (max_abs * scaled_norm <= kNormEps) return {v, true};
  EmbeddingVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] / max_abs) / scaled_norm;
  return {out, false};
}

/// <a,b> / (||a|| ||b||), clamped to [-1,1] against rounding.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) raise(ErrorCode::DimMismatch, "cosine_similarity: dims differ");
  if (!all_finite(a) || !all_finite(b))
    raise(ErrorCode::InvalidVector, "cosine_similarity: non-finite input");
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEps || nb <= kNormEps)
    raise(ErrorCode::DegenerateVector, "cosine_similarity: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace xmlt
