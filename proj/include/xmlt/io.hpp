#pragma once

// Persistent formats.
//
// Embedding file ("XMEB", little-endian):
//   magic[4] version:u32 sample_count:u64 feature_dim:u32 text_dim:u32
//   max_ingredients:u32 flags:u32, then per sample:
//   id:u64 label:u32 domain:u8 ingredient_count:u8, image feature, title
//   feature, ingredient vectors as f32.
// Floats are 32-bit on disk and 64-bit in memory; a round trip applies
// exactly one down-up conversion.
//
// Checkpoint ("XMLT", little-endian):
//   magic[4] version:u32 feature_dim:u32 text_dim:u32 shared_dim:u32
//   num_classes:u32 flags:u32 (bit0 use_title, bit1 use_ingredients,
//   bit2 renormalize_fused), then f64 weight arrays in order: image head
//   W,b; text head W,b; classifier W,b (row-major).
//
// JSON artifacts (config, manifest, metrics, history) use nlohmann::json;
// metrics keys are emitted in a documented fixed order.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/core.hpp"
#include "xmlt/eval.hpp"
#include "xmlt/model.hpp"
#include "xmlt/synthgen.hpp"

namespace xmlt {

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) raise(ErrorCode::WriteError, "cannot open " + path + " for writing");
    path_ = path;
  }
  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) raise(ErrorCode::WriteError, "write failed: " + path_);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16),
                         static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void close() {
    out_.close();
    if (!out_) raise(ErrorCode::WriteError, "close failed: " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  ByteReader(const std::string& path, ErrorCode truncation_code)
      : in_(path, std::ios::binary), code_(truncation_code), path_(path) {
    if (!in_) raise(ErrorCode::CorruptFile, "cannot open " + path);
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      raise(code_, "unexpected end of file: " + path_);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::ifstream in_;
  ErrorCode code_;
  std::string path_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

inline void write_embedding_file(const Dataset& ds, const std::string& path) {
  validate_dataset(ds);
  std::uint32_t max_ingredients = 0;
  for (const Sample& s : ds.samples) {
    if (s.ingredient_features.size() > 255)
      raise(ErrorCode::InvalidInput, "write_embedding_file: more than 255 ingredients");
    max_ingredients =
        std::max(max_ingredients, static_cast<std::uint32_t>(s.ingredient_features.size()));
  }
  detail::ByteWriter w(path);
  w.bytes("XMEB", 4);
  w.u32(kEmbeddingFileVersion);
  w.u64(ds.samples.size());
  w.u32(static_cast<std::uint32_t>(ds.feature_dim));
  w.u32(static_cast<std::uint32_t>(ds.text_dim));
  w.u32(max_ingredients);
  w.u32(0);  // flags, reserved
  for (const Sample& s : ds.samples) {
    w.u64(s.id);
    w.u32(static_cast<std::uint32_t>(s.label));
    w.u8(static_cast<std::uint8_t>(s.domain));
    w.u8(static_cast<std::uint8_t>(s.ingredient_features.size()));
    for (double x : s.image_feature) w.f32(static_cast<float>(x));
    for (double x : s.title_feature) w.f32(static_cast<float>(x));
    for (const EmbeddingVector& g : s.ingredient_features)
      for (double x : g) w.f32(static_cast<float>(x));
  }
  w.close();
}

inline Dataset read_embedding_file(const std::string& path) {
  detail::ByteReader r(path, ErrorCode::CorruptFile);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "XMEB", 4) != 0)
    raise(ErrorCode::NotAnEmbeddingFile, path + " is not an embedding file");
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingFileVersion)
    raise(ErrorCode::CorruptFile, "unsupported embedding file version " +
                                      std::to_string(version) + " in " + path);
  const std::uint64_t count = r.u64();
  Dataset ds;
  ds.feature_dim = static_cast<int>(r.u32());
  ds.text_dim = static_cast<int>(r.u32());
  const std::uint32_t max_ingredients = r.u32();
  r.u32();  // flags
  if (ds.feature_dim < 1 || ds.text_dim < 1)
    raise(ErrorCode::CorruptFile, "embedding file declares non-positive dims: " + path);

  auto read_vector = [&r](int dim) {
    EmbeddingVector v(static_cast<std::size_t>(dim));
    for (double& x : v) {
      x = static_cast<double>(r.f32());
      if (!std::isfinite(x)) raise(ErrorCode::InvalidPayload, "non-finite float payload");
    }
    return v;
  };

  int max_label = -1;
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.id = r.u64();
    s.label = static_cast<int>(r.u32());
    const std::uint8_t domain = r.u8();
    if (domain > 1) raise(ErrorCode::CorruptFile, "bad domain tag in " + path);
    s.domain = static_cast<DomainTag>(domain);
    const std::uint8_t num_ingredients = r.u8();
    if (num_ingredients > max_ingredients)
      raise(ErrorCode::CorruptFile, "ingredient count exceeds header maximum in " + path);
    s.image_feature = read_vector(ds.feature_dim);
    s.title_feature = read_vector(ds.text_dim);
    s.ingredient_features.reserve(num_ingredients);
    for (int g = 0; g < num_ingredients; ++g)
      s.ingredient_features.push_back(read_vector(ds.text_dim));
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end())
    raise(ErrorCode::CorruptFile, "trailing bytes after declared samples in " + path);
  ds.num_classes = max_label + 1;
  if (ds.num_classes < 1) ds.num_classes = 1;
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  detail::ByteWriter w(path);
  w.bytes("XMLT", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.feature_dim));
  w.u32(static_cast<std::uint32_t>(params.text_dim));
  w.u32(static_cast<std::uint32_t>(params.shared_dim));
  w.u32(static_cast<std::uint32_t>(params.num_classes));
  std::uint32_t flags = 0;
  if (params.use_title) flags |= 1u;
  if (params.use_ingredients) flags |= 2u;
  if (params.renormalize_fused) flags |= 4u;
  w.u32(flags);
  for (const AffineMap* m : {&params.image_head, &params.text_head, &params.classifier}) {
    for (double x : m->weight) w.f64(x);
    for (double x : m->bias) w.f64(x);
  }
  w.close();
}

inline ModelParams load_checkpoint(const std::string& path) {
  detail::ByteReader r(path, ErrorCode::BadCheckpoint);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "XMLT", 4) != 0)
    raise(ErrorCode::BadCheckpoint, path + " is not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    raise(ErrorCode::BadCheckpoint, "checkpoint version " + std::to_string(version) +
                                        " unsupported (expected " +
                                        std::to_string(kCheckpointVersion) + ")");
  ModelParams p;
  p.feature_dim = static_cast<int>(r.u32());
  p.text_dim = static_cast<int>(r.u32());
  p.shared_dim = static_cast<int>(r.u32());
  p.num_classes = static_cast<int>(r.u32());
  if (p.feature_dim < 1 || p.text_dim < 1 || p.shared_dim < 1 || p.num_classes < 1)
    raise(ErrorCode::BadCheckpoint, "checkpoint declares non-positive dims");
  const std::uint32_t flags = r.u32();
  p.use_title = (flags & 1u) != 0;
  p.use_ingredients = (flags & 2u) != 0;
  p.renormalize_fused = (flags & 4u) != 0;
  p.image_head = AffineMap::zeros(p.feature_dim, p.shared_dim);
  p.text_head = AffineMap::zeros(2 * p.text_dim, p.shared_dim);
  p.classifier = AffineMap::zeros(p.shared_dim, p.num_classes);
  for (AffineMap* m : {&p.image_head, &p.text_head, &p.classifier}) {
    for (double& x : m->weight) x = r.f64();
    for (double& x : m->bias) x = r.f64();
    if (!all_finite(m->weight) || !all_finite(m->bias))
      raise(ErrorCode::BadCheckpoint, "non-finite weight in checkpoint");
  }
  if (!r.at_end()) raise(ErrorCode::BadCheckpoint, "trailing bytes in checkpoint " + path);
  return p;
}

// ---------------------------------------------------------------------------
// JSON artifacts
// ---------------------------------------------------------------------------

using json = nlohmann::ordered_json;

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::WriteError, "cannot open " + path);
  out << content;
  if (!out) raise(ErrorCode::WriteError, "write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::CorruptFile, "cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

inline json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

/// Key order is fixed; rerunning the same evaluation reproduces the bytes.
inline json metrics_to_json(const MetricsReport& report) {
  json j;
  j["top1_all"] = report.top1_all;
  j["top5_all"] = report.top5_all;
  j["group_top1"] = {{"head", optional_to_json(report.group_top1.head)},
                     {"medium", optional_to_json(report.group_top1.medium)},
                     {"tail", optional_to_json(report.group_top1.tail)}};
  json matrix = json::array();
  for (const auto& row : report.nine_group) {
    json r = json::array();
    for (const auto& cell : row) r.push_back(optional_to_json(cell));
    matrix.push_back(r);
  }
  j["nine_group"] = matrix;
  json per_class = json::array();
  for (const auto& v : report.per_class_top1) per_class.push_back(optional_to_json(v));
  j["per_class_top1"] = per_class;
  j["domain_gap_before"] = optional_to_json(report.domain_gap_before);
  j["domain_gap_after"] = optional_to_json(report.domain_gap_after);
  j["config_fingerprint"] = report.config_fingerprint;
  j["seed"] = report.seed;
  return j;
}

/// FNV-1a over the canonical JSON dump; ties a report to the exact config.
inline std::string fingerprint(const json& j) {
  const std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Embedding export (CSV)
// ---------------------------------------------------------------------------

enum class ExportProjection { None, Pca2d };

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

}  // namespace detail

/// CSV rows: id,label,domain,group,v0..vK. With Pca2d, K = 1 and the
/// components come from a covariance eigen-decomposition over the exported
/// rows (descending eigenvalue, sign-fixed).
inline void export_embeddings(const ModelParams& params, const Dataset& ds,
                              const std::vector<ClassGroup>& class_groups,
                              const std::string& path,
                              ExportProjection projection = ExportProjection::None) {
  if (static_cast<int>(class_groups.size()) < ds.num_classes)
    raise(ErrorCode::InvalidInput, "export_embeddings: class_groups too short");
  const std::vector<EmbeddingVector> embs = project_image_embeddings(params, ds);

  std::optional<Pca2d> pca;
  if (projection == ExportProjection::Pca2d) pca = fit_pca2d(embs);

  std::string out;
  const int dim = projection == ExportProjection::Pca2d ? 2 : params.shared_dim;
  out += "id,label,domain,group";
  for (int k = 0; k < dim; ++k) out += ",v" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    out += std::to_string(s.id);
    out += ',';
    out += std::to_string(s.label);
    out += ',';
    out += domain_name(s.domain);
    out += ',';
    out += group_name(class_groups[static_cast<std::size_t>(s.label)]);
    if (projection == ExportProjection::Pca2d) {
      const auto p = project_pca2d(*pca, embs[i]);
      out += ',' + detail::format_double(p[0]) + ',' + detail::format_double(p[1]);
    } else {
      for (double v : embs[i]) out += ',' + detail::format_double(v);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace xmlt
