#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "xmlt/io.hpp"
#include "xmlt/rng.hpp"
#include "xmlt/synthgen.hpp"

using namespace xmlt;

namespace {

std::filesystem::path temp_file(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "xmlt_io_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Dataset tiny_dataset() {
  Dataset ds;
  ds.num_classes = 2;
  ds.feature_dim = 3;
  ds.text_dim = 2;
  Sample a;
  a.id = 0;
  a.label = 0;
  a.domain = DomainTag::Source;
  a.image_feature = {0.25, -1.5, 3.0};
  a.title_feature = {1.0, 0.5};
  a.ingredient_features = {{0.125, -0.25}, {0.75, 2.0}};
  Sample b;
  b.id = 1;
  b.label = 1;
  b.domain = DomainTag::Target;
  b.image_feature = {-0.5, 0.0, 1.25};
  b.title_feature = {0.0, -2.0};
  Sample c;
  c.id = 7;
  c.label = 1;
  c.domain = DomainTag::Target;
  c.image_feature = {4.0, 0.5, -0.75};
  c.title_feature = {2.5, 1.5};
  c.ingredient_features = {{1.0, 1.0}};
  ds.samples = {a, b, c};
  return ds;
}

double f32_roundtrip(double x) { return static_cast<double>(static_cast<float>(x)); }

void corrupt_byte(const std::filesystem::path& path, std::size_t offset, char value) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&value, 1);
}

}  // namespace

TEST_CASE("embedding file round trip matches after one down-up conversion") {
  const Dataset ds = tiny_dataset();
  const auto path = temp_file("roundtrip.xmeb");
  write_embedding_file(ds, path.string());
  const Dataset back = read_embedding_file(path.string());
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.feature_dim == ds.feature_dim);
  CHECK(back.text_dim == ds.text_dim);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample &orig = ds.samples[i], &got = back.samples[i];
    CHECK(got.id == orig.id);
    CHECK(got.label == orig.label);
    CHECK(got.domain == orig.domain);
    REQUIRE(got.ingredient_features.size() == orig.ingredient_features.size());
    for (std::size_t k = 0; k < orig.image_feature.size(); ++k)
      CHECK(got.image_feature[k] == f32_roundtrip(orig.image_feature[k]));
    for (std::size_t k = 0; k < orig.title_feature.size(); ++k)
      CHECK(got.title_feature[k] == f32_roundtrip(orig.title_feature[k]));
  }
}

TEST_CASE("second write of the same dataset is byte-identical") {
  const Dataset ds = tiny_dataset();
  const auto p1 = temp_file("bytes1.xmeb");
  const auto p2 = temp_file("bytes2.xmeb");
  write_embedding_file(ds, p1.string());
  write_embedding_file(ds, p2.string());
  CHECK(read_text_file(p1.string()) == read_text_file(p2.string()));
}

TEST_CASE("wrong magic is not an embedding file") {
  const auto path = temp_file("magic.xmeb");
  write_embedding_file(tiny_dataset(), path.string());
  corrupt_byte(path, 0, 'Y');
  CHECK_THROWS_MATCHES(read_embedding_file(path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::NotAnEmbeddingFile;
                       }));
}

TEST_CASE("declared count larger than the body is corrupt") {
  const auto path = temp_file("short.xmeb");
  write_embedding_file(tiny_dataset(), path.string());
  // bump the sample count from 3 to 4 (count field sits after magic+version)
  corrupt_byte(path, 8, 4);
  CHECK_THROWS_MATCHES(read_embedding_file(path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::CorruptFile;
                       }));
}

TEST_CASE("truncated embedding file is corrupt") {
  const auto path = temp_file("trunc.xmeb");
  write_embedding_file(tiny_dataset(), path.string());
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  CHECK_THROWS_MATCHES(read_embedding_file(path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::CorruptFile;
                       }));
}

TEST_CASE("non-finite payload is rejected") {
  Dataset ds = tiny_dataset();
  ds.samples[0].image_feature[1] = std::numeric_limits<double>::infinity();
  const auto path = temp_file("nan.xmeb");
  CHECK_THROWS_MATCHES(write_embedding_file(ds, path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::InvalidPayload;
                       }));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(55);
  ModelParams p = init_params(5, 4, 3, 7, rng);
  p.use_title = true;
  p.use_ingredients = false;
  p.renormalize_fused = true;
  const auto path = temp_file("ckpt.xmlt");
  save_checkpoint(p, path.string());
  const ModelParams q = load_checkpoint(path.string());
  CHECK(q.feature_dim == p.feature_dim);
  CHECK(q.text_dim == p.text_dim);
  CHECK(q.shared_dim == p.shared_dim);
  CHECK(q.num_classes == p.num_classes);
  CHECK(q.use_title == p.use_title);
  CHECK(q.use_ingredients == p.use_ingredients);
  CHECK(q.renormalize_fused == p.renormalize_fused);
  CHECK(q.image_head.weight == p.image_head.weight);
  CHECK(q.text_head.weight == p.text_head.weight);
  CHECK(q.classifier.weight == p.classifier.weight);
  CHECK(q.classifier.bias == p.classifier.bias);
}

TEST_CASE("truncated checkpoint is rejected") {
  Rng rng(56);
  const ModelParams p = init_params(4, 4, 3, 2, rng);
  const auto path = temp_file("trunc.xmlt");
  save_checkpoint(p, path.string());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  CHECK_THROWS_MATCHES(load_checkpoint(path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::BadCheckpoint;
                       }));
}

TEST_CASE("checkpoint version mismatch names the version") {
  Rng rng(57);
  const ModelParams p = init_params(4, 4, 3, 2, rng);
  const auto path = temp_file("version.xmlt");
  save_checkpoint(p, path.string());
  corrupt_byte(path, 4, 9);  // version field follows the magic
  try {
    load_checkpoint(path.string());
    FAIL("expected BadCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadCheckpoint);
    CHECK(std::string(e.what()).find('9') != std::string::npos);
  }
}

TEST_CASE("wrong magic is not a checkpoint") {
  const auto path = temp_file("notckpt.xmlt");
  write_text_file(path.string(), "XXXXsome bytes beyond");
  CHECK_THROWS_MATCHES(load_checkpoint(path.string()), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::BadCheckpoint;
                       }));
}

TEST_CASE("metrics json key order is stable") {
  MetricsReport r;
  r.top1_all = 0.5;
  r.top5_all = 0.75;
  r.group_top1.head = 0.25;
  r.per_class_top1 = {0.5, std::nullopt};
  r.config_fingerprint = "abc";
  r.seed = 3;
  const std::string dump = metrics_to_json(r).dump();
  CHECK(dump.find("\"top1_all\"") < dump.find("\"top5_all\""));
  CHECK(dump.find("\"top5_all\"") < dump.find("\"group_top1\""));
  CHECK(dump.find("\"group_top1\"") < dump.find("\"nine_group\""));
  CHECK(dump.find("\"nine_group\"") < dump.find("\"per_class_top1\""));
  CHECK(dump.find("\"domain_gap_before\"") < dump.find("\"domain_gap_after\""));
  CHECK(dump.find("null") != std::string::npos);  // unset groups stay null
  CHECK(metrics_to_json(r).dump() == dump);
}
