#pragma once

// Experiment orchestration shared by the CLI and the test suites: benchmark
// synthesis to disk, training to a checkpoint, evaluation to a metrics
// report, and the five-row ablation grid.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmlt/config.hpp"
#include "xmlt/core.hpp"
#include "xmlt/eval.hpp"
#include "xmlt/io.hpp"
#include "xmlt/model.hpp"
#include "xmlt/synthgen.hpp"
#include "xmlt/trainer.hpp"

namespace xmlt {

inline constexpr const char* kSourceTrainFile = "source_train.xmeb";
inline constexpr const char* kTargetTrainFile = "target_train.xmeb";
inline constexpr const char* kTargetTestFile = "target_test.xmeb";
inline constexpr const char* kManifestFile = "manifest.json";

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline json benchmark_manifest(const ExperimentConfig& cfg, const Benchmark& bench) {
  json manifest;
  manifest["config"] = experiment_config_to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["num_classes"] = cfg.benchmark.num_classes;
  manifest["source_counts"] = bench.source_counts;
  manifest["target_counts"] = bench.target_counts;
  manifest["imbalance_ratio_source"] = imbalance_ratio(bench.source_counts);
  manifest["imbalance_ratio_target"] = imbalance_ratio(bench.target_counts);
  manifest["test_per_class"] = cfg.benchmark.test_per_class;
  manifest["files"] = {{"source_train", kSourceTrainFile},
                       {"target_train", kTargetTrainFile},
                       {"target_test", kTargetTestFile}};
  manifest["generator_constants"] = {
      {"cluster_center_norm", kClusterCenterNorm},
      {"min_center_separation", kMinCenterSeparation},
      {"intra_cluster_radius", kIntraClusterRadius},
      {"feature_noise_sigma", kFeatureNoiseSigma},
      {"text_jitter_sigma", kTextJitterSigma},
      {"common_ingredients_per_cluster", kCommonIngredientsPerCluster},
      {"unique_ingredients_per_class", kUniqueIngredientsPerClass},
  };
  return manifest;
}

/// Generates the benchmark and writes the three embedding files plus the
/// manifest into out_dir.
inline Benchmark run_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Benchmark bench = make_benchmark(cfg.benchmark);
  write_embedding_file(bench.source_train, out_dir + "/" + kSourceTrainFile);
  write_embedding_file(bench.target_train, out_dir + "/" + kTargetTrainFile);
  write_embedding_file(bench.target_test, out_dir + "/" + kTargetTestFile);
  write_text_file(out_dir + "/" + kManifestFile, benchmark_manifest(cfg, bench).dump(2) + "\n");
  return bench;
}

// ---------------------------------------------------------------------------
// data loading
// ---------------------------------------------------------------------------

struct BenchmarkData {
  Dataset source_train;
  Dataset target_train;
  Dataset target_test;
  std::vector<int> source_counts;
  std::vector<int> target_counts;
  int num_classes = 0;
};

inline BenchmarkData load_benchmark_data(const std::string& data_dir) {
  BenchmarkData data;
  data.source_train = read_embedding_file(data_dir + "/" + kSourceTrainFile);
  data.target_train = read_embedding_file(data_dir + "/" + kTargetTrainFile);
  data.target_test = read_embedding_file(data_dir + "/" + kTargetTestFile);
  data.num_classes = std::max({data.source_train.num_classes, data.target_train.num_classes,
                               data.target_test.num_classes});
  data.source_train.num_classes = data.num_classes;
  data.target_train.num_classes = data.num_classes;
  data.target_test.num_classes = data.num_classes;
  data.source_counts = class_counts(data.source_train, DomainTag::Source);
  data.target_counts = class_counts(data.target_train, DomainTag::Target);
  return data;
}

inline BenchmarkData benchmark_to_data(Benchmark bench) {
  BenchmarkData data;
  data.num_classes = bench.source_train.num_classes;
  data.source_counts = class_counts(bench.source_train, DomainTag::Source);
  data.target_counts = class_counts(bench.target_train, DomainTag::Target);
  data.source_train = std::move(bench.source_train);
  data.target_train = std::move(bench.target_train);
  data.target_test = std::move(bench.target_test);
  return data;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline json history_to_json(const TrainHistory& history) {
  json epochs = json::array();
  for (const EpochRecord& r : history.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"total_loss", r.total_loss},
                      {"alignment_loss", r.alignment_loss},
                      {"calibration_loss", r.calibration_loss},
                      {"source_accuracy", r.source_accuracy},
                      {"target_accuracy", r.target_accuracy},
                      {"wall_seconds", r.wall_seconds}});
  }
  return json{{"epochs", epochs}};
}

/// Trains on the data directory's splits, writes checkpoint + history.
inline TrainResult run_train(const ExperimentConfig& cfg, const BenchmarkData& data,
                             const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  TrainResult result = train(data.source_train, data.target_train, cfg.train);
  save_checkpoint(result.params, out_dir + "/checkpoint.xmlt");
  write_text_file(out_dir + "/history.json", history_to_json(result.history).dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalFlags {
  bool image_only = false;
  bool export_embeddings = false;
  bool pca2d = false;
};

/// Fills the domain-gap diagnostics from the training splits: before = raw
/// image features, after = trained shared-space embeddings.
inline void fill_domain_gaps(const ModelParams& params, const BenchmarkData& data,
                             MetricsReport& report) {
  std::vector<EmbeddingVector> raw, projected;
  std::vector<int> labels;
  std::vector<DomainTag> domains;
  for (const Dataset* ds : {&data.source_train, &data.target_train}) {
    for (const Sample& s : ds->samples) {
      raw.push_back(s.image_feature);
      projected.push_back(encode_image(params, s.image_feature));
      labels.push_back(s.label);
      domains.push_back(s.domain);
    }
  }
  try {
    report.domain_gap_before = domain_gap(raw, labels, domains, data.num_classes);
    report.domain_gap_after = domain_gap(projected, labels, domains, data.num_classes);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Undefined) throw;  // gaps stay null
  }
}

inline MetricsReport run_eval(const ExperimentConfig& cfg, const ModelParams& params,
                              const BenchmarkData& data, const EvalFlags& flags,
                              const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  EvalOptions options;
  options.image_only = flags.image_only;
  options.group_mode = cfg.group_mode;
  // Classes beyond the data's label range have zero training counts (tail).
  std::vector<int> source_counts = data.source_counts;
  std::vector<int> target_counts = data.target_counts;
  if (params.num_classes > data.num_classes) {
    source_counts.resize(static_cast<std::size_t>(params.num_classes), 0);
    target_counts.resize(static_cast<std::size_t>(params.num_classes), 0);
  }
  MetricsReport report =
      evaluate(params, data.target_test, source_counts, target_counts, options);
  fill_domain_gaps(params, data, report);
  report.config_fingerprint = fingerprint(semantic_config_json(cfg));
  report.seed = cfg.seed;
  write_text_file(out_dir + "/metrics.json", metrics_to_json(report).dump(2) + "\n");

  if (flags.export_embeddings) {
    const std::vector<ClassGroup> groups = assign_groups(data.target_counts);
    Dataset train_all = data.source_train;
    train_all.samples.insert(train_all.samples.end(), data.target_train.samples.begin(),
                             data.target_train.samples.end());
    export_embeddings(params, train_all, groups, out_dir + "/embeddings.csv",
                      flags.pca2d ? ExportProjection::Pca2d : ExportProjection::None);
  }
  return report;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRowSpec {
  std::string name;
  bool use_alignment, use_calibration, use_title, use_ingredients;
};

/// The five ablation rows, cumulative: none, alignment, +calibration,
/// +title augmentation, +ingredient augmentation.
inline const std::vector<AblationRowSpec>& ablation_rows() {
  static const std::vector<AblationRowSpec> rows = {
      {"none", false, false, false, false},
      {"align", true, false, false, false},
      {"align+cal", true, true, false, false},
      {"align+cal+title", true, true, true, false},
      {"align+cal+title+ing", true, true, true, true},
  };
  return rows;
}

struct AblationSeedResult {
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct AblationRowResult {
  AblationRowSpec spec;
  std::vector<AblationSeedResult> per_seed;
  double median_top1 = 0.0;
  double median_top5 = 0.0;
  std::optional<double> median_head, median_medium, median_tail;
  std::optional<double> median_domain_gap;
};

struct AblationResult {
  std::vector<AblationRowResult> rows;
};

inline double median(std::vector<double> values) {
  if (values.empty()) raise(ErrorCode::InvalidInput, "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline std::optional<double> median_of_optionals(
    const std::vector<std::optional<double>>& values) {
  std::vector<double> present;
  for (const auto& v : values)
    if (v) present.push_back(*v);
  if (present.empty()) return std::nullopt;
  return median(std::move(present));
}

/// Trains and evaluates every (row, seed) pair with the shared per-seed
/// benchmark; rows differ only in the four switches.
inline AblationResult run_ablation(const ExperimentConfig& cfg) {
  AblationResult result;
  for (const AblationRowSpec& spec : ablation_rows()) {
    AblationRowResult row;
    row.spec = spec;
    result.rows.push_back(row);
  }

  for (std::uint64_t seed : cfg.ablate_seeds) {
    ExperimentConfig seed_cfg = cfg;
    seed_cfg.seed = seed;
    seed_cfg.benchmark.seed = seed;
    seed_cfg.train.seed = seed;
    const BenchmarkData data = benchmark_to_data(make_benchmark(seed_cfg.benchmark));

    for (std::size_t r = 0; r < result.rows.size(); ++r) {
      const AblationRowSpec& spec = result.rows[r].spec;
      ExperimentConfig row_cfg = seed_cfg;  // each row's effective config
      row_cfg.train.use_alignment = spec.use_alignment;
      row_cfg.train.use_calibration = spec.use_calibration;
      row_cfg.train.use_title = spec.use_title;
      row_cfg.train.use_ingredients = spec.use_ingredients;
      TrainResult trained = train(data.source_train, data.target_train, row_cfg.train);

      EvalOptions options;
      options.group_mode = cfg.group_mode;
      MetricsReport report = evaluate(trained.params, data.target_test, data.source_counts,
                                      data.target_counts, options);
      fill_domain_gaps(trained.params, data, report);
      report.config_fingerprint = fingerprint(semantic_config_json(row_cfg));
      report.seed = seed;
      result.rows[r].per_seed.push_back({seed, std::move(report)});
    }
  }

  for (AblationRowResult& row : result.rows) {
    std::vector<double> top1, top5;
    std::vector<std::optional<double>> head, medium, tail, gap;
    for (const AblationSeedResult& s : row.per_seed) {
      top1.push_back(s.metrics.top1_all);
      top5.push_back(s.metrics.top5_all);
      head.push_back(s.metrics.group_top1.head);
      medium.push_back(s.metrics.group_top1.medium);
      tail.push_back(s.metrics.group_top1.tail);
      gap.push_back(s.metrics.domain_gap_after);
    }
    row.median_top1 = median(top1);
    row.median_top5 = median(top5);
    row.median_head = median_of_optionals(head);
    row.median_medium = median_of_optionals(medium);
    row.median_tail = median_of_optionals(tail);
    row.median_domain_gap = median_of_optionals(gap);
  }
  return result;
}

inline json ablation_to_json(const AblationResult& result) {
  json rows = json::array();
  for (const AblationRowResult& row : result.rows) {
    json per_seed = json::array();
    for (const AblationSeedResult& s : row.per_seed) {
      per_seed.push_back({{"seed", s.seed},
                          {"top1_all", s.metrics.top1_all},
                          {"top5_all", s.metrics.top5_all},
                          {"head", optional_to_json(s.metrics.group_top1.head)},
                          {"medium", optional_to_json(s.metrics.group_top1.medium)},
                          {"tail", optional_to_json(s.metrics.group_top1.tail)},
                          {"domain_gap", optional_to_json(s.metrics.domain_gap_after)}});
    }
    rows.push_back({{"name", row.spec.name},
                    {"switches",
                     {{"alignment", row.spec.use_alignment},
                      {"calibration", row.spec.use_calibration},
                      {"title", row.spec.use_title},
                      {"ingredients", row.spec.use_ingredients}}},
                    {"median",
                     {{"head", optional_to_json(row.median_head)},
                      {"medium", optional_to_json(row.median_medium)},
                      {"tail", optional_to_json(row.median_tail)},
                      {"top1_all", row.median_top1},
                      {"top5_all", row.median_top5},
                      {"domain_gap", optional_to_json(row.median_domain_gap)}}},
                    {"per_seed", per_seed}});
  }
  return json{{"rows", rows}};
}

/// Aligned text table mirroring the metrics layout (medians over seeds).
inline std::string ablation_to_text(const AblationResult& result) {
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("   -  ");
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.3f", *v);
    return std::string(buf);
  };
  std::string out;
  out += "row                    head   medium tail   all    top5   domain_gap\n";
  for (const AblationRowResult& row : result.rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %s %s %s %s %s %s\n", row.spec.name.c_str(),
                  fmt(row.median_head).c_str(), fmt(row.median_medium).c_str(),
                  fmt(row.median_tail).c_str(), fmt(row.median_top1).c_str(),
                  fmt(row.median_top5).c_str(), fmt(row.median_domain_gap).c_str());
    out += line;
  }
  return out;
}

}  // namespace xmlt
