#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xmlt/experiment.hpp"
#include "support.hpp"

using namespace xmlt;

namespace {

std::filesystem::path temp_dir(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "xmlt_experiment_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg;
  cfg.seed = 2;
  cfg.benchmark.num_classes = 8;
  cfg.benchmark.clusters = 2;
  cfg.benchmark.feature_dim = 12;
  cfg.benchmark.text_dim = 12;
  cfg.benchmark.n_max = 40;
  cfg.benchmark.imbalance_ratio = 8.0;
  cfg.benchmark.test_per_class = 4;
  cfg.benchmark.seed = 2;
  cfg.train.epochs = 5;
  cfg.train.batch_per_domain = 16;
  cfg.train.shared_dim = 12;
  cfg.train.learning_rate = 0.05;
  cfg.train.seed = 2;
  cfg.ablate_seeds = {2, 3};
  return cfg;
}

}  // namespace

TEST_CASE("run_synth writes the three splits and an auditable manifest") {
  const auto dir = temp_dir("synth");
  ExperimentConfig cfg = small_experiment();
  const Benchmark bench = run_synth(cfg, dir.string());
  for (const char* name : {kSourceTrainFile, kTargetTrainFile, kTargetTestFile, kManifestFile})
    CHECK(std::filesystem::exists(dir / name));

  const auto manifest = json::parse(read_text_file((dir / kManifestFile).string()));
  CHECK(manifest.at("imbalance_ratio_source").get<double>() ==
        imbalance_ratio(bench.source_counts));
  CHECK(manifest.at("imbalance_ratio_target").get<double>() == 8.0);
  CHECK(manifest.at("source_counts").get<std::vector<int>>() == bench.source_counts);
  CHECK(manifest.at("generator_constants").at("feature_noise_sigma").get<double>() ==
        kFeatureNoiseSigma);
  CHECK(manifest.at("config").at("benchmark").at("imbalance_ratio").get<double>() == 8.0);

  const BenchmarkData data = load_benchmark_data(dir.string());
  CHECK(data.num_classes == cfg.benchmark.num_classes);
  CHECK(data.source_counts == bench.source_counts);
  CHECK(data.target_counts == bench.target_counts);
}

TEST_CASE("train then eval produces a coherent report and reusable checkpoint") {
  const auto dir = temp_dir("trainrun");
  ExperimentConfig cfg = small_experiment();
  const BenchmarkData data = benchmark_to_data(make_benchmark(cfg.benchmark));
  const TrainResult trained = run_train(cfg, data, dir.string());
  CHECK(std::filesystem::exists(dir / "checkpoint.xmlt"));
  CHECK(std::filesystem::exists(dir / "history.json"));

  const ModelParams loaded = load_checkpoint((dir / "checkpoint.xmlt").string());
  EvalFlags flags;
  flags.export_embeddings = true;
  const MetricsReport report = run_eval(cfg, loaded, data, flags, dir.string());
  CHECK(report.top1_all >= 0.0);
  CHECK(report.top1_all <= 1.0);
  CHECK(report.domain_gap_before.has_value());
  CHECK(report.domain_gap_after.has_value());
  CHECK(std::filesystem::exists(dir / "metrics.json"));
  CHECK(std::filesystem::exists(dir / "embeddings.csv"));

  // the persisted metrics parse back and carry the fingerprint
  const auto metrics = json::parse(read_text_file((dir / "metrics.json").string()));
  CHECK(metrics.at("seed").get<std::uint64_t>() == cfg.seed);
  CHECK(metrics.at("config_fingerprint").get<std::string>() ==
        fingerprint(semantic_config_json(cfg)));
  (void)trained;
}

TEST_CASE("exported embeddings have the declared shape and are reproducible") {
  const auto dir = temp_dir("export");
  ExperimentConfig cfg = small_experiment();
  const BenchmarkData data = benchmark_to_data(make_benchmark(cfg.benchmark));
  Rng rng(5);
  const ModelParams params = init_params(cfg.benchmark.feature_dim, cfg.benchmark.text_dim,
                                         cfg.train.shared_dim, data.num_classes, rng);
  const std::vector<ClassGroup> groups = assign_groups(data.target_counts);

  const std::string raw_path = (dir / "raw.csv").string();
  export_embeddings(params, data.target_train, groups, raw_path, ExportProjection::None);
  std::ifstream raw(raw_path);
  std::string header;
  std::getline(raw, header);
  std::stringstream expected;
  expected << "id,label,domain,group";
  for (int k = 0; k < cfg.train.shared_dim; ++k) expected << ",v" << k;
  CHECK(header == expected.str());
  std::size_t rows = 0;
  for (std::string line; std::getline(raw, line);) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') ==
          3 + cfg.train.shared_dim);
  }
  CHECK(rows == data.target_train.samples.size());

  const std::string pca_path = (dir / "pca.csv").string();
  export_embeddings(params, data.target_train, groups, pca_path, ExportProjection::Pca2d);
  std::ifstream pca(pca_path);
  std::getline(pca, header);
  CHECK(header == "id,label,domain,group,v0,v1");

  // re-export is byte-identical
  const std::string again = (dir / "again.csv").string();
  export_embeddings(params, data.target_train, groups, again, ExportProjection::Pca2d);
  CHECK(read_text_file(pca_path) == read_text_file(again));
}

TEST_CASE("ablation row one reproduces a separately run ERM baseline bit for bit") {
  ExperimentConfig cfg = small_experiment();
  cfg.ablate_seeds = {2};
  const AblationResult ablation = run_ablation(cfg);
  REQUIRE(ablation.rows.size() == 5);
  CHECK(ablation.rows[0].spec.name == "none");
  CHECK_FALSE(ablation.rows[0].spec.use_alignment);
  const AblationRowSpec& full = ablation.rows.back().spec;
  CHECK(full.use_title);
  CHECK(full.use_ingredients);
  CHECK(full.use_alignment);
  CHECK(full.use_calibration);

  // independent ERM run through the plain train/evaluate path
  ExperimentConfig erm_cfg = cfg;
  erm_cfg.seed = 2;
  erm_cfg.benchmark.seed = 2;
  erm_cfg.train.seed = 2;
  erm_cfg.train.use_alignment = false;
  erm_cfg.train.use_calibration = false;
  erm_cfg.train.use_title = false;
  erm_cfg.train.use_ingredients = false;
  const BenchmarkData data = benchmark_to_data(make_benchmark(erm_cfg.benchmark));
  const TrainResult trained = train(data.source_train, data.target_train, erm_cfg.train);
  MetricsReport report = evaluate(trained.params, data.target_test, data.source_counts,
                                  data.target_counts);
  fill_domain_gaps(trained.params, data, report);
  report.config_fingerprint = fingerprint(semantic_config_json(erm_cfg));
  report.seed = 2;

  REQUIRE(ablation.rows[0].per_seed.size() == 1);
  CHECK(metrics_to_json(ablation.rows[0].per_seed[0].metrics).dump() ==
        metrics_to_json(report).dump());
}

TEST_CASE("absurd learning rates diverge with a located error") {
  ExperimentConfig cfg = small_experiment();
  const BenchmarkData data = benchmark_to_data(make_benchmark(cfg.benchmark));
  TrainConfig tc = cfg.train;
  tc.learning_rate = 5e307;  // first update overflows the weights
  tc.epochs = 12;
  try {
    train(data.source_train, data.target_train, tc);
    FAIL("expected TrainingDiverged");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TrainingDiverged);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("eval pads group counts when the checkpoint knows more classes") {
  ExperimentConfig cfg = small_experiment();
  BenchmarkData data = benchmark_to_data(make_benchmark(cfg.benchmark));
  Rng rng(6);
  // checkpoint trained with two extra classes
  const ModelParams params = init_params(cfg.benchmark.feature_dim, cfg.benchmark.text_dim,
                                         cfg.train.shared_dim, data.num_classes + 2, rng);
  const auto dir = temp_dir("pad");
  const MetricsReport report = run_eval(cfg, params, data, {}, dir.string());
  CHECK(static_cast<int>(report.per_class_top1.size()) == data.num_classes + 2);
}
