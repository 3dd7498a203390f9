// Command-line front end: synth | train | eval | ablate.
//
// Exit codes: 0 ok, 2 invalid config/input, 3 training diverged,
// 4 data/model mismatch, 5 file I/O or format errors.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xmlt/config.hpp"
#include "xmlt/experiment.hpp"

namespace {

int exit_code_for(const xmlt::Error& e) {
  switch (e.code()) {
    case xmlt::ErrorCode::InvalidConfig:
    case xmlt::ErrorCode::InvalidInput:
    case xmlt::ErrorCode::InvalidCounts:
    case xmlt::ErrorCode::InvalidLabel:
    case xmlt::ErrorCode::InvalidVector:
    case xmlt::ErrorCode::Undefined:
      return 2;
    case xmlt::ErrorCode::TrainingDiverged:
      return 3;
    case xmlt::ErrorCode::DimMismatch:
    case xmlt::ErrorCode::DegenerateVector:
      return 4;
    case xmlt::ErrorCode::BadCheckpoint:
    case xmlt::ErrorCode::NotAnEmbeddingFile:
    case xmlt::ErrorCode::CorruptFile:
    case xmlt::ErrorCode::InvalidPayload:
    case xmlt::ErrorCode::WriteError:
      return 5;
  }
  return 1;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

xmlt::ExperimentConfig load_config(const CommonArgs& args) {
  xmlt::ExperimentConfig cfg = xmlt::load_experiment_config(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.benchmark.seed = *args.seed;
    cfg.train.seed = *args.seed;
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--out", args.out_dir, "output directory (defaults to config output_dir)");
  cmd->add_option("--seed", args.seed, "override the config seed");
}

void require_data_dir(const xmlt::ExperimentConfig& cfg) {
  if (!std::filesystem::is_directory(cfg.resolved_data_dir()))
    xmlt::raise(xmlt::ErrorCode::InvalidConfig,
                "data_dir '" + cfg.resolved_data_dir() + "' does not exist (run synth first)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal augmentation for long-tailed domain-shifted recognition"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, ablate_args;
  bool image_only = false, do_export = false, use_pca2d = false;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic two-domain benchmark");
  add_common(synth, synth_args);
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on generated data");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_flag("--image-only-eval", image_only, "zero the text embedding at inference");
  eval_cmd->add_flag("--export-embeddings", do_export, "write shared-space embeddings CSV");
  eval_cmd->add_flag("--pca2d", use_pca2d, "project exported embeddings to 2-D PCA");
  CLI::App* ablate = app.add_subcommand("ablate", "run the five-row ablation grid");
  add_common(ablate, ablate_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const xmlt::ExperimentConfig cfg = load_config(synth_args);
      const xmlt::Benchmark bench = xmlt::run_synth(cfg, cfg.output_dir);
      std::printf("wrote %zu source / %zu target train / %zu test samples to %s\n",
                  bench.source_train.samples.size(), bench.target_train.samples.size(),
                  bench.target_test.samples.size(), cfg.output_dir.c_str());
    } else if (train_cmd->parsed()) {
      const xmlt::ExperimentConfig cfg = load_config(train_args);
      require_data_dir(cfg);
      const xmlt::BenchmarkData data = xmlt::load_benchmark_data(cfg.resolved_data_dir());
      const xmlt::TrainResult result = xmlt::run_train(cfg, data, cfg.output_dir);
      std::printf("trained %d epochs; final loss %.6f; checkpoint at %s/checkpoint.xmlt\n",
                  static_cast<int>(result.history.epochs.size()),
                  result.history.epochs.back().total_loss, cfg.output_dir.c_str());
    } else if (eval_cmd->parsed()) {
      const xmlt::ExperimentConfig cfg = load_config(eval_args);
      require_data_dir(cfg);
      if (!std::filesystem::is_regular_file(cfg.resolved_checkpoint()))
        xmlt::raise(xmlt::ErrorCode::InvalidConfig,
                    "checkpoint '" + cfg.resolved_checkpoint() + "' does not exist");
      const xmlt::BenchmarkData data = xmlt::load_benchmark_data(cfg.resolved_data_dir());
      const xmlt::ModelParams params = xmlt::load_checkpoint(cfg.resolved_checkpoint());
      xmlt::EvalFlags flags{image_only, do_export, use_pca2d};
      const xmlt::MetricsReport report = xmlt::run_eval(cfg, params, data, flags, cfg.output_dir);
      std::printf("top1 %.4f top5 %.4f; report at %s/metrics.json\n", report.top1_all,
                  report.top5_all, cfg.output_dir.c_str());
    } else if (ablate->parsed()) {
      const xmlt::ExperimentConfig cfg = load_config(ablate_args);
      const xmlt::AblationResult result = xmlt::run_ablation(cfg);
      std::filesystem::create_directories(cfg.output_dir);
      xmlt::write_text_file(cfg.output_dir + "/ablation.json",
                            xmlt::ablation_to_json(result).dump(2) + "\n");
      const std::string table = xmlt::ablation_to_text(result);
      xmlt::write_text_file(cfg.output_dir + "/ablation.txt", table);
      std::fputs(table.c_str(), stdout);
    }
  } catch (const xmlt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
