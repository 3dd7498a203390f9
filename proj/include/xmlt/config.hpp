#pragma once

// Experiment configuration file: one JSON document holding the benchmark
// generator settings, the training settings, evaluation options, the ablation
// seed set and the output/data locations. Unknown keys are rejected so typos
// fail loudly instead of silently using defaults.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/core.hpp"
#include "xmlt/eval.hpp"
#include "xmlt/io.hpp"
#include "xmlt/synthgen.hpp"
#include "xmlt/trainer.hpp"

namespace xmlt {

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  TrainConfig train;
  GroupAccuracyMode group_mode = GroupAccuracyMode::SampleWeighted;
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs/default";
  std::string data_dir;         // defaults to output_dir when empty
  std::string checkpoint_path;  // defaults to <output_dir>/checkpoint.xmlt
  std::uint64_t seed = 0;

  std::string resolved_data_dir() const { return data_dir.empty() ? output_dir : data_dir; }
  std::string resolved_checkpoint() const {
    return checkpoint_path.empty() ? output_dir + "/checkpoint.xmlt" : checkpoint_path;
  }
};

namespace detail {

using config_json = nlohmann::ordered_json;

inline void reject_unknown_keys(const config_json& j, const std::set<std::string>& known,
                                const std::string& scope) {
  for (const auto& item : j.items())
    if (!known.contains(item.key()))
      raise(ErrorCode::InvalidConfig, "unknown config key '" + scope + item.key() + "'");
}

template <class T>
void read_field(const config_json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const config_json::exception&) {
    raise(ErrorCode::InvalidConfig, std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const detail::config_json& j) {
  using detail::read_field;
  detail::reject_unknown_keys(j, {"seed", "output_dir", "data_dir", "checkpoint_path",
                                  "benchmark", "train", "eval", "ablate"},
                              "");
  ExperimentConfig cfg;
  read_field(j, "seed", cfg.seed);
  read_field(j, "output_dir", cfg.output_dir);
  read_field(j, "data_dir", cfg.data_dir);
  read_field(j, "checkpoint_path", cfg.checkpoint_path);

  if (j.contains("benchmark")) {
    const auto& b = j.at("benchmark");
    detail::reject_unknown_keys(
        b,
        {"num_classes", "clusters", "feature_dim", "text_dim", "n_max", "imbalance_ratio",
         "domain_shift", "label_noise_rate", "text_error_rate", "test_per_class"},
        "benchmark.");
    read_field(b, "num_classes", cfg.benchmark.num_classes);
    read_field(b, "clusters", cfg.benchmark.clusters);
    read_field(b, "feature_dim", cfg.benchmark.feature_dim);
    read_field(b, "text_dim", cfg.benchmark.text_dim);
    read_field(b, "n_max", cfg.benchmark.n_max);
    read_field(b, "imbalance_ratio", cfg.benchmark.imbalance_ratio);
    read_field(b, "label_noise_rate", cfg.benchmark.label_noise_rate);
    read_field(b, "text_error_rate", cfg.benchmark.text_error_rate);
    read_field(b, "test_per_class", cfg.benchmark.test_per_class);
    if (b.contains("domain_shift")) {
      const auto& d = b.at("domain_shift");
      detail::reject_unknown_keys(d, {"offset", "mixing"}, "benchmark.domain_shift.");
      read_field(d, "offset", cfg.benchmark.domain_shift.offset);
      read_field(d, "mixing", cfg.benchmark.domain_shift.mixing);
    }
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(
        t,
        {"learning_rate", "batch_per_domain", "epochs", "lambda_align", "lambda_cal",
         "margin", "momentum", "shared_dim", "use_alignment", "use_calibration", "use_title",
         "use_ingredients", "count_mode", "mining", "renormalize_fused"},
        "train.");
    read_field(t, "learning_rate", cfg.train.learning_rate);
    read_field(t, "batch_per_domain", cfg.train.batch_per_domain);
    read_field(t, "epochs", cfg.train.epochs);
    read_field(t, "lambda_align", cfg.train.lambda_align);
    read_field(t, "lambda_cal", cfg.train.lambda_cal);
    read_field(t, "margin", cfg.train.margin);
    read_field(t, "momentum", cfg.train.momentum);
    read_field(t, "shared_dim", cfg.train.shared_dim);
    read_field(t, "use_alignment", cfg.train.use_alignment);
    read_field(t, "use_calibration", cfg.train.use_calibration);
    read_field(t, "use_title", cfg.train.use_title);
    read_field(t, "use_ingredients", cfg.train.use_ingredients);
    read_field(t, "renormalize_fused", cfg.train.renormalize_fused);
    if (t.contains("count_mode")) {
      const std::string mode = t.at("count_mode").get<std::string>();
      if (mode == "combined")
        cfg.train.count_mode = CountMode::Combined;
      else if (mode == "target-only")
        cfg.train.count_mode = CountMode::TargetOnly;
      else if (mode == "source-only")
        cfg.train.count_mode = CountMode::SourceOnly;
      else
        raise(ErrorCode::InvalidConfig, "count_mode must be combined|target-only|source-only");
    }
    if (t.contains("mining")) {
      const std::string mode = t.at("mining").get<std::string>();
      if (mode == "hardest")
        cfg.train.mining = Mining::HardestInBatch;
      else if (mode == "all-pairs-mean")
        cfg.train.mining = Mining::AllPairsMean;
      else
        raise(ErrorCode::InvalidConfig, "mining must be hardest|all-pairs-mean");
    }
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown_keys(e, {"group_accuracy_mode"}, "eval.");
    if (e.contains("group_accuracy_mode")) {
      const std::string mode = e.at("group_accuracy_mode").get<std::string>();
      if (mode == "sample-weighted")
        cfg.group_mode = GroupAccuracyMode::SampleWeighted;
      else if (mode == "class-mean")
        cfg.group_mode = GroupAccuracyMode::ClassMean;
      else
        raise(ErrorCode::InvalidConfig,
              "group_accuracy_mode must be sample-weighted|class-mean");
    }
  }

  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    detail::reject_unknown_keys(a, {"seeds"}, "ablate.");
    read_field(a, "seeds", cfg.ablate_seeds);
    if (cfg.ablate_seeds.empty())
      raise(ErrorCode::InvalidConfig, "ablate.seeds must not be empty");
  }

  cfg.benchmark.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.benchmark.validate();
  cfg.train.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  detail::config_json j;
  try {
    j = detail::config_json::parse(read_text_file(path));
  } catch (const detail::config_json::exception& e) {
    raise(ErrorCode::InvalidConfig, "config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) raise(ErrorCode::InvalidConfig, "config root must be an object");
  return parse_experiment_config(j);
}

/// Canonical dump of everything that affects computed results: output paths
/// are excluded so the fingerprint identifies the experiment, not where its
/// artifacts land.
inline detail::config_json semantic_config_json(const ExperimentConfig& cfg);

/// Canonical dump used for the manifest and config round trips.
inline detail::config_json experiment_config_to_json(const ExperimentConfig& cfg) {
  detail::config_json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["data_dir"] = cfg.data_dir;
  j["checkpoint_path"] = cfg.checkpoint_path;
  j["benchmark"] = {
      {"num_classes", cfg.benchmark.num_classes},
      {"clusters", cfg.benchmark.clusters},
      {"feature_dim", cfg.benchmark.feature_dim},
      {"text_dim", cfg.benchmark.text_dim},
      {"n_max", cfg.benchmark.n_max},
      {"imbalance_ratio", cfg.benchmark.imbalance_ratio},
      {"domain_shift",
       {{"offset", cfg.benchmark.domain_shift.offset},
        {"mixing", cfg.benchmark.domain_shift.mixing}}},
      {"label_noise_rate", cfg.benchmark.label_noise_rate},
      {"text_error_rate", cfg.benchmark.text_error_rate},
      {"test_per_class", cfg.benchmark.test_per_class},
  };
  j["train"] = {
      {"learning_rate", cfg.train.learning_rate},
      {"batch_per_domain", cfg.train.batch_per_domain},
      {"epochs", cfg.train.epochs},
      {"lambda_align", cfg.train.lambda_align},
      {"lambda_cal", cfg.train.lambda_cal},
      {"margin", cfg.train.margin},
      {"momentum", cfg.train.momentum},
      {"shared_dim", cfg.train.shared_dim},
      {"use_alignment", cfg.train.use_alignment},
      {"use_calibration", cfg.train.use_calibration},
      {"use_title", cfg.train.use_title},
      {"use_ingredients", cfg.train.use_ingredients},
      {"count_mode", cfg.train.count_mode == CountMode::Combined
                         ? "combined"
                         : (cfg.train.count_mode == CountMode::TargetOnly ? "target-only"
                                                                          : "source-only")},
      {"mining", cfg.train.mining == Mining::HardestInBatch ? "hardest" : "all-pairs-mean"},
      {"renormalize_fused", cfg.train.renormalize_fused},
  };
  j["eval"] = {{"group_accuracy_mode", cfg.group_mode == GroupAccuracyMode::SampleWeighted
                                           ? "sample-weighted"
                                           : "class-mean"}};
  j["ablate"] = {{"seeds", cfg.ablate_seeds}};
  return j;
}

inline detail::config_json semantic_config_json(const ExperimentConfig& cfg) {
  detail::config_json j = experiment_config_to_json(cfg);
  j.erase("output_dir");
  j.erase("data_dir");
  j.erase("checkpoint_path");
  return j;
}

}  // namespace xmlt
