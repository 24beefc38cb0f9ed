#pragma once

// One reproducible run: resolve data, write the manifest, train, and report
// metrics for every split.

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ssmtl/config.hpp"
#include "ssmtl/dataset.hpp"
#include "ssmtl/trainer.hpp"

namespace ssmtl {

inline constexpr const char* kToolVersion = "0.1.0";

// Synthetic data from config.synth and config.seed, or a labelled directory.
Dataset load_experiment_data(const ExperimentConfig& config);
DatasetSplit load_experiment_split(const ExperimentConfig& config);

nlohmann::json make_manifest(const ExperimentConfig& config, const std::filesystem::path& out_dir);
// Accepts either a manifest (uses its "config" member) or a flat config.
ExperimentConfig config_from_file(const std::filesystem::path& path);

struct ExperimentResult {
    TrainResult training;
    EvalResult train_metrics, val_metrics, test_metrics;
};

// Metrics JSON: {"experiment", "epoch", "class_names", "splits": {split: {"n", "tasks": {...}}}}
nlohmann::json metrics_json(const ExperimentConfig& config, const ExperimentResult& r);

struct ExperimentOptions {
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const EpochRecord&)> on_epoch;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const DatasetSplit& data,
                                const ExperimentOptions& opts = {});
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& opts = {});

}  // namespace ssmtl
