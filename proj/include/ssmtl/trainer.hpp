#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmtl/checkpoint.hpp"
#include "ssmtl/config.hpp"
#include "ssmtl/dataset.hpp"
#include "ssmtl/metrics.hpp"
#include "ssmtl/model.hpp"

namespace ssmtl {

// lr0 * decay_factor^floor(epoch / decay_every), epoch counted from 0.
double lr_at_epoch(int epoch, double lr0, double decay_factor, int decay_every);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
};

// Increments state.step, then applies one bias-corrected update using each
// tensor's accumulated gradient (absent gradient = 0).
void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr, const AdamOptions& opts = {});

// ---------------------------------------------------------------------------
// Log
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;  // combined objective, batch-size weighted mean
    std::vector<double> task_loss;
    std::vector<double> train_acc;  // running accuracy in train mode
    std::vector<double> val_acc;
    std::vector<double> s;
    std::vector<double> sigma;
    std::vector<double> confidence;  // 1 / sigma
    double wall_seconds = 0.0;       // not part of the serialised log
};

struct TrainLog {
    std::vector<std::string> tasks;
    std::vector<EpochRecord> records;

    std::string csv() const;
    std::string jsonl() const;
    std::string timing_csv() const;
    nlohmann::json to_json() const;
    static TrainLog from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

struct InferenceResult {
    std::vector<std::vector<int>> predictions;  // [task][sample]
    std::vector<std::vector<int>> labels;       // [task][sample]
    Matrix features;                            // FC2, [sample][dim]
};

// Eval-mode pass in dataset order. SSDT labels come from the deterministic
// evaluation stream of `seed`.
InferenceResult infer(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                      std::uint64_t seed, std::size_t batch_size = 64, bool keep_features = false);

struct EvalResult {
    std::size_t n = 0;
    std::vector<TaskMetrics> tasks;

    const TaskMetrics& task(const std::string& name) const;
    nlohmann::json to_json() const;
};

EvalResult evaluate(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                    std::uint64_t seed, std::size_t batch_size = 64);
EvalResult evaluate_predictions(const std::vector<TaskDef>& tasks, const InferenceResult& inf);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainOptions {
    // When set: checkpoint_last.bin, checkpoint_best.bin, trainlog.csv,
    // trainlog.jsonl and timing.csv are written here.
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    MultiTaskModel model;
    TrainLog log;
    AdamState optimizer;
    int best_epoch = 0;
    double best_val_acc = -1.0;
    std::optional<std::filesystem::path> checkpoint;
};

TrainResult train(const ExperimentConfig& config, const DatasetSplit& data, const TrainOptions& opts = {});

// Checkpoint helpers shared by train/eval/features.
struct LoadedModel {
    ExperimentConfig config;
    MultiTaskModel model;
    int epoch = 0;
};

CheckpointFile make_checkpoint(const ExperimentConfig& config, const MultiTaskModel& model, const AdamState* adam,
                               int epoch, const TrainLog& log, const std::string& rng_state, int best_epoch,
                               double best_val_acc);
LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace ssmtl
