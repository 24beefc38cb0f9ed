#include "ssmtl/experiment.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

namespace ssmtl {

Dataset load_experiment_data(const ExperimentConfig& config) {
    if (config.data == "synth") return generate_synthetic(config.synth, config.seed);
    if (config.data.rfind("dir:", 0) == 0) {
        const std::filesystem::path dir = config.data.substr(4);
        const std::filesystem::path labels = config.labels.empty() ? dir / "labels.csv" : std::filesystem::path(config.labels);
        return load_labeled_dir(dir, labels);
    }
    throw ConfigFileError("data must be 'synth' or 'dir:PATH'");
}

DatasetSplit load_experiment_split(const ExperimentConfig& config) {
    return split(load_experiment_data(config), config.split, config.seed);
}

nlohmann::json make_manifest(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return {{"tool", "ssmtl"},
            {"version", kToolVersion},
            {"timestamp", stamp},
            {"config", config.to_json()},
            {"artifacts",
             {{"trainlog_csv", (out_dir / "trainlog.csv").string()},
              {"trainlog_jsonl", (out_dir / "trainlog.jsonl").string()},
              {"timing_csv", (out_dir / "timing.csv").string()},
              {"checkpoint_last", (out_dir / "checkpoint_last.bin").string()},
              {"checkpoint_best", (out_dir / "checkpoint_best.bin").string()},
              {"metrics", (out_dir / "metrics.json").string()}}}};
}

ExperimentConfig config_from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigFileError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigFileError(path.string() + ": " + e.what());
    }
    if (j.contains("config") && j.contains("tool")) return ExperimentConfig::from_json(j.at("config"));
    return ExperimentConfig::from_json(j);
}

nlohmann::json metrics_json(const ExperimentConfig& config, const ExperimentResult& r) {
    nlohmann::json names = nlohmann::json::object();
    names[kPathologyTask] = kPathologyNames;
    for (const auto& s : config.ssdt_specs()) {
        nlohmann::json levels = nlohmann::json::array();
        for (double l : s.levels) levels.push_back(l);
        names[s.task_name()] = levels;
    }
    return {{"experiment", config.name},
            {"epoch", r.training.log.records.empty() ? 0 : r.training.log.records.back().epoch},
            {"class_names", names},
            {"splits",
             {{"train", r.train_metrics.to_json()},
              {"val", r.val_metrics.to_json()},
              {"test", r.test_metrics.to_json()}}}};
}

ExperimentResult run_experiment(const ExperimentConfig& config, const DatasetSplit& data,
                                const ExperimentOptions& opts) {
    config.validate();
    if (opts.out_dir) {
        std::filesystem::create_directories(*opts.out_dir);
        std::ofstream(*opts.out_dir / "manifest.json") << make_manifest(config, *opts.out_dir).dump(2) << '\n';
    }
    ExperimentResult r;
    r.training = train(config, data, TrainOptions{opts.out_dir, opts.resume_from, opts.on_epoch});
    const auto specs = config.ssdt_specs();
    const auto bs = static_cast<std::size_t>(config.batch_size);
    r.train_metrics = evaluate(r.training.model, data.train, specs, config.seed, bs);
    if (!data.val.empty()) r.val_metrics = evaluate(r.training.model, data.val, specs, config.seed, bs);
    if (!data.test.empty()) r.test_metrics = evaluate(r.training.model, data.test, specs, config.seed, bs);
    if (opts.out_dir) std::ofstream(*opts.out_dir / "metrics.json") << metrics_json(config, r).dump(2) << '\n';
    return r;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& opts) {
    return run_experiment(config, load_experiment_split(config), opts);
}

}  // namespace ssmtl
