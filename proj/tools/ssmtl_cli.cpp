// ssmtl: synthesize data, train, evaluate, export features, project, and
// self-check the gradient engine.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ssmtl/analysis.hpp"
#include "ssmtl/experiment.hpp"
#include "ssmtl/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace ssmtl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags shared by `train` and `experiment`. Optional so that only flags the
// user actually gave override the config file.
struct RunFlags {
    std::optional<std::string> data, labels, arch, loss, levels, tasks;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, batch;
    std::optional<double> lr, alpha;
    std::string config_file;
    std::vector<std::string> overrides;
    std::string out;
    std::string resume;
    bool quiet = false;

    void add_to(CLI::App* app, bool with_tasks) {
        app->add_option("--data", data, "Data source: synth or dir:PATH");
        app->add_option("--labels", labels, "Labels CSV (id,filename,class) for dir: data");
        app->add_option("--seed", seed, "Seed controlling all randomness");
        app->add_option("--epochs", epochs, "Number of epochs");
        app->add_option("--batch", batch, "Batch size");
        app->add_option("--lr", lr, "Initial learning rate");
        app->add_option("--arch", arch, "Architecture scale: desk or paper");
        app->add_option("--loss", loss, "Loss mode: fixed or uncertainty");
        app->add_option("--levels", levels, "Distortion level set: config1 or config2");
        app->add_option("--alpha", alpha, "Weight-decay coefficient on the L2 penalty");
        if (with_tasks)
            app->add_option("--tasks", tasks, "Comma-separated distortion tasks (brightness,contrast,motion_blur)");
        app->add_option("--config", config_file, "Flat JSON config or a run manifest");
        app->add_option("--set", overrides, "Override a config key: key=value (repeatable)");
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--resume", resume, "Resume from checkpoint_last.bin");
        app->add_flag("--quiet", quiet, "Do not print per-epoch progress");
    }

    ExperimentConfig resolve(ExperimentConfig c) const {
        if (!config_file.empty()) {
            const auto keep_name = c.name;
            c = config_from_file(config_file);
            if (keep_name != "custom" && c.name != keep_name)
                throw UsageFailure("config file describes '" + c.name + "', not '" + keep_name + "'");
        }
        for (const auto& o : overrides) c.apply_override(o);
        nlohmann::json flat = nlohmann::json::object();
        if (data) flat["data"] = *data;
        if (labels) flat["labels"] = *labels;
        if (seed) flat["seed"] = *seed;
        if (epochs) flat["epochs"] = *epochs;
        if (batch) flat["batch"] = *batch;
        if (lr) flat["lr"] = *lr;
        if (arch) flat["arch"] = *arch;
        if (loss) flat["loss"] = *loss;
        if (levels) flat["levels"] = *levels;
        if (alpha) flat["alpha"] = *alpha;
        if (tasks) flat["tasks"] = *tasks;
        c.apply_json(flat);
        c.validate();
        return c;
    }
};

void print_epoch(const TrainLog& log, const EpochRecord& r) {
    std::printf("epoch %3d  lr %-8g loss %.4f", r.epoch, r.lr, r.train_loss);
    for (std::size_t t = 0; t < log.tasks.size(); ++t) {
        std::printf("  %s: acc %.3f", log.tasks[t].c_str(), r.train_acc[t]);
        if (t < r.val_acc.size()) std::printf("/%.3f", r.val_acc[t]);
        if (t < r.sigma.size()) std::printf(" sigma %.3f", r.sigma[t]);
    }
    std::printf("  (%.1fs)\n", r.wall_seconds);
    std::fflush(stdout);
}

void print_eval(const std::string& split, const EvalResult& e) {
    for (const auto& tm : e.tasks) {
        std::printf("%-5s %-12s acc %.4f", split.c_str(), tm.task.c_str(), tm.metrics.accuracy.value_or(0.0));
        if (tm.task == kPathologyTask) {
            std::printf("  sens");
            for (const auto& v : tm.metrics.sensitivity) v ? std::printf(" %.3f", *v) : std::printf(" n/a");
        }
        std::printf("\n");
    }
}

int run_training(const ExperimentConfig& config, const RunFlags& flags) {
    const fs::path out = flags.out;
    ExperimentOptions opts;
    opts.out_dir = out;
    if (!flags.resume.empty()) opts.resume_from = fs::path(flags.resume);
    std::vector<std::string> tasks;
    for (const auto& t : config.tasks()) tasks.push_back(t.name);
    TrainLog header{tasks, {}};
    if (!flags.quiet) opts.on_epoch = [&](const EpochRecord& r) { print_epoch(header, r); };
    const auto r = run_experiment(config, opts);
    print_eval("train", r.train_metrics);
    print_eval("val", r.val_metrics);
    print_eval("test", r.test_metrics);
    std::printf("wrote %s\n", (out / "metrics.json").string().c_str());
    return 0;
}

const Dataset& pick_split(const DatasetSplit& s, const std::string& name, Dataset& all_storage,
                          const ExperimentConfig& config) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") {
        all_storage = load_experiment_data(config);
        return all_storage;
    }
    throw UsageFailure("--split must be train, val, test or all");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task classifier with self-supervised distortion tasks and uncertainty weighting"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic labelled dataset (PPM images + labels.csv)");
    SyntheticParams sp;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--per-class", sp.per_class, "Images per class")->capture_default_str();
    synth->add_option("--size", sp.image_size, "Image side length")->capture_default_str();
    synth->add_option("--confounder-bias", sp.confounder_bias, "P(bubbles | normal)")->capture_default_str();
    synth->add_option("--lesion-strength", sp.lesion_strength, "Opacity of lesion marks")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Seed")->capture_default_str();
    synth->add_option("--out", synth_out, "Output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a custom configuration");
    RunFlags train_flags;
    train_flags.add_to(train_cmd, true);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Train a named configuration: stl, p-mb, p-c, p-b, p-b-c");
    RunFlags exp_flags;
    std::string exp_name;
    exp_cmd->add_option("name", exp_name, "Configuration name")
        ->required()
        ->check(CLI::IsMember(ExperimentConfig::preset_names()));
    exp_flags.add_to(exp_cmd, false);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a data split");
    std::string eval_ckpt, eval_split = "test", eval_out, eval_data, eval_labels;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--split", eval_split, "train, val, test or all")->capture_default_str();
    eval_cmd->add_option("--data", eval_data, "Override the data source stored in the checkpoint");
    eval_cmd->add_option("--labels", eval_labels, "Labels CSV for dir: data");
    eval_cmd->add_option("--out", eval_out, "Write metrics JSON here");

    // features
    auto* feat_cmd = app.add_subcommand("features", "Export FC2 features of a checkpoint as CSV");
    std::string feat_ckpt, feat_split = "test", feat_out, feat_data, feat_labels;
    feat_cmd->add_option("--checkpoint", feat_ckpt, "Checkpoint file")->required();
    feat_cmd->add_option("--split", feat_split, "train, val, test or all")->capture_default_str();
    feat_cmd->add_option("--data", feat_data, "Override the data source stored in the checkpoint");
    feat_cmd->add_option("--labels", feat_labels, "Labels CSV for dir: data");
    feat_cmd->add_option("--out", feat_out, "Output CSV")->required();

    // project
    auto* proj_cmd = app.add_subcommand("project", "PCA-project a feature CSV and report k-NN purity");
    std::string proj_in, proj_out;
    std::size_t proj_dims = 3, proj_k = 10;
    bool proj_cosine = false;
    proj_cmd->add_option("--features", proj_in, "Feature CSV from `features`")->required();
    proj_cmd->add_option("--out", proj_out, "Output directory")->required();
    proj_cmd->add_option("--dims", proj_dims, "Number of principal components")->capture_default_str();
    proj_cmd->add_option("--k", proj_k, "Neighbours for purity")->capture_default_str();
    proj_cmd->add_flag("--cosine", proj_cosine, "Cosine instead of Euclidean distance for purity");

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full model loss");
    std::uint64_t gc_seed = 0;
    std::size_t gc_coords = 12;
    std::string gc_arch = "desk";
    gc_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();
    gc_cmd->add_option("--coords", gc_coords, "Coordinates sampled per model tensor (0 = all)")->capture_default_str();
    gc_cmd->add_option("--arch", gc_arch, "Architecture scale for the model check")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) {
            sp.validate();
            const auto ds = generate_synthetic(sp, synth_seed);
            export_dataset(ds, synth_out);
            std::printf("wrote %zu images to %s\n", ds.size(), synth_out.c_str());
            return 0;
        }
        if (*train_cmd) return run_training(train_flags.resolve(ExperimentConfig{}), train_flags);
        if (*exp_cmd) return run_training(exp_flags.resolve(ExperimentConfig::preset(exp_name)), exp_flags);

        if (*eval_cmd || *feat_cmd) {
            const bool is_eval = eval_cmd->parsed();
            auto lm = load_model(is_eval ? eval_ckpt : feat_ckpt);
            const auto& data = is_eval ? eval_data : feat_data;
            const auto& labels = is_eval ? eval_labels : feat_labels;
            if (!data.empty()) lm.config.data = data;
            if (!labels.empty()) lm.config.labels = labels;
            const auto splits = load_experiment_split(lm.config);
            Dataset all;
            const auto& ds = pick_split(splits, is_eval ? eval_split : feat_split, all, lm.config);
            const auto specs = lm.config.ssdt_specs();
            const auto bs = static_cast<std::size_t>(lm.config.batch_size);
            if (is_eval) {
                const auto r = evaluate(lm.model, ds, specs, lm.config.seed, bs);
                print_eval(eval_split, r);
                if (!eval_out.empty()) {
                    nlohmann::json j = {{"experiment", lm.config.name},
                                        {"epoch", lm.epoch},
                                        {"split", eval_split},
                                        {"metrics", r.to_json()}};
                    std::ofstream(eval_out) << j.dump(2) << '\n';
                }
            } else {
                const auto table = extract_features(lm.model, ds, specs, lm.config.seed, bs);
                table.write_csv(feat_out);
                std::printf("wrote %zu x %zu features to %s\n", table.rows.size(), table.dim, feat_out.c_str());
            }
            return 0;
        }

        if (*proj_cmd) {
            const auto table = FeatureTable::read_csv(proj_in);
            const auto x = table.matrix();
            const auto pca = pca_project(x, proj_dims);
            fs::create_directories(proj_out);
            write_projection(table, pca, fs::path(proj_out) / "projection.csv", fs::path(proj_out) / "projection.json");
            const auto labels = table.true_classes();
            const auto purity = knn_purity(x, labels, proj_k, proj_cosine ? Distance::Cosine : Distance::Euclidean);
            std::printf("explained variance:");
            for (double r : pca.explained_ratio) std::printf(" %.4f", r);
            std::printf("\nk-NN purity (k=%zu): overall %.4f", proj_k, purity.overall);
            for (std::size_t c = 0; c < purity.per_class.size(); ++c)
                if (purity.per_class[c])
                    std::printf("  %s %.4f",
                                c < kPathologyNames.size() ? std::string(kPathologyNames[c]).c_str() : "?",
                                *purity.per_class[c]);
            std::printf("\n");
            return 0;
        }

        if (*gc_cmd) {
            constexpr double kTolerance = 1e-4;
            bool ok = true;
            auto report = [&](const NamedGradCheck& c) {
                const bool pass = c.result.max_rel_error < kTolerance;
                ok = ok && pass;
                std::printf("%-28s max rel err %.3e over %zu coords (%zu with reduced step, %zu on a kink)  %s\n",
                            c.name.c_str(), c.result.max_rel_error, c.result.coords_checked,
                            c.result.coords_step_reduced, c.result.coords_on_kink, pass ? "ok" : "FAIL");
            };
            for (const auto& c : op_grad_checks(gc_seed)) report(c);
            for (const char* preset : {"stl", "p-b-c"}) {
                auto c = ExperimentConfig::preset(preset);
                c.arch = gc_arch;
                c.alpha = 1e-3;
                report(model_grad_check(c, {2, gc_coords, gc_seed, true}));
            }
            return ok ? 0 : kExitRuntime;
        }
    } catch (const UsageFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const ConfigFileError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
