#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmtl/experiment.hpp"
#include "ssmtl/trainer.hpp"

using namespace ssmtl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(const std::string& preset, int per_class = 12, int epochs = 3) {
    auto c = ExperimentConfig::preset(preset);
    c.synth.per_class = per_class;
    c.epochs = epochs;
    c.batch_size = 16;
    c.seed = 3;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("ssmtl_test_trainer_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

bool same_parameters(const MultiTaskModel& a, const MultiTaskModel& b) {
    const auto na = a.parameters(), nb = b.parameters();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i)
        if (!std::equal(na[i].data().begin(), na[i].data().end(), nb[i].data().begin(), nb[i].data().end()))
            return false;
    return true;
}

}  // namespace

// ============================================================================
// Schedule and optimizer
// ============================================================================

TEST(LrSchedule, StepDecayExact) {
    EXPECT_EQ(lr_at_epoch(0, 0.01, 0.1, 50), 0.01);
    EXPECT_EQ(lr_at_epoch(49, 0.01, 0.1, 50), 0.01);
    EXPECT_EQ(lr_at_epoch(50, 0.01, 0.1, 50), 0.001);
    EXPECT_EQ(lr_at_epoch(100, 0.01, 0.1, 50), 1e-4);
    EXPECT_EQ(lr_at_epoch(120, 0.01, 0.1, 50), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at_epoch(25, 0.008, 0.5, 10), 0.002);
}

TEST(LrSchedule, Errors) {
    EXPECT_THROW(lr_at_epoch(-1, 0.01, 0.1, 50), ad::UsageError);
    EXPECT_THROW(lr_at_epoch(1, 0.01, 0.1, 0), ad::ConfigError);
}

TEST(Adam, FirstStepIsLrTimesSign) {
    std::vector<ad::Tensor> p = {ad::Tensor({2}, {0.5, -0.5}, true)};
    p[0].grad()[0] = 1.0;
    p[0].grad()[1] = -3.0;
    AdamState st;
    adam_step(p, st, 0.01);
    EXPECT_EQ(st.step, 1u);
    EXPECT_NEAR(p[0].data()[0], 0.5 - 0.01 / (1.0 + 1e-8), 1e-16);
    EXPECT_NEAR(p[0].data()[1], -0.5 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-16);
}

TEST(Adam, SecondStepMatchesHandRecursion) {
    std::vector<ad::Tensor> p = {ad::Tensor::scalar(0.0, true)};
    AdamState st;
    const double g[2] = {2.0, -1.0};
    double m = 0, v = 0, x = 0;
    for (int t = 1; t <= 2; ++t) {
        p[0].drop_grad();
        p[0].grad()[0] = g[t - 1];
        adam_step(p, st, 0.05);
        m = 0.9 * m + 0.1 * g[t - 1];
        v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
        x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    EXPECT_NEAR(p[0].item(), x, 1e-15);
}

TEST(Adam, ZeroGradientNoChange) {
    std::vector<ad::Tensor> p = {ad::Tensor({3}, {1.0, 2.0, 3.0}, true), ad::Tensor::scalar(4.0, true)};
    p[0].grad();  // allocated, all zero
    AdamState st;
    adam_step(p, st, 0.01);
    EXPECT_EQ(p[0].data()[1], 2.0);
    EXPECT_EQ(p[1].item(), 4.0);
}

TEST(Adam, IdenticalParamsStayIdentical) {
    std::vector<ad::Tensor> p = {ad::Tensor::scalar(0.3, true), ad::Tensor::scalar(0.3, true)};
    AdamState st;
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double g = normal(rng);
        for (auto& t : p) {
            t.drop_grad();
            t.grad()[0] = g;
        }
        adam_step(p, st, 0.01);
        ASSERT_EQ(p[0].item(), p[1].item());
    }
}

// ============================================================================
// Configurations
// ============================================================================

TEST(Presets, MatchNamedConfigurations) {
    EXPECT_TRUE(ExperimentConfig::preset("stl").ssdt_families.empty());
    EXPECT_EQ(ExperimentConfig::preset("p-mb").ssdt_families, std::vector{DistortionFamily::MotionBlur});
    EXPECT_EQ(ExperimentConfig::preset("p-c").ssdt_families, std::vector{DistortionFamily::Contrast});
    EXPECT_EQ(ExperimentConfig::preset("p-b").ssdt_families, std::vector{DistortionFamily::Brightness});
    EXPECT_EQ(ExperimentConfig::preset("p-b-c").ssdt_families,
              (std::vector{DistortionFamily::Brightness, DistortionFamily::Contrast}));
    const auto tasks = ExperimentConfig::preset("p-b-c").tasks();
    ASSERT_EQ(tasks.size(), 3u);
    EXPECT_EQ(tasks[0].num_classes, 3);
    EXPECT_EQ(tasks[2].num_classes, 4);
    EXPECT_ANY_THROW(ExperimentConfig::preset("p-x"));
}

// ============================================================================
// Training loop
// ============================================================================

TEST(Train, DeterministicForSeed) {
    const auto c = small_config("p-c");
    const auto data = load_experiment_split(c);
    const auto a = train(c, data), b = train(c, data);
    EXPECT_EQ(a.log.csv(), b.log.csv());
    EXPECT_EQ(a.log.jsonl(), b.log.jsonl());
    EXPECT_TRUE(same_parameters(a.model, b.model));

    auto c2 = c;
    c2.seed = 4;
    EXPECT_NE(train(c2, load_experiment_split(c2)).log.csv(), a.log.csv());
}

TEST(Train, LogSchemaForTwoTasks) {
    const auto c = small_config("p-c", 12, 2);
    const auto r = train(c, load_experiment_split(c));
    EXPECT_EQ(r.log.tasks, (std::vector<std::string>{"pathology", "contrast"}));
    ASSERT_EQ(r.log.records.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& rec = r.log.records[i];
        EXPECT_EQ(rec.epoch, static_cast<int>(i) + 1);
        EXPECT_EQ(rec.s.size(), 2u);
        EXPECT_EQ(rec.confidence.size(), 2u);
        EXPECT_EQ(rec.val_acc.size(), 2u);
        EXPECT_DOUBLE_EQ(rec.confidence[1], std::exp(-rec.s[1] / 2.0));
    }
    const auto csv = r.log.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "epoch,lr,train_loss,loss_pathology,train_acc_pathology,val_acc_pathology,s_pathology,sigma_pathology,"
              "inv_sigma_pathology,loss_contrast,train_acc_contrast,val_acc_contrast,s_contrast,sigma_contrast,"
              "inv_sigma_contrast");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(TrainLog::from_json(r.log.to_json()).csv(), csv);
    // s moves under the uncertainty objective.
    EXPECT_NE(r.log.records.back().s[1], 0.0);
}

TEST(Train, SingleTaskFrozenSEqualsStl) {
    auto stl = small_config("stl");
    auto unc = stl;
    unc.name = "custom";
    unc.loss_mode = LossMode::Uncertainty;
    unc.freeze_uncertainty = true;
    const auto data = load_experiment_split(stl);
    const auto a = train(stl, data), b = train(unc, data);
    EXPECT_TRUE(same_parameters(a.model, b.model));
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
        EXPECT_EQ(a.log.records[i].train_loss, b.log.records[i].train_loss);
        EXPECT_EQ(a.log.records[i].val_acc, b.log.records[i].val_acc);
    }
    EXPECT_EQ(b.model.uncertainty().s[0].item(), 0.0);
}

TEST(Train, SameWithNonzeroAlpha) {
    auto stl = small_config("stl", 12, 2);
    stl.alpha = 0.01;
    auto unc = stl;
    unc.loss_mode = LossMode::Uncertainty;
    unc.freeze_uncertainty = true;
    const auto data = load_experiment_split(stl);
    EXPECT_TRUE(same_parameters(train(stl, data).model, train(unc, data).model));
}

TEST(Train, ResumeEqualsUninterrupted) {
    auto c = small_config("p-b", 12, 20);
    c.checkpoint_every = 10;
    const auto data = load_experiment_split(c);
    const auto straight = train(c, data);

    const auto dir = fresh_dir("resume");
    auto first = c;
    first.epochs = 10;
    train(first, data, {dir, std::nullopt, {}});
    ASSERT_TRUE(fs::exists(dir / "checkpoint_last.bin"));
    const auto resumed = train(c, data, {std::nullopt, dir / "checkpoint_last.bin", {}});

    EXPECT_TRUE(same_parameters(straight.model, resumed.model));
    for (std::size_t t = 0; t < 2; ++t)
        EXPECT_EQ(straight.model.uncertainty().s[t].item(), resumed.model.uncertainty().s[t].item());
    EXPECT_EQ(straight.log.csv(), resumed.log.csv());
    EXPECT_EQ(straight.optimizer.step, resumed.optimizer.step);
}

TEST(Train, ResumeRejectsMismatchedExperiment) {
    const auto c = small_config("p-b", 12, 1);
    const auto dir = fresh_dir("mismatch");
    const auto data = load_experiment_split(c);
    train(c, data, {dir, std::nullopt, {}});
    const auto other = small_config("p-c", 12, 2);
    EXPECT_THROW(train(other, data, {std::nullopt, dir / "checkpoint_last.bin", {}}), TrainingError);
}

TEST(Train, WritesArtifacts) {
    const auto c = small_config("stl", 12, 2);
    const auto dir = fresh_dir("artifacts");
    const auto r = train(c, load_experiment_split(c), {dir, std::nullopt, {}});
    for (const char* f : {"checkpoint_last.bin", "checkpoint_best.bin", "trainlog.csv", "trainlog.jsonl", "timing.csv"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_EQ(slurp(dir / "trainlog.csv"), r.log.csv());
    EXPECT_GE(r.best_epoch, 1);
    const auto lm = load_model(dir / "checkpoint_last.bin");
    EXPECT_EQ(lm.epoch, 2);
    EXPECT_TRUE(same_parameters(lm.model, r.model));
}

TEST(Train, DivergenceReportsDiagnostics) {
    auto c = small_config("p-c", 12, 3);
    c.lr0 = 1e6;
    try {
        train(c, load_experiment_split(c));
        FAIL() << "expected divergence";
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
        EXPECT_NE(msg.find("pathology="), std::string::npos) << msg;
    }
}

class LossDecreases : public ::testing::TestWithParam<std::string> {};

TEST_P(LossDecreases, LastFiveBelowFirstFive) {
    auto c = small_config(GetParam(), 40, 12);
    const auto r = train(c, load_experiment_split(c));
    const auto& recs = r.log.records;
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 5; ++i) {
        first += recs[static_cast<std::size_t>(i)].train_loss;
        last += recs[recs.size() - 1 - static_cast<std::size_t>(i)].train_loss;
    }
    EXPECT_LT(last, first);
}

INSTANTIATE_TEST_SUITE_P(Presets, LossDecreases, ::testing::Values("stl", "p-mb", "p-c", "p-b", "p-b-c"),
                         [](const auto& info) {
                             auto s = info.param;
                             std::replace(s.begin(), s.end(), '-', '_');
                             return s;
                         });

// ============================================================================
// Evaluation
// ============================================================================

TEST(Evaluate, PerfectAndConstantPredictions) {
    const std::vector<TaskDef> tasks = {{kPathologyTask, 3}, {"contrast", 4}};
    InferenceResult inf;
    inf.labels = {{0, 1, 2, 0, 1, 2}, {0, 1, 2, 3, 0, 1}};
    inf.predictions = inf.labels;
    const auto perfect = evaluate_predictions(tasks, inf);
    EXPECT_EQ(*perfect.task("pathology").metrics.accuracy, 1.0);
    for (const auto& v : perfect.task("pathology").metrics.sensitivity) EXPECT_EQ(v, 1.0);
    for (const auto& v : perfect.task("pathology").metrics.specificity) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(*perfect.task("contrast").metrics.accuracy, 1.0);

    inf.predictions = {{1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0}};
    const auto constant = evaluate_predictions(tasks, inf);
    EXPECT_NEAR(*constant.task("pathology").metrics.accuracy, 1.0 / 3.0, 1e-15);
}

TEST(Evaluate, EvalStreamIsDeterministic) {
    const auto c = small_config("p-mb", 12, 1);
    const auto data = load_experiment_split(c);
    auto r = train(c, data);
    const auto a = evaluate(r.model, data.test, c.ssdt_specs(), c.seed);
    const auto b = evaluate(r.model, data.test, c.ssdt_specs(), c.seed);
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
    EXPECT_EQ(a.n, data.test.size());
}
