#include <gtest/gtest.h>

#include "ssmtl/experiment.hpp"
#include "ssmtl/metrics.hpp"

using namespace ssmtl;

namespace {

const ConfusionMatrix kHand(3, {8, 1, 1, 2, 6, 2, 0, 2, 8});

}  // namespace

// ============================================================================
// Confusion matrix
// ============================================================================

TEST(ConfusionMatrix, DiagonalWhenPerfect) {
    const std::vector<int> y = {0, 1, 2, 2, 1};
    const auto cm = confusion_matrix(y, y, 3);
    EXPECT_EQ(cm.at(2, 2), 2u);
    EXPECT_EQ(cm.trace(), 5u);
    EXPECT_EQ(cm.total(), 5u);
}

TEST(ConfusionMatrix, RowsAreTruth) {
    const std::vector<int> preds = {0, 1, 2}, labels = {0, 0, 0};
    const auto cm = confusion_matrix(preds, labels, 3);
    EXPECT_EQ(cm.at(0, 0), 1u);
    EXPECT_EQ(cm.at(0, 1), 1u);
    EXPECT_EQ(cm.at(0, 2), 1u);
    EXPECT_EQ(cm.at(1, 0), 0u);
}

TEST(ConfusionMatrix, EmptyIsZero) {
    const auto cm = confusion_matrix({}, {}, 3);
    EXPECT_EQ(cm, ConfusionMatrix(3));
    EXPECT_EQ(cm.total(), 0u);
}

TEST(ConfusionMatrix, Errors) {
    const std::vector<int> a = {0, 3}, b = {0, 1};
    EXPECT_THROW(confusion_matrix(a, b, 3), ad::InputError);
    const std::vector<int> c = {0};
    EXPECT_THROW(confusion_matrix(c, b, 3), ad::InputError);
    const std::vector<int> neg = {-1, 0};
    EXPECT_THROW(confusion_matrix(b, neg, 3), ad::InputError);
}

// ============================================================================
// Per-class metrics
// ============================================================================

TEST(PerClassMetrics, HandConfusionMatrix) {
    const auto m = per_class_metrics(kHand);
    EXPECT_NEAR(*m.sensitivity[0], 0.8, 1e-9);
    EXPECT_NEAR(*m.sensitivity[1], 0.6, 1e-9);
    EXPECT_NEAR(*m.sensitivity[2], 0.8, 1e-9);
    EXPECT_NEAR(*m.specificity[0], 0.9, 1e-9);
    EXPECT_NEAR(*m.specificity[1], 17.0 / 20.0, 1e-9);
    EXPECT_NEAR(*m.specificity[2], 17.0 / 20.0, 1e-9);
    EXPECT_NEAR(*m.accuracy, 0.7333333333333333, 1e-9);
}

TEST(PerClassMetrics, IdentityAllOnes) {
    const auto m = per_class_metrics(ConfusionMatrix(3, {5, 0, 0, 0, 4, 0, 0, 0, 7}));
    for (const auto& v : m.sensitivity) EXPECT_EQ(v, 1.0);
    for (const auto& v : m.specificity) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(m.accuracy, 1.0);
}

TEST(PerClassMetrics, AbsentClassIsUndefinedNotZero) {
    // No true class-1 samples: sensitivity_1 = 0/0.
    const auto m = per_class_metrics(ConfusionMatrix(3, {5, 1, 0, 0, 0, 0, 1, 0, 3}));
    EXPECT_FALSE(m.sensitivity[1].has_value());
    EXPECT_TRUE(m.specificity[1].has_value());
    EXPECT_FALSE(per_class_metrics(ConfusionMatrix(3)).accuracy.has_value());

    const auto j = to_json(m);
    EXPECT_TRUE(j["sensitivity"][1].is_null());
    EXPECT_DOUBLE_EQ(j["sensitivity"][0].get<double>(), 5.0 / 6.0);
}

class MetricsProperty : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MetricsProperty, AccuracyAndTraceAgreeWithDirectCount) {
    Rng rng(GetParam());
    const int C = 2 + static_cast<int>(uniform_index(rng, 4));
    const std::size_t n = 20 + uniform_index(rng, 200);
    std::vector<int> p(n), y(n);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(C)));
        p[i] = bernoulli(rng, 0.6) ? y[i] : static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(C)));
        correct += p[i] == y[i];
    }
    const auto cm = confusion_matrix(p, y, C);
    EXPECT_EQ(cm.total(), n);
    const auto m = per_class_metrics(cm);
    std::size_t tp = 0;
    for (int c = 0; c < C; ++c) tp += cm.at(c, c);
    EXPECT_EQ(tp, cm.trace());
    EXPECT_EQ(tp, correct);
    EXPECT_DOUBLE_EQ(*m.accuracy, static_cast<double>(correct) / static_cast<double>(n));
}

INSTANTIATE_TEST_SUITE_P(Seeds, MetricsProperty, ::testing::Range<std::uint64_t>(0, 10));

// ============================================================================
// Metrics JSON
// ============================================================================

TEST(MetricsJson, MirrorsTableColumns) {
    auto c = ExperimentConfig::preset("p-b-c");
    c.synth.per_class = 12;
    c.epochs = 1;
    c.batch_size = 16;
    const auto r = run_experiment(c);
    const auto j = metrics_json(c, r);

    EXPECT_EQ(j["experiment"], "p-b-c");
    EXPECT_EQ(j["epoch"], 1);
    EXPECT_EQ(j["class_names"]["pathology"], (nlohmann::json{"inflammatory", "normal", "vascular"}));
    EXPECT_EQ(j["class_names"]["contrast"], (nlohmann::json{0.8, 0.9, 1.0, 1.1}));
    for (const char* split : {"train", "val", "test"}) {
        const auto& s = j["splits"][split];
        ASSERT_TRUE(s.is_object()) << split;
        EXPECT_TRUE(s["n"].is_number_unsigned());
        ASSERT_EQ(s["tasks"].size(), 3u);
        for (const char* task : {"pathology", "brightness", "contrast"}) {
            const auto& t = s["tasks"][task];
            std::vector<std::string> keys;
            for (const auto& [k, v] : t.items()) keys.push_back(k);
            EXPECT_EQ(keys, (std::vector<std::string>{"accuracy", "sensitivity", "specificity"}));
            EXPECT_EQ(t["sensitivity"].size(), std::string(task) == "pathology" ? 3u : 4u);
            EXPECT_EQ(t["specificity"].size(), t["sensitivity"].size());
        }
    }
    EXPECT_EQ(j["splits"]["test"]["n"], 3u);  // floor(0.1 * 12) per class
}
