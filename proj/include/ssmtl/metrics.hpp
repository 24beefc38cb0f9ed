#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssmtl {

using Matrix = std::vector<std::vector<double>>;

// counts[true][pred]
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes = 0);
    ConfusionMatrix(int classes, std::vector<std::size_t> row_major_counts);

    int classes() const { return classes_; }
    std::size_t at(int truth, int pred) const;
    void add(int truth, int pred);
    std::size_t total() const;
    std::size_t trace() const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    int classes_;
    std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int classes);

// One-vs-rest rates; nullopt marks a 0/0 ("undefined") value.
struct ClassMetrics {
    std::vector<std::optional<double>> sensitivity;
    std::vector<std::optional<double>> specificity;
    std::optional<double> accuracy;
};

ClassMetrics per_class_metrics(const ConfusionMatrix& cm);

struct TaskMetrics {
    std::string task;
    ConfusionMatrix confusion;
    ClassMetrics metrics;
};

// {"accuracy": x, "sensitivity": [...], "specificity": [...]}, undefined -> null.
nlohmann::json to_json(const ClassMetrics& m);

}  // namespace ssmtl
