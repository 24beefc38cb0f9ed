#include "ssmtl/metrics.hpp"

#include <numeric>
#include <stdexcept>

#include "ssmtl/autodiff.hpp"

namespace ssmtl {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0) {
    if (classes < 0) throw ad::InputError("confusion matrix needs a non-negative class count");
}

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<std::size_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
    if (counts_.size() != static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes))
        throw ad::InputError("confusion matrix needs classes^2 counts");
}

std::size_t ConfusionMatrix::at(int truth, int pred) const {
    return counts_.at(static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_) +
                      static_cast<std::size_t>(pred));
}

void ConfusionMatrix::add(int truth, int pred) {
    if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
        throw ad::InputError("class index out of range [0," + std::to_string(classes_) + "): truth " +
                             std::to_string(truth) + ", pred " + std::to_string(pred));
    ++counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(pred)];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
    std::size_t t = 0;
    for (int c = 0; c < classes_; ++c) t += at(c, c);
    return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int classes) {
    if (preds.size() != labels.size())
        throw ad::InputError("confusion_matrix: " + std::to_string(preds.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels[i], preds[i]);
    return cm;
}

ClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
    const int C = cm.classes();
    const std::size_t total = cm.total();
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    ClassMetrics m;
    for (int c = 0; c < C; ++c) {
        std::size_t tp = cm.at(c, c), fn = 0, fp = 0;
        for (int k = 0; k < C; ++k) {
            if (k == c) continue;
            fn += cm.at(c, k);
            fp += cm.at(k, c);
        }
        const std::size_t tn = total - tp - fn - fp;
        m.sensitivity.push_back(ratio(tp, tp + fn));
        m.specificity.push_back(ratio(tn, tn + fp));
    }
    m.accuracy = ratio(cm.trace(), total);
    return m;
}

nlohmann::json to_json(const ClassMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json sens = nlohmann::json::array(), spec = nlohmann::json::array();
    for (const auto& v : m.sensitivity) sens.push_back(opt(v));
    for (const auto& v : m.specificity) spec.push_back(opt(v));
    return {{"accuracy", opt(m.accuracy)}, {"sensitivity", sens}, {"specificity", spec}};
}

}  // namespace ssmtl
