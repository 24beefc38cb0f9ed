#include "ssmtl/loss.hpp"

#include <cmath>

namespace ssmtl {

namespace {

void check_losses(std::span<const ad::Tensor> losses, std::size_t expected, const char* who) {
    if (losses.size() != expected)
        throw ad::UsageError(std::string(who) + ": got " + std::to_string(losses.size()) + " task losses for " +
                             std::to_string(expected) + " tasks");
    for (std::size_t t = 0; t < losses.size(); ++t) {
        if (losses[t].numel() != 1) throw ad::UsageError(std::string(who) + ": task losses must be scalars");
        if (!std::isfinite(losses[t].item()))
            throw ad::NonFiniteError(std::string(who) + ": task " + std::to_string(t) + " loss is not finite");
    }
}

ad::Tensor add_penalty(ad::Graph& g, ad::Tensor total, double alpha, std::span<const ad::Tensor> weights) {
    if (!std::isfinite(alpha) || alpha < 0.0) throw ad::ConfigError("alpha must be finite and >= 0");
    if (alpha == 0.0 || weights.empty()) return total;
    return ad::add(g, total, ad::scale(g, weight_penalty(g, weights), alpha));
}

}  // namespace

ad::Tensor weight_penalty(ad::Graph& g, std::span<const ad::Tensor> weights) {
    ad::Tensor acc;
    for (const auto& w : weights) {
        auto sq = ad::sum_squares(g, w);
        acc = acc.defined() ? ad::add(g, acc, sq) : sq;
    }
    if (!acc.defined()) return ad::Tensor::scalar(0.0);
    return ad::scale(g, acc, 0.5);
}

ad::Tensor fixed_weight_loss(ad::Graph& g, std::span<const ad::Tensor> task_losses, const TaskWeights& weights,
                             std::span<const ad::Tensor> weight_tensors) {
    check_losses(task_losses, weights.lambdas.size(), "fixed_weight_loss");
    ad::Tensor total;
    for (std::size_t t = 0; t < task_losses.size(); ++t) {
        const double lambda = weights.lambdas[t];
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ad::ConfigError("task weights must be finite and >= 0");
        auto term = ad::scale(g, task_losses[t], lambda);
        total = total.defined() ? ad::add(g, total, term) : term;
    }
    return add_penalty(g, total, weights.alpha, weight_tensors);
}

ad::Tensor uncertainty_loss(ad::Graph& g, std::span<const ad::Tensor> task_losses, const UncertaintyParams& unc,
                            double alpha, std::span<const ad::Tensor> weight_tensors) {
    check_losses(task_losses, unc.s.size(), "uncertainty_loss");
    ad::Tensor total;
    for (std::size_t t = 0; t < task_losses.size(); ++t) {
        const auto& s = unc.s[t];
        if (!std::isfinite(s.item())) throw ad::NonFiniteError("uncertainty_loss: s_" + unc.tasks[t] + " is not finite");
        auto precision = ad::exp(g, ad::scale(g, s, -1.0));
        auto term = ad::add(g, ad::mul(g, precision, task_losses[t]), ad::scale(g, s, 0.5));
        total = total.defined() ? ad::add(g, total, term) : term;
    }
    return add_penalty(g, total, alpha, weight_tensors);
}

std::vector<double> task_confidence(const UncertaintyParams& unc) {
    std::vector<double> out;
    for (const auto& s : unc.s) out.push_back(std::exp(-s.item() / 2.0));
    return out;
}

std::vector<double> task_sigma(const UncertaintyParams& unc) {
    std::vector<double> out;
    for (const auto& s : unc.s) out.push_back(std::exp(s.item() / 2.0));
    return out;
}

}  // namespace ssmtl
