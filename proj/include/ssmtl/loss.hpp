#pragma once

// Multi-task objectives: a fixed weighted sum of task losses and the learned
// homoscedastic-uncertainty weighting with per-task s_t = log(sigma_t^2).

#include <span>
#include <vector>

#include "ssmtl/autodiff.hpp"
#include "ssmtl/model.hpp"

namespace ssmtl {

struct TaskWeights {
    std::vector<double> lambdas;  // task order
    double alpha = 0.0;
};

// 0.5 * sum ||w||^2 over the given weight tensors.
ad::Tensor weight_penalty(ad::Graph& g, std::span<const ad::Tensor> weights);

// sum_t lambda_t * L_t + alpha * penalty(weights)
ad::Tensor fixed_weight_loss(ad::Graph& g, std::span<const ad::Tensor> task_losses, const TaskWeights& weights,
                             std::span<const ad::Tensor> weight_tensors);

// sum_t [exp(-s_t) * L_t + s_t / 2] + alpha * penalty(weights)
ad::Tensor uncertainty_loss(ad::Graph& g, std::span<const ad::Tensor> task_losses, const UncertaintyParams& unc,
                            double alpha, std::span<const ad::Tensor> weight_tensors);

// 1/sigma_t = exp(-s_t / 2), task order.
std::vector<double> task_confidence(const UncertaintyParams& unc);
// sigma_t = exp(s_t / 2)
std::vector<double> task_sigma(const UncertaintyParams& unc);

}  // namespace ssmtl
