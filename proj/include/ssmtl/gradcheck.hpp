#pragma once

// Finite-difference checks for every autodiff op and for the full
// multi-task objective of a small model.

#include <string>
#include <vector>

#include "ssmtl/autodiff.hpp"
#include "ssmtl/config.hpp"

namespace ssmtl {

struct NamedGradCheck {
    std::string name;
    ad::GradCheckResult result;
};

std::vector<NamedGradCheck> op_grad_checks(std::uint64_t seed = 0);

struct ModelGradCheckOptions {
    std::size_t batch = 2;
    std::size_t coords_per_param = 12;  // 0 = every coordinate
    std::uint64_t seed = 0;
    bool train_mode = true;             // dropout replayed from a fixed stream
    double epsilon = 1e-5;
};

// Checks d(total loss)/d(theta, s) for the config's task set and loss mode.
// Uncertainty parameters and biases are moved off zero: s = 0 makes the s
// gradient trivial and zero biases leave pre-activations exactly on a kink.
NamedGradCheck model_grad_check(const ExperimentConfig& config, const ModelGradCheckOptions& opts = {});

}  // namespace ssmtl
