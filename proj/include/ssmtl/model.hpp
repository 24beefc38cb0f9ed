#pragma once

// Hard-parameter-sharing CNN: five conv layers and FC1/FC2 shared by every
// task, followed by one linear head per task.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssmtl/autodiff.hpp"
#include "ssmtl/rng.hpp"

namespace ssmtl {

struct ConvSpec {
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool pool_after = false;

    bool operator==(const ConvSpec&) const = default;
};

inline constexpr std::size_t kConvLayers = 5;

struct ArchConfig {
    std::string scale_name = "desk";
    int input_size = 64;
    int input_channels = 3;
    // Added to the [0,1] input before conv1.
    double input_shift = -0.5;
    std::array<ConvSpec, kConvLayers> convs{};
    int pool_window = 2;
    int pool_stride = 2;
    int fc1_dim = 256;
    int fc2_dim = 128;
    double dropout_p = 0.5;

    // 64x64 input, channels 16-32-48-48-32, pools after conv1/2/5.
    static ArchConfig desk();
    // AlexNet-sized trunk on 400x400 input.
    static ArchConfig paper();
    static ArchConfig by_name(const std::string& name);

    // Walks the conv/pool stack; throws ad::ConfigError on a non-positive size.
    std::size_t flatten_dim() const;
    void validate() const;

    bool operator==(const ArchConfig&) const = default;
};

struct TaskDef {
    std::string name;
    int num_classes = 0;

    bool operator==(const TaskDef&) const = default;
};

inline const std::string kPathologyTask = "pathology";

struct TaskHead {
    TaskDef task;
    ad::Tensor weight;  // [fc2_dim, classes]
    ad::Tensor bias;    // [classes]
};

// s_t = log(sigma_t^2) per task, in task order.
struct UncertaintyParams {
    std::vector<std::string> tasks;
    std::vector<ad::Tensor> s;
};

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

class MultiTaskModel {
public:
    MultiTaskModel() = default;
    MultiTaskModel(ArchConfig arch, std::vector<TaskDef> tasks);

    const ArchConfig& arch() const { return arch_; }
    const std::vector<TaskDef>& tasks() const { return tasks_; }
    std::size_t task_index(const std::string& name) const;

    std::vector<ad::Tensor>& conv_weights() { return conv_w_; }
    std::vector<ad::Tensor>& conv_biases() { return conv_b_; }
    ad::Tensor& fc1_weight() { return fc1_w_; }
    ad::Tensor& fc1_bias() { return fc1_b_; }
    ad::Tensor& fc2_weight() { return fc2_w_; }
    ad::Tensor& fc2_bias() { return fc2_b_; }
    std::vector<TaskHead>& heads() { return heads_; }
    const std::vector<TaskHead>& heads() const { return heads_; }
    UncertaintyParams& uncertainty() { return unc_; }
    const UncertaintyParams& uncertainty() const { return unc_; }

    // Network parameters theta (shared trunk then heads); excludes s_t.
    std::vector<ad::Tensor> parameters() const;
    // Shared trunk only.
    std::vector<ad::Tensor> shared_parameters() const;
    // Weight matrices and kernels (the regularised subset of theta).
    std::vector<ad::Tensor> weight_tensors() const;
    // theta then every s_t, with stable names; the checkpoint order.
    std::vector<NamedTensor> named_tensors() const;

    // Number of scalars in theta.
    std::size_t parameter_count() const;

private:
    ArchConfig arch_;
    std::vector<TaskDef> tasks_;
    std::vector<ad::Tensor> conv_w_, conv_b_;
    ad::Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
    std::vector<TaskHead> heads_;
    UncertaintyParams unc_;
};

// Requires a non-empty task list whose first entry is the pathology task.
MultiTaskModel build_model(const ArchConfig& arch, const std::vector<TaskDef>& tasks);

// Weights ~ N(0, sqrt(2/fan_in)), biases 0, s_t = 0.
void init_weights(MultiTaskModel& model, std::uint64_t seed);

struct ForwardResult {
    std::vector<ad::Tensor> logits;  // task order
    ad::Tensor features;             // FC2 post-ReLU, pre-dropout
};

ForwardResult forward(MultiTaskModel& model, ad::Graph& g, const ad::Tensor& images, bool train, Rng& rng);

}  // namespace ssmtl
