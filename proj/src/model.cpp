#include "ssmtl/model.hpp"

#include <cmath>

namespace ssmtl {

ArchConfig ArchConfig::desk() {
    ArchConfig a;
    a.scale_name = "desk";
    a.input_size = 64;
    a.convs = {{{16, 5, 2, 2, true}, {32, 3, 1, 1, true}, {48, 3, 1, 1, false}, {48, 3, 1, 1, false},
                {32, 3, 1, 1, true}}};
    a.pool_window = 2;
    a.pool_stride = 2;
    a.fc1_dim = 256;
    a.fc2_dim = 128;
    a.dropout_p = 0.5;
    return a;
}

ArchConfig ArchConfig::paper() {
    ArchConfig a;
    a.scale_name = "paper";
    a.input_size = 400;
    a.convs = {{{96, 11, 4, 2, true}, {256, 5, 1, 2, true}, {384, 3, 1, 1, false}, {384, 3, 1, 1, false},
                {256, 3, 1, 1, true}}};
    a.pool_window = 3;
    a.pool_stride = 2;
    a.fc1_dim = 4096;
    a.fc2_dim = 4096;
    a.dropout_p = 0.5;
    return a;
}

ArchConfig ArchConfig::by_name(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ad::ConfigError("unknown architecture '" + name + "' (expected desk|paper)");
}

std::size_t ArchConfig::flatten_dim() const {
    std::size_t side = static_cast<std::size_t>(input_size);
    for (const auto& c : convs) {
        side = ad::conv_out_size(side, static_cast<std::size_t>(c.kernel), c.stride, c.pad);
        if (c.pool_after) side = ad::conv_out_size(side, static_cast<std::size_t>(pool_window), pool_stride, 0);
    }
    return side * side * static_cast<std::size_t>(convs.back().out_channels);
}

void ArchConfig::validate() const {
    if (input_size < 1 || input_channels < 1) throw ad::ConfigError("input size/channels must be positive");
    for (const auto& c : convs)
        if (c.out_channels < 1 || c.kernel < 1) throw ad::ConfigError("conv channels/kernels must be positive");
    if (fc1_dim < 1 || fc2_dim < 1) throw ad::ConfigError("fc dims must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ad::ConfigError("dropout_p must be in [0,1)");
    (void)flatten_dim();
}

MultiTaskModel::MultiTaskModel(ArchConfig arch, std::vector<TaskDef> tasks)
    : arch_(std::move(arch)), tasks_(std::move(tasks)) {
    arch_.validate();
    if (tasks_.empty()) throw ad::ConfigError("model needs at least one task");
    if (tasks_.front().name != kPathologyTask)
        throw ad::ConfigError("the pathology task must be present and listed first");
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i].num_classes < 2) throw ad::ConfigError("task '" + tasks_[i].name + "' needs >= 2 classes");
        for (std::size_t j = 0; j < i; ++j)
            if (tasks_[j].name == tasks_[i].name) throw ad::ConfigError("duplicate task '" + tasks_[i].name + "'");
    }

    std::size_t cin = static_cast<std::size_t>(arch_.input_channels);
    for (const auto& c : arch_.convs) {
        const auto co = static_cast<std::size_t>(c.out_channels), k = static_cast<std::size_t>(c.kernel);
        conv_w_.emplace_back(ad::Shape{co, cin, k, k}, true);
        conv_b_.emplace_back(ad::Shape{co}, true);
        cin = co;
    }
    const auto flat = arch_.flatten_dim();
    const auto f1 = static_cast<std::size_t>(arch_.fc1_dim), f2 = static_cast<std::size_t>(arch_.fc2_dim);
    fc1_w_ = ad::Tensor({flat, f1}, true);
    fc1_b_ = ad::Tensor({f1}, true);
    fc2_w_ = ad::Tensor({f1, f2}, true);
    fc2_b_ = ad::Tensor({f2}, true);
    for (const auto& t : tasks_) {
        const auto nc = static_cast<std::size_t>(t.num_classes);
        heads_.push_back(TaskHead{t, ad::Tensor({f2, nc}, true), ad::Tensor({nc}, true)});
        unc_.tasks.push_back(t.name);
        unc_.s.push_back(ad::Tensor::scalar(0.0, true));
    }
}

std::size_t MultiTaskModel::task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks_.size(); ++i)
        if (tasks_[i].name == name) return i;
    throw ad::UsageError("model has no task '" + name + "'");
}

std::vector<ad::Tensor> MultiTaskModel::shared_parameters() const {
    std::vector<ad::Tensor> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back(conv_w_[i]);
        out.push_back(conv_b_[i]);
    }
    out.insert(out.end(), {fc1_w_, fc1_b_, fc2_w_, fc2_b_});
    return out;
}

std::vector<ad::Tensor> MultiTaskModel::parameters() const {
    auto out = shared_parameters();
    for (const auto& h : heads_) {
        out.push_back(h.weight);
        out.push_back(h.bias);
    }
    return out;
}

std::vector<ad::Tensor> MultiTaskModel::weight_tensors() const {
    std::vector<ad::Tensor> out(conv_w_.begin(), conv_w_.end());
    out.push_back(fc1_w_);
    out.push_back(fc2_w_);
    for (const auto& h : heads_) out.push_back(h.weight);
    return out;
}

std::vector<NamedTensor> MultiTaskModel::named_tensors() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back({"conv" + std::to_string(i + 1) + ".weight", conv_w_[i]});
        out.push_back({"conv" + std::to_string(i + 1) + ".bias", conv_b_[i]});
    }
    out.push_back({"fc1.weight", fc1_w_});
    out.push_back({"fc1.bias", fc1_b_});
    out.push_back({"fc2.weight", fc2_w_});
    out.push_back({"fc2.bias", fc2_b_});
    for (const auto& h : heads_) {
        out.push_back({"head." + h.task.name + ".weight", h.weight});
        out.push_back({"head." + h.task.name + ".bias", h.bias});
    }
    for (std::size_t i = 0; i < unc_.s.size(); ++i) out.push_back({"log_var." + unc_.tasks[i], unc_.s[i]});
    return out;
}

std::size_t MultiTaskModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

MultiTaskModel build_model(const ArchConfig& arch, const std::vector<TaskDef>& tasks) {
    return MultiTaskModel(arch, tasks);
}

void init_weights(MultiTaskModel& model, std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x1417}));
    auto fill_he = [&rng](ad::Tensor& w, std::size_t fan_in) {
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& v : w.data()) v = normal(rng, 0.0, sd);
    };
    auto zero = [](ad::Tensor& t) {
        for (auto& v : t.data()) v = 0.0;
    };
    for (std::size_t i = 0; i < model.conv_weights().size(); ++i) {
        auto& w = model.conv_weights()[i];
        fill_he(w, w.dim(1) * w.dim(2) * w.dim(3));
        zero(model.conv_biases()[i]);
    }
    fill_he(model.fc1_weight(), model.fc1_weight().dim(0));
    zero(model.fc1_bias());
    fill_he(model.fc2_weight(), model.fc2_weight().dim(0));
    zero(model.fc2_bias());
    for (auto& h : model.heads()) {
        fill_he(h.weight, h.weight.dim(0));
        zero(h.bias);
    }
    for (auto& s : model.uncertainty().s) zero(s);
}

ForwardResult forward(MultiTaskModel& model, ad::Graph& g, const ad::Tensor& images, bool train, Rng& rng) {
    const auto& arch = model.arch();
    const auto S = static_cast<std::size_t>(arch.input_size);
    if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(arch.input_channels) ||
        images.dim(2) != S || images.dim(3) != S) {
        throw ad::InputError("forward: expected images [batch," + std::to_string(arch.input_channels) + "," +
                             std::to_string(S) + "," + std::to_string(S) + "], got " +
                             ad::shape_str(images.shape()));
    }
    ad::Tensor h = ad::add_scalar(g, images, arch.input_shift);
    for (std::size_t i = 0; i < kConvLayers; ++i) {
        const auto& c = arch.convs[i];
        h = ad::relu(g, ad::conv2d(g, h, model.conv_weights()[i], model.conv_biases()[i], c.stride, c.pad));
        if (c.pool_after) h = ad::maxpool2d(g, h, arch.pool_window, arch.pool_stride);
    }
    h = ad::flatten(g, h);
    h = ad::relu(g, ad::linear(g, h, model.fc1_weight(), model.fc1_bias()));
    h = ad::dropout(g, h, arch.dropout_p, rng, train);
    ad::Tensor features = ad::relu(g, ad::linear(g, h, model.fc2_weight(), model.fc2_bias()));
    ad::Tensor shared = ad::dropout(g, features, arch.dropout_p, rng, train);

    ForwardResult out;
    out.features = features;
    for (auto& head : model.heads()) out.logits.push_back(ad::linear(g, shared, head.weight, head.bias));
    return out;
}

}  // namespace ssmtl
