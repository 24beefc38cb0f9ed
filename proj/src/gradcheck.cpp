#include "ssmtl/gradcheck.hpp"

#include <cmath>
#include <numeric>

#include "ssmtl/dataset.hpp"
#include "ssmtl/loss.hpp"
#include "ssmtl/model.hpp"

namespace ssmtl {

namespace {

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double sd = 1.0) {
    ad::Tensor t(std::move(shape), true);
    for (auto& v : t.data()) v = normal(rng, 0.0, sd);
    return t;
}

// Keeps values at least `gap` away from zero so ReLU kinks stay outside the
// finite-difference stencil.
void push_off_zero(ad::Tensor& t, double gap) {
    for (auto& v : t.data())
        if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
}

NamedGradCheck check(std::string name, const std::function<ad::Tensor(ad::Graph&)>& fn,
                     std::vector<ad::Tensor> params, std::uint64_t seed) {
    return {std::move(name), ad::grad_check(fn, params, {1e-5, 0, seed})};
}

}  // namespace

std::vector<NamedGradCheck> op_grad_checks(std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x6c}));
    std::vector<NamedGradCheck> out;
    // Each loss is a random projection of the op output, so every output
    // element carries its own weight.
    auto project = [](ad::Graph& g, const ad::Tensor& y, const ad::Tensor& w) { return ad::sum(g, ad::mul(g, y, w)); };

    {
        auto x = random_tensor({3, 4}, rng), W = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
        auto w = random_tensor({3, 5}, rng);
        w.set_requires_grad(false);
        out.push_back(check("linear", [&](ad::Graph& g) { return project(g, ad::linear(g, x, W, b), w); },
                            {x, W, b}, seed));
    }
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 2}}) {
        auto x = random_tensor({2, 2, 6, 6}, rng), K = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
        const auto o = ad::conv_out_size(6, 3, stride, pad);
        auto w = random_tensor({2, 3, o, o}, rng);
        w.set_requires_grad(false);
        out.push_back(check("conv2d(stride=" + std::to_string(stride) + ",pad=" + std::to_string(pad) + ")",
                            [&, stride = stride, pad = pad](ad::Graph& g) {
                                return project(g, ad::conv2d(g, x, K, b, stride, pad), w);
                            },
                            {x, K, b}, seed));
    }
    for (auto [window, stride] : {std::pair{2, 2}, std::pair{3, 2}}) {
        // Distinct, well separated values keep the argmax stable under +-eps.
        ad::Tensor x({2, 2, 7, 7}, true);
        std::vector<std::size_t> perm(x.numel());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < perm.size(); ++i) x.data()[i] = 0.01 * static_cast<double>(perm[i]);
        const auto o = ad::conv_out_size(7, static_cast<std::size_t>(window), stride, 0);
        auto w = random_tensor({2, 2, o, o}, rng);
        w.set_requires_grad(false);
        out.push_back(check("maxpool2d(window=" + std::to_string(window) + ")",
                            [&, window = window, stride = stride](ad::Graph& g) {
                                return project(g, ad::maxpool2d(g, x, window, stride), w);
                            },
                            {x}, seed));
    }
    {
        auto x = random_tensor({4, 6}, rng), w = random_tensor({4, 6}, rng);
        push_off_zero(x, 1e-2);
        w.set_requires_grad(false);
        out.push_back(check("relu", [&](ad::Graph& g) { return project(g, ad::relu(g, x), w); }, {x}, seed));
    }
    {
        auto x = random_tensor({4, 6}, rng), w = random_tensor({4, 6}, rng);
        w.set_requires_grad(false);
        out.push_back(check("dropout",
                            [&](ad::Graph& g) {
                                Rng mask(derive_seed({seed, 0xd0}));
                                return project(g, ad::dropout(g, x, 0.5, mask, true), w);
                            },
                            {x}, seed));
    }
    {
        auto x = random_tensor({2, 3, 2, 2}, rng), w = random_tensor({2, 12}, rng);
        w.set_requires_grad(false);
        out.push_back(check("flatten", [&](ad::Graph& g) { return project(g, ad::flatten(g, x), w); }, {x}, seed));
    }
    {
        auto logits = random_tensor({5, 4}, rng, 2.0);
        const std::vector<int> labels = {0, 3, 1, 1, 2};
        out.push_back(check("softmax_cross_entropy",
                            [&](ad::Graph& g) { return ad::softmax_cross_entropy(g, logits, labels); }, {logits},
                            seed));
    }
    {
        auto a = random_tensor({3, 2}, rng), b = random_tensor({3, 2}, rng), w = random_tensor({3, 2}, rng);
        w.set_requires_grad(false);
        out.push_back(check("add", [&](ad::Graph& g) { return project(g, ad::add(g, a, b), w); }, {a, b}, seed));
        out.push_back(check("mul", [&](ad::Graph& g) { return project(g, ad::mul(g, a, b), w); }, {a, b}, seed));
        out.push_back(check("scale", [&](ad::Graph& g) { return project(g, ad::scale(g, a, -1.7), w); }, {a}, seed));
        out.push_back(
            check("add_scalar", [&](ad::Graph& g) { return project(g, ad::add_scalar(g, a, 0.3), w); }, {a}, seed));
        out.push_back(check("exp", [&](ad::Graph& g) { return project(g, ad::exp(g, a), w); }, {a}, seed));
        out.push_back(check("sum_squares", [&](ad::Graph& g) { return ad::sum_squares(g, a); }, {a}, seed));
    }
    {
        // Shared input used twice: accumulation across two consumers.
        auto a = random_tensor({4}, rng);
        out.push_back(check("fan-out accumulation",
                            [&](ad::Graph& g) { return ad::sum(g, ad::mul(g, ad::exp(g, a), a)); }, {a}, seed));
    }
    return out;
}

NamedGradCheck model_grad_check(const ExperimentConfig& config, const ModelGradCheckOptions& opts) {
    auto c = config;
    c.synth.per_class = std::max(4, static_cast<int>(opts.batch));
    c.synth.image_size = c.arch_config().input_size;
    const auto ds = generate_synthetic(c.synth, opts.seed);
    const auto specs = c.ssdt_specs();
    auto model = build_model(c.arch_config(), c.tasks());
    init_weights(model, opts.seed);
    Rng srng(derive_seed({opts.seed, 0x5}));
    for (auto& s : model.uncertainty().s) s.data()[0] = uniform(srng, -0.5, 0.5);
    // Zero biases put whole patches exactly on a ReLU kink.
    for (const auto& nt : model.named_tensors())
        if (nt.name.size() > 5 && nt.name.compare(nt.name.size() - 5, 5, ".bias") == 0) {
            auto t = nt.tensor;
            for (double& v : t.data()) v = uniform(srng, -0.05, 0.05);
        }

    BatchIterator it(ds, opts.batch, 0, opts.seed, specs, c.arch_config().input_size, true);
    Batch b;
    it.next(b);

    const bool learn_s = c.loss_mode == LossMode::Uncertainty && !c.freeze_uncertainty;
    std::vector<ad::Tensor> params;
    for (const auto& nt : model.named_tensors())
        if (learn_s || nt.name.rfind("log_var.", 0) != 0) params.push_back(nt.tensor);
    const auto weights = model.weight_tensors();
    const TaskWeights fixed{c.resolved_lambdas(), c.alpha};

    auto fn = [&](ad::Graph& g) {
        Rng dropout_rng(derive_seed({opts.seed, 0xd509}));
        auto fr = forward(model, g, b.images, opts.train_mode, dropout_rng);
        std::vector<ad::Tensor> losses;
        for (std::size_t t = 0; t < fr.logits.size(); ++t)
            losses.push_back(
                ad::softmax_cross_entropy(g, fr.logits[t], t == 0 ? b.spt_labels : b.ssdt_labels[t - 1]));
        return c.loss_mode == LossMode::Fixed ? fixed_weight_loss(g, losses, fixed, weights)
                                              : uncertainty_loss(g, losses, model.uncertainty(), c.alpha, weights);
    };
    return {"model(" + c.name + ", " + std::string(to_string(c.loss_mode)) + ")",
            ad::grad_check(fn, params, {opts.epsilon, opts.coords_per_param, opts.seed})};
}

}  // namespace ssmtl
