#pragma once

// Minimal tape-based reverse-mode automatic differentiation.
//
// A Tensor is a reference-counted handle: copying a Tensor shares its storage,
// which is how model parameters appear on many graphs without being copied.
// A Graph records every differentiable op in insertion order; backward()
// replays the tape in exact reverse order, accumulating (+=) into grads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmtl/rng.hpp"

namespace ssmtl::ad {

using Shape = std::vector<std::size_t>;

// Fixed 64-byte alignment: vectorised reductions peel by address, so an
// unaligned buffer could change the summation order from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Allocates a zero gradient on first access.
    std::span<double> grad();
    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const { return impl_->grad; }
    // Lazily allocated gradient buffer, reachable through any handle copy.
    std::span<double> grad_accum() const;
    void zero_grad();
    void drop_grad() { impl_->grad.clear(); }

    // Deep copy of data; the copy has no gradient.
    Tensor clone() const;
    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

    // Throws NonFiniteError naming `what` if any entry is NaN/Inf.
    void check_finite(const std::string& what) const;

private:
    struct Impl {
        Shape shape;
        Buffer data;
        Buffer grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

class Graph {
public:
    // Receives the output gradient and accumulates into input gradients.
    using BackwardFn = std::function<void(std::span<const double> out_grad)>;

    struct Node {
        std::string op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };

    // A non-recording graph is used for inference; ops still run.
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    // True when `inputs` warrant a tape entry.
    bool wants(std::initializer_list<const Tensor*> inputs) const;

    void record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse insertion order.
    void backward(Tensor& loss);

    // Order in which the last backward() visited nodes (node indices).
    const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

    // When enabled, relu and maxpool2d fold their branch decisions (signs,
    // argmax winners) into a hash, so two evaluations can be compared for a
    // crossed kink.
    void trace_decisions(bool on) { tracing_ = on; }
    bool tracing_decisions() const { return tracing_; }
    void note_decision(std::uint64_t v);
    std::uint64_t decision_signature() const { return signature_; }

private:
    bool recording_;
    bool tracing_ = false;
    std::uint64_t signature_ = 0;
    std::vector<Node> nodes_;
    std::vector<std::size_t> visit_order_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// x[batch,in] * W[in,out] + b[out]
Tensor linear(Graph& g, const Tensor& x, const Tensor& W, const Tensor& b);

// Cross-correlation (no kernel flip) with zero padding.
// x[batch,Cin,H,W], K[Cout,Cin,kh,kw], b[Cout].
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& K, const Tensor& b, int stride, int pad);

// Output spatial size of conv2d/maxpool along one axis; throws ConfigError if < 1.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, int stride, int pad);

// Ties route the gradient to the first maximal element in row-major order.
Tensor maxpool2d(Graph& g, const Tensor& x, int window, int stride);

Tensor relu(Graph& g, const Tensor& x);

// Inverted dropout: survivors scaled by 1/(1-p); identity when !train.
Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng, bool train);

// [batch, ...] -> [batch, prod(...)]
Tensor flatten(Graph& g, const Tensor& x);

// Mean over batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double c);
Tensor add_scalar(Graph& g, const Tensor& x, double c);
Tensor exp(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);
Tensor sum_squares(Graph& g, const Tensor& x);

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_coord = 0;
    // Coordinates whose step had to shrink to avoid a kink, and those left
    // unchecked because every step size crossed one.
    std::size_t coords_step_reduced = 0;
    std::size_t coords_on_kink = 0;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    // 0 checks every coordinate; otherwise a seeded random subset per param.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 0;
};

// `fn` builds the scalar loss on the graph it is given. It must be a pure
// function of the parameter values (replay any RNG from a fixed seed).
GradCheckResult grad_check(const std::function<Tensor(Graph&)>& fn, std::span<Tensor> params,
                           const GradCheckOptions& opts = {});

double relative_error(double analytic, double numeric);

}  // namespace ssmtl::ad
