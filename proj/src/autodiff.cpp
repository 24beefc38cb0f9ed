#include "ssmtl/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace ssmtl::ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using MapCV = Eigen::Map<const Eigen::VectorXd>;

MapCM as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
    return MapCM(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapM as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
    return MapM(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
    if (!t.defined()) throw UsageError(std::string(op) + ": " + name + " is undefined");
    if (t.rank() != rank) {
        std::ostringstream os;
        os << op << ": " << name << " must have rank " << rank << ", got shape "
           << shape_str(t.shape());
        throw ShapeError(os.str());
    }
}

Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
    bool rg = false;
    for (const auto* t : inputs) rg = rg || t->requires_grad();
    return Tensor(std::move(shape), rg);
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ============================================================================
// Tensor
// ============================================================================

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    impl_->data.assign(shape_numel(shape), 0.0);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(data.begin(), data.end());
    impl_->requires_grad = requires_grad;
    check_finite("tensor construction");
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

std::span<double> Tensor::grad() { return grad_accum(); }

std::span<double> Tensor::grad_accum() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

void Tensor::check_finite(const std::string& what) const {
    for (std::size_t i = 0; i < impl_->data.size(); ++i) {
        if (!std::isfinite(impl_->data[i])) {
            throw NonFiniteError(what + ": non-finite value " + std::to_string(impl_->data[i]) +
                                 " at flat index " + std::to_string(i) + " of shape " +
                                 shape_str(impl_->shape));
        }
    }
}

// ============================================================================
// Graph
// ============================================================================

bool Graph::wants(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
}

void Graph::note_decision(std::uint64_t v) {
    std::uint64_t z = signature_ ^ (v + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    signature_ = z ^ (z >> 31);
}

void Graph::backward(Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    visit_order_.clear();
    if (!loss.requires_grad()) return;
    loss.grad_accum()[0] += 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        visit_order_.push_back(i);
        auto& n = nodes_[i];
        if (!n.output.has_grad()) continue;
        n.backward(std::as_const(n.output).grad_accum());
    }
}

// ============================================================================
// Ops
// ============================================================================

Tensor linear(Graph& g, const Tensor& x, const Tensor& W, const Tensor& b) {
    require_rank(x, 2, "linear", "x");
    require_rank(W, 2, "linear", "W");
    require_rank(b, 1, "linear", "b");
    const std::size_t batch = x.dim(0), in = x.dim(1), out = W.dim(1);
    if (W.dim(0) != in || b.dim(0) != out) {
        throw ShapeError("linear: dimension mismatch, x " + shape_str(x.shape()) + " W " +
                         shape_str(W.shape()) + " b " + shape_str(b.shape()) +
                         " (need x[batch,in], W[in,out], b[out])");
    }
    Tensor y = make_output({batch, out}, {&x, &W, &b});
    auto Y = as_mat(y.data(), batch, out);
    Y.noalias() = as_mat(x.data(), batch, in) * as_mat(W.data(), in, out);
    Y.rowwise() += MapCV(b.data().data(), static_cast<Eigen::Index>(out)).transpose();
    y.check_finite("linear");

    if (g.wants({&x, &W, &b})) {
        g.record("linear", {x, W, b}, y,
                 [x, W, b, batch, in, out](std::span<const double> gy) mutable {
                     auto dY = as_mat(gy, batch, out);
                     if (x.requires_grad())
                         as_mat(x.grad_accum(), batch, in).noalias() +=
                             dY * as_mat(std::as_const(W).data(), in, out).transpose();
                     if (W.requires_grad())
                         as_mat(W.grad_accum(), in, out).noalias() +=
                             as_mat(std::as_const(x).data(), batch, in).transpose() * dY;
                     if (b.requires_grad())
                         MapV(b.grad_accum().data(), static_cast<Eigen::Index>(out)) +=
                             dY.colwise().sum().transpose();
                 });
    }
    return y;
}

std::size_t conv_out_size(std::size_t in, std::size_t kernel, int stride, int pad) {
    if (stride < 1) throw ConfigError("stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw ConfigError("padding must be >= 0, got " + std::to_string(pad));
    const auto padded = static_cast<long long>(in) + 2LL * pad;
    const auto k = static_cast<long long>(kernel);
    if (k > padded) {
        throw ConfigError("kernel/window " + std::to_string(kernel) + " exceeds padded input " +
                          std::to_string(padded));
    }
    return static_cast<std::size_t>((padded - k) / stride + 1);
}

namespace {

struct ConvGeom {
    std::size_t cin, h, w, cout, kh, kw, oh, ow;
    int stride, pad;
    std::size_t ck() const { return cin * kh * kw; }
    std::size_t ohw() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
    const std::size_t ohw = g.ohw();
    for (std::size_t c = 0; c < g.cin; ++c) {
        const double* plane = img + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = cols + ((c * g.kh + ki) * g.kw + kj) * ohw;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
    const std::size_t ohw = g.ohw();
    for (std::size_t c = 0; c < g.cin; ++c) {
        double* plane = img + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * ohw;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const double* src = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& K, const Tensor& b, int stride, int pad) {
    require_rank(x, 4, "conv2d", "x");
    require_rank(K, 4, "conv2d", "K");
    require_rank(b, 1, "conv2d", "b");
    if (K.dim(1) != x.dim(1) || b.dim(0) != K.dim(0)) {
        throw ShapeError("conv2d: channel mismatch, x " + shape_str(x.shape()) + " K " +
                         shape_str(K.shape()) + " b " + shape_str(b.shape()));
    }
    ConvGeom geo{x.dim(1), x.dim(2), x.dim(3), K.dim(0), K.dim(2), K.dim(3), 0, 0, stride, pad};
    geo.oh = conv_out_size(geo.h, geo.kh, stride, pad);
    geo.ow = conv_out_size(geo.w, geo.kw, stride, pad);
    const std::size_t batch = x.dim(0), ck = geo.ck(), ohw = geo.ohw();

    Tensor y = make_output({batch, geo.cout, geo.oh, geo.ow}, {&x, &K, &b});
    auto cols = std::make_shared<Buffer>(batch * ck * ohw);
    const auto Km = as_mat(K.data(), geo.cout, ck);
    const MapCV bias(b.data().data(), static_cast<Eigen::Index>(geo.cout));
    for (std::size_t n = 0; n < batch; ++n) {
        double* col = cols->data() + n * ck * ohw;
        im2col(x.data().data() + n * geo.cin * geo.h * geo.w, geo, col);
        auto Y = as_mat(y.data().subspan(n * geo.cout * ohw, geo.cout * ohw), geo.cout, ohw);
        Y.noalias() = Km * as_mat(std::span<const double>(col, ck * ohw), ck, ohw);
        Y.colwise() += bias;
    }
    y.check_finite("conv2d");

    if (g.wants({&x, &K, &b})) {
        g.record("conv2d", {x, K, b}, y,
                 [x, K, b, geo, batch, cols](std::span<const double> gy) mutable {
                     const std::size_t ck = geo.ck(), ohw = geo.ohw();
                     Buffer dcol(x.requires_grad() ? ck * ohw : 0);
                     for (std::size_t n = 0; n < batch; ++n) {
                         auto dY = as_mat(gy.subspan(n * geo.cout * ohw, geo.cout * ohw), geo.cout, ohw);
                         const auto col = as_mat(
                             std::span<const double>(cols->data() + n * ck * ohw, ck * ohw), ck, ohw);
                         if (K.requires_grad())
                             as_mat(K.grad_accum(), geo.cout, ck).noalias() += dY * col.transpose();
                         if (b.requires_grad())
                             MapV(b.grad_accum().data(), static_cast<Eigen::Index>(geo.cout)) +=
                                 dY.rowwise().sum();
                         if (x.requires_grad()) {
                             as_mat(std::span<double>(dcol), ck, ohw).noalias() =
                                 as_mat(std::as_const(K).data(), geo.cout, ck).transpose() * dY;
                             col2im_add(dcol.data(), geo,
                                        x.grad_accum().data() + n * geo.cin * geo.h * geo.w);
                         }
                     }
                 });
    }
    return y;
}

Tensor maxpool2d(Graph& g, const Tensor& x, int window, int stride) {
    require_rank(x, 4, "maxpool2d", "x");
    if (window < 1) throw ConfigError("maxpool2d: window must be >= 1");
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (static_cast<std::size_t>(window) > h || static_cast<std::size_t>(window) > w) {
        throw ConfigError("maxpool2d: window " + std::to_string(window) + " exceeds spatial dims " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t oh = conv_out_size(h, window, stride, 0);
    const std::size_t ow = conv_out_size(w, window, stride, 0);
    Tensor y = make_output({batch, ch, oh, ow}, {&x});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.numel());
    const double* src = x.data().data();
    double* dst = y.data().data();
    std::size_t o = 0;
    for (std::size_t p = 0; p < batch * ch; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = base + oy * stride * w + ox * stride;
                for (int i = 0; i < window; ++i) {
                    const std::size_t row = base + (oy * stride + i) * w + ox * stride;
                    for (int j = 0; j < window; ++j)
                        if (src[row + j] > src[best]) best = row + j;
                }
                dst[o] = src[best];
                (*argmax)[o] = static_cast<std::uint32_t>(best);
                if (g.tracing_decisions()) g.note_decision(best);
            }
        }
    }
    if (g.wants({&x})) {
        g.record("maxpool2d", {x}, y, [x, argmax](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
        });
    }
    return y;
}

Tensor relu(Graph& g, const Tensor& x) {
    Tensor y = make_output(x.shape(), {&x});
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
    if (g.tracing_decisions()) {
        std::uint64_t word = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            word = (word << 1) | (xs[i] > 0.0);
            if (i % 64 == 63 || i + 1 == xs.size()) {
                g.note_decision(word);
                word = 0;
            }
        }
    }
    if (g.wants({&x})) {
        g.record("relu", {x}, y, [x](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            auto xs = std::as_const(x).data();
            for (std::size_t i = 0; i < gy.size(); ++i)
                if (xs[i] > 0.0) gx[i] += gy[i];
        });
    }
    return y;
}

Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng, bool train) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    for (auto& m : *mask) m = uniform01(rng) < p ? 0.0 : keep_scale;
    Tensor y = make_output(x.shape(), {&x});
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * (*mask)[i];
    if (g.wants({&x})) {
        g.record("dropout", {x}, y, [x, mask](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
        });
    }
    return y;
}

Tensor flatten(Graph& g, const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("flatten: need rank >= 2, got " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0);
    Tensor y = make_output({batch, x.numel() / batch}, {&x});
    std::copy(x.data().begin(), x.data().end(), y.data().begin());
    if (g.wants({&x})) {
        g.record("flatten", {x}, y, [x](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        });
    }
    return y;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                             " at row " + std::to_string(i) + " outside [0," +
                             std::to_string(classes) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<double>>(batch * classes);
    auto z = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = z.data() + i * classes;
        const double m = *std::max_element(row, row + classes);
        double se = 0.0;
        for (std::size_t c = 0; c < classes; ++c) se += std::exp(row[c] - m);
        const double log_se = std::log(se);
        for (std::size_t c = 0; c < classes; ++c) (*probs)[i * classes + c] = std::exp(row[c] - m - log_se);
        // log_se - (z_label - m) keeps precision when the logits are large.
        total += log_se - (row[labels[i]] - m);
    }
    Tensor y = make_output({1}, {&logits});
    y.data()[0] = total / static_cast<double>(batch);
    y.check_finite("softmax_cross_entropy");
    if (g.wants({&logits})) {
        std::vector<int> lab(labels.begin(), labels.end());
        g.record("softmax_cross_entropy", {logits}, y,
                 [logits, probs, lab = std::move(lab), batch, classes](std::span<const double> gy) mutable {
                     auto gx = logits.grad_accum();
                     const double s = gy[0] / static_cast<double>(batch);
                     for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                             const double onehot = static_cast<int>(c) == lab[i] ? 1.0 : 0.0;
                             gx[i * classes + c] += s * ((*probs)[i * classes + c] - onehot);
                         }
                     }
                 });
    }
    return y;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}
}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor y = make_output(a.shape(), {&a, &b});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
    y.check_finite("add");
    if (g.wants({&a, &b})) {
        g.record("add", {a, b}, y, [a, b](std::span<const double> gy) mutable {
            if (a.requires_grad()) {
                auto ga = a.grad_accum();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_accum();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor y = make_output(a.shape(), {&a, &b});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] * b.data()[i];
    y.check_finite("mul");
    if (g.wants({&a, &b})) {
        g.record("mul", {a, b}, y, [a, b](std::span<const double> gy) mutable {
            if (a.requires_grad()) {
                auto ga = a.grad_accum();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * std::as_const(b).data()[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_accum();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * std::as_const(a).data()[i];
            }
        });
    }
    return y;
}

Tensor scale(Graph& g, const Tensor& x, double c) {
    Tensor y = make_output(x.shape(), {&x});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = c * x.data()[i];
    y.check_finite("scale");
    if (g.wants({&x})) {
        g.record("scale", {x}, y, [x, c](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
        });
    }
    return y;
}

Tensor add_scalar(Graph& g, const Tensor& x, double c) {
    Tensor y = make_output(x.shape(), {&x});
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] + c;
    y.check_finite("add_scalar");
    if (g.wants({&x})) {
        g.record("add_scalar", {x}, y, [x](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        });
    }
    return y;
}

Tensor exp(Graph& g, const Tensor& x) {
    Tensor y = make_output(x.shape(), {&x});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = std::exp(x.data()[i]);
    y.check_finite("exp");
    if (g.wants({&x})) {
        g.record("exp", {x}, y, [x, y](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * std::as_const(y).data()[i];
        });
    }
    return y;
}

Tensor sum(Graph& g, const Tensor& x) {
    Tensor y = make_output({1}, {&x});
    double s = 0.0;
    for (double v : x.data()) s += v;
    y.data()[0] = s;
    y.check_finite("sum");
    if (g.wants({&x})) {
        g.record("sum", {x}, y, [x](std::span<const double> gy) mutable {
            for (auto& v : x.grad_accum()) v += gy[0];
        });
    }
    return y;
}

Tensor sum_squares(Graph& g, const Tensor& x) {
    Tensor y = make_output({1}, {&x});
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    y.data()[0] = s;
    y.check_finite("sum_squares");
    if (g.wants({&x})) {
        g.record("sum_squares", {x}, y, [x](std::span<const double> gy) mutable {
            auto gx = x.grad_accum();
            auto xs = std::as_const(x).data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xs[i] * gy[0];
        });
    }
    return y;
}

// ============================================================================
// Gradient check
// ============================================================================

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor(Graph&)>& fn, std::span<Tensor> params,
                           const GradCheckOptions& opts) {
    for (auto& p : params) p.drop_grad();
    {
        Graph g;
        Tensor loss = fn(g);
        g.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        auto gs = p.grad();
        analytic.emplace_back(p.numel(), 0.0);
        std::copy(gs.begin(), gs.end(), analytic.back().begin());
    }

    // Value and branch signature of the loss at the current parameters.
    auto eval = [&fn]() {
        Graph g(false);
        g.trace_decisions(true);
        const double v = fn(g).item();
        return std::pair{v, g.decision_signature()};
    };
    const std::uint64_t base = eval().second;
    constexpr int kStepShrinks = 3;

    GradCheckResult res;
    Rng rng(opts.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<std::size_t> coords(p.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords_per_param > 0 && coords.size() > opts.max_coords_per_param) {
            shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_param);
        }
        for (auto c : coords) {
            double& v = p.data()[c];
            const double orig = v;
            std::optional<double> numeric;
            double eps = opts.epsilon;
            for (int attempt = 0; attempt <= kStepShrinks && !numeric; ++attempt, eps *= 0.1) {
                v = orig + eps;
                const auto [fp, sp] = eval();
                v = orig - eps;
                const auto [fm, sm] = eval();
                v = orig;
                if (sp == base && sm == base) {
                    numeric = (fp - fm) / (2.0 * eps);
                    res.coords_step_reduced += attempt > 0;
                }
            }
            if (!numeric) {
                ++res.coords_on_kink;
                continue;
            }
            const double err = relative_error(analytic[pi][c], *numeric);
            ++res.coords_checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = pi;
                res.worst_coord = c;
            }
        }
    }
    for (auto& p : params) p.drop_grad();
    return res;
}

}  // namespace ssmtl::ad
