#include "veridian/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "veridian/error.hpp"
#include "veridian/random.hpp"

namespace veridian {

namespace detail {

struct GraphNode {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads out.grad and accumulates into the inputs' grads.
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    std::shared_ptr<GraphNode> node;
};

} // namespace detail

using detail::GraphNode;
using detail::TensorImpl;

namespace {

thread_local bool g_grad_enabled = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

// Zero-initialized gradient buffer of `t`, or nullptr when `t` does not
// take part in differentiation.
float* grad_buffer(const ImplPtr& t) {
    if (!t->requires_grad) {
        return nullptr;
    }
    if (t->grad.size() != t->data.size()) {
        t->grad.assign(t->data.size(), 0.0f);
    }
    return t->grad.data();
}

Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<ImplPtr> inputs,
                   std::function<void(const TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    const bool needs_grad =
        g_grad_enabled &&
        std::any_of(inputs.begin(), inputs.end(),
                    [](const ImplPtr& p) { return p->requires_grad; });
    if (needs_grad) {
        impl->requires_grad = true;
        impl->node = std::make_shared<GraphNode>();
        impl->node->inputs = std::move(inputs);
        impl->node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(impl));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(op) + ": expected rank " + std::to_string(rank) +
                        ", got " + shape_string(t.shape()));
    }
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": undefined tensor");
    }
}

std::size_t last_dim(const Tensor& t, const char* op) {
    if (t.rank() == 0) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(op) + ": needs rank >= 1");
    }
    return t.shape().back();
}

} // namespace

std::size_t shape_size(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    if (shape_size(shape) != data.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<float>{value}, requires_grad);
}

const Shape& Tensor::shape() const noexcept {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::size() const noexcept { return impl_ ? impl_->data.size() : 0; }

std::span<const float> Tensor::data() const noexcept {
    return impl_ ? std::span<const float>(impl_->data) : std::span<const float>();
}

std::span<float> Tensor::mutable_data() noexcept {
    return impl_ ? std::span<float>(impl_->data) : std::span<float>();
}

std::span<const float> Tensor::grad() const noexcept {
    return impl_ ? std::span<const float>(impl_->grad) : std::span<const float>();
}

float Tensor::item() const {
    if (size() != 1) {
        throw Error(ErrorCode::ShapeMismatch,
                    "item() on tensor of shape " + shape_string(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const noexcept { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (impl_) {
        impl_->requires_grad = value;
    }
}

bool Tensor::is_leaf() const noexcept { return !impl_ || !impl_->node; }

Tensor Tensor::clone() const {
    if (!impl_) {
        return {};
    }
    return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

Tensor Tensor::detach() const {
    if (!impl_) {
        return {};
    }
    return Tensor(impl_->shape, impl_->data, false);
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape() != other.shape()) {
        return false;
    }
    const auto a = data();
    const auto b = other.data();
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

ComputeGraph ComputeGraph::trace(const Tensor& root) {
    ComputeGraph graph;
    if (!root.defined()) {
        return graph;
    }
    std::unordered_map<const TensorImpl*, std::size_t> index;
    // Iterative post-order DFS.
    struct Frame {
        ImplPtr impl;
        std::size_t next_input = 0;
    };
    std::vector<Frame> stack;
    std::unordered_set<const TensorImpl*> on_stack;
    stack.push_back({root.impl(), 0});
    on_stack.insert(root.impl().get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        const auto& node = top.impl->node;
        const std::size_t n_inputs = node ? node->inputs.size() : 0;
        if (top.next_input < n_inputs) {
            const ImplPtr& child = node->inputs[top.next_input++];
            if (!index.count(child.get()) && !on_stack.count(child.get())) {
                on_stack.insert(child.get());
                stack.push_back({child, 0});
            }
            continue;
        }
        ImplPtr done = top.impl;
        stack.pop_back();
        on_stack.erase(done.get());
        std::vector<std::size_t> in;
        if (done->node) {
            for (const auto& child : done->node->inputs) {
                in.push_back(index.at(child.get()));
            }
        }
        index.emplace(done.get(), graph.nodes_.size());
        graph.nodes_.emplace_back(done);
        graph.inputs_.push_back(std::move(in));
    }
    return graph;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw Error(ErrorCode::NotScalarLoss,
                    "loss has shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    const ComputeGraph graph = ComputeGraph::trace(loss);
    for (const auto& t : graph.nodes()) {
        t.impl()->grad.clear();
    }
    loss.impl()->grad.assign(1, 1.0f);
    const auto& nodes = graph.nodes();
    for (std::size_t i = nodes.size(); i-- > 0;) {
        const auto& impl = nodes[i].impl();
        if (impl->node && !impl->grad.empty()) {
            impl->node->backward(*impl);
        }
    }
}

NamedTensors backward(const Tensor& loss, const NamedTensors& params) {
    for (const auto& [name, p] : params) {
        p.impl()->grad.clear();
    }
    backward(loss);
    NamedTensors grads;
    for (const auto& [name, p] : params) {
        std::vector<float> g = p.impl()->grad;
        if (g.size() != p.size()) {
            g.assign(p.size(), 0.0f);
        }
        grads.emplace(name, Tensor(p.shape(), std::move(g)));
    }
    return grads;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              Tensor x, double h) {
    if (!(h > 0.0)) {
        throw Error(ErrorCode::BadConfig, "finite difference step must be > 0");
    }
    std::vector<float> out(x.size());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float original = values[i];
        const auto plus = static_cast<float>(original + h);
        const auto minus = static_cast<float>(original - h);
        values[i] = plus;
        const double f_plus = f(x);
        values[i] = minus;
        const double f_minus = f(x);
        values[i] = original;
        // Divide by the step actually taken in float, which is 2h up to
        // rounding of x +/- h.
        const double step = static_cast<double>(plus) - static_cast<double>(minus);
        out[i] = static_cast<float>((f_plus - f_minus) / step);
    }
    return Tensor(x.shape(), std::move(out));
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    if (b.dim(0) != k) {
        throw Error(ErrorCode::ShapeMismatch,
                    "matmul " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
    }
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    std::vector<float> out(m * n);
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const float* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += av * brow[j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = static_cast<float>(acc[j]);
        }
    }
    auto ia = a.impl();
    auto ib = b.impl();
    return make_result(
        {m, n}, std::move(out), {ia, ib}, [ia, ib, m, k, n](const TensorImpl& o) {
            const float* g = o.grad.data();
            if (float* ga = grad_buffer(ia)) {
                const float* pb = ib->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const float* grow = g + i * n;
                        const float* brow = pb + p * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            s += static_cast<double>(grow[j]) * brow[j];
                        }
                        ga[i * k + p] += static_cast<float>(s);
                    }
                }
            }
            if (float* gb = grad_buffer(ib)) {
                const float* pa = ia->data.data();
                std::vector<double> acc(k * n, 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    const float* grow = g + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa[i * k + p];
                        double* arow = acc.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            arow[j] += av * grow[j];
                        }
                    }
                }
                for (std::size_t idx = 0; idx < k * n; ++idx) {
                    gb[idx] += static_cast<float>(acc[idx]);
                }
            }
        });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    std::vector<float> out(m * n);
    const float* pa = a.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = pa[i * n + j];
        }
    }
    auto ia = a.impl();
    return make_result({n, m}, std::move(out), {ia}, [ia, m, n](const TensorImpl& o) {
        if (float* ga = grad_buffer(ia)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    ga[i * n + j] += o.grad[j * m + i];
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
    }
    std::vector<float> out(a.size());
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] + db[i];
    }
    auto ia = a.impl();
    auto ib = b.impl();
    return make_result(a.shape(), std::move(out), {ia, ib}, [ia, ib](const TensorImpl& o) {
        for (const auto& t : {ia, ib}) {
            if (float* gt = grad_buffer(t)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) {
                    gt[i] += o.grad[i];
                }
            }
        }
    });
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
    require_rank(a, 2, "add_row_vector");
    require_rank(bias, 1, "add_row_vector");
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    if (bias.dim(0) != n) {
        throw Error(ErrorCode::ShapeMismatch,
                    "add_row_vector " + shape_string(a.shape()) + " + " +
                        shape_string(bias.shape()));
    }
    std::vector<float> out(m * n);
    const auto da = a.data();
    const auto db = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = da[i * n + j] + db[j];
        }
    }
    auto ia = a.impl();
    auto ib = bias.impl();
    return make_result(a.shape(), std::move(out), {ia, ib},
                       [ia, ib, m, n](const TensorImpl& o) {
                           if (float* ga = grad_buffer(ia)) {
                               for (std::size_t i = 0; i < m * n; ++i) {
                                   ga[i] += o.grad[i];
                               }
                           }
                           if (float* gb = grad_buffer(ib)) {
                               std::vector<double> acc(n, 0.0);
                               for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                       acc[j] += o.grad[i * n + j];
                                   }
                               }
                               for (std::size_t j = 0; j < n; ++j) {
                                   gb[j] += static_cast<float>(acc[j]);
                               }
                           }
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "mul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
    }
    std::vector<float> out(a.size());
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] * db[i];
    }
    auto ia = a.impl();
    auto ib = b.impl();
    return make_result(a.shape(), std::move(out), {ia, ib}, [ia, ib](const TensorImpl& o) {
        if (float* ga = grad_buffer(ia)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                ga[i] += o.grad[i] * ib->data[i];
            }
        }
        if (float* gb = grad_buffer(ib)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                gb[i] += o.grad[i] * ia->data[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, float factor) {
    std::vector<float> out(a.size());
    const auto da = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] * factor;
    }
    auto ia = a.impl();
    return make_result(a.shape(), std::move(out), {ia}, [ia, factor](const TensorImpl& o) {
        if (float* ga = grad_buffer(ia)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                ga[i] += o.grad[i] * factor;
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (float v : a.data()) {
        s += v;
    }
    auto ia = a.impl();
    return make_result({}, {static_cast<float>(s)}, {ia}, [ia](const TensorImpl& o) {
        if (float* ga = grad_buffer(ia)) {
            for (std::size_t i = 0; i < ia->data.size(); ++i) {
                ga[i] += o.grad[0];
            }
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) {
        throw Error(ErrorCode::ShapeMismatch, "mean of empty tensor");
    }
    return scale(sum(a), 1.0f / static_cast<float>(a.size()));
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    constexpr double k = 0.044715;
    std::vector<float> out(x.size());
    const auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = dx[i];
        out[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))));
    }
    auto ix = x.impl();
    return make_result(x.shape(), std::move(out), {ix}, [ix](const TensorImpl& o) {
        if (float* gx = grad_buffer(ix)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const double v = ix->data[i];
                const double t = std::tanh(c * (v + k * v * v * v));
                const double d = 0.5 * (1.0 + t) +
                                 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
                gx[i] += static_cast<float>(o.grad[i] * d);
            }
        }
    });
}

Tensor softmax(const Tensor& z) {
    const std::size_t c = last_dim(z, "softmax");
    if (c == 0) {
        throw Error(ErrorCode::ShapeMismatch, "softmax over an empty axis");
    }
    const std::size_t rows = z.size() / c;
    std::vector<float> out(z.size());
    const auto dz = z.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = dz.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            total += std::exp(row[j] - mx);
        }
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] = static_cast<float>(std::exp(row[j] - mx) / total);
        }
    }
    auto iz = z.impl();
    std::vector<float> saved = out;
    return make_result(z.shape(), std::move(out), {iz},
                       [iz, rows, c, y = std::move(saved)](const TensorImpl& o) {
                           if (float* gz = grad_buffer(iz)) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < c; ++j) {
                                       dot += static_cast<double>(o.grad[r * c + j]) * y[r * c + j];
                                   }
                                   for (std::size_t j = 0; j < c; ++j) {
                                       gz[r * c + j] += static_cast<float>(
                                           y[r * c + j] * (o.grad[r * c + j] - dot));
                                   }
                               }
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps) {
    const std::size_t h = last_dim(x, "layer_norm");
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    if (gamma.dim(0) != h || beta.dim(0) != h) {
        throw Error(ErrorCode::ShapeMismatch, "layer_norm gamma/beta size");
    }
    if (!(eps > 0.0f)) {
        throw Error(ErrorCode::BadConfig, "layer_norm eps must be > 0");
    }
    const std::size_t rows = x.size() / h;
    std::vector<float> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(rows);
    const auto dx = x.data();
    const auto dg = gamma.data();
    const auto db = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = dx.data() + r * h;
        double mu = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(h);
        double var = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(h);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < h; ++j) {
            const double xh = (row[j] - mu) * rstd[r];
            xhat[r * h + j] = xh;
            out[r * h + j] = static_cast<float>(xh * dg[j] + db[j]);
        }
    }
    auto ix = x.impl();
    auto ig = gamma.impl();
    auto ib = beta.impl();
    return make_result(
        x.shape(), std::move(out), {ix, ig, ib},
        [ix, ig, ib, rows, h, xhat = std::move(xhat),
         rstd = std::move(rstd)](const TensorImpl& o) {
            const float* g = o.grad.data();
            if (float* gg = grad_buffer(ig)) {
                std::vector<double> acc(h, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < h; ++j) {
                        acc[j] += g[r * h + j] * xhat[r * h + j];
                    }
                }
                for (std::size_t j = 0; j < h; ++j) {
                    gg[j] += static_cast<float>(acc[j]);
                }
            }
            if (float* gb = grad_buffer(ib)) {
                std::vector<double> acc(h, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < h; ++j) {
                        acc[j] += g[r * h + j];
                    }
                }
                for (std::size_t j = 0; j < h; ++j) {
                    gb[j] += static_cast<float>(acc[j]);
                }
            }
            if (float* gx = grad_buffer(ix)) {
                const float* gam = ig->data.data();
                const double inv_h = 1.0 / static_cast<double>(h);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dy = 0.0;
                    double mean_dy_xhat = 0.0;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double dy = static_cast<double>(g[r * h + j]) * gam[j];
                        mean_dy += dy;
                        mean_dy_xhat += dy * xhat[r * h + j];
                    }
                    mean_dy *= inv_h;
                    mean_dy_xhat *= inv_h;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double dy = static_cast<double>(g[r * h + j]) * gam[j];
                        gx[r * h + j] += static_cast<float>(
                            rstd[r] * (dy - mean_dy - xhat[r * h + j] * mean_dy_xhat));
                    }
                }
            }
        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t batch = logits.dim(0);
    const std::size_t c = logits.dim(1);
    if (labels.size() != batch) {
        throw Error(ErrorCode::ShapeMismatch,
                    "cross_entropy: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(batch));
    }
    if (batch == 0 || c == 0) {
        throw Error(ErrorCode::ShapeMismatch, "cross_entropy on empty logits");
    }
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= c) {
            throw Error(ErrorCode::BadLabel,
                        "label " + std::to_string(labels[b]) + " outside [0," +
                            std::to_string(c) + ")");
        }
    }
    const auto dz = logits.data();
    std::vector<double> probs(batch * c);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const float* row = dz.data() + b * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            s += std::exp(row[j] - mx);
        }
        const double lse = mx + std::log(s);
        total += lse - row[labels[b]];
        for (std::size_t j = 0; j < c; ++j) {
            probs[b * c + j] = std::exp(row[j] - lse);
        }
    }
    std::vector<int> saved_labels(labels.begin(), labels.end());
    auto il = logits.impl();
    return make_result(
        {}, {static_cast<float>(total / static_cast<double>(batch))}, {il},
        [il, batch, c, probs = std::move(probs),
         y = std::move(saved_labels)](const TensorImpl& o) {
            if (float* gl = grad_buffer(il)) {
                const double scale = o.grad[0] / static_cast<double>(batch);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const double onehot = static_cast<int>(j) == y[b] ? 1.0 : 0.0;
                        gl[b * c + j] += static_cast<float>((probs[b * c + j] - onehot) * scale);
                    }
                }
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank(table, 2, "embedding");
    const std::size_t v = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<float> out(ids.size() * d);
    const auto dt = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw Error(ErrorCode::IdOutOfVocab,
                        "token id " + std::to_string(ids[i]) + " >= vocab size " +
                            std::to_string(v));
        }
        std::copy_n(dt.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    auto it = table.impl();
    return make_result({ids.size(), d}, std::move(out), {it},
                       [it, d, idx = std::move(saved)](const TensorImpl& o) {
                           if (float* gt = grad_buffer(it)) {
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                   float* row = gt + static_cast<std::size_t>(idx[i]) * d;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       row[j] += o.grad[i * d + j];
                                   }
                               }
                           }
                       });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "select_rows");
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    std::vector<float> out(rows.size() * d);
    const auto dx = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw Error(ErrorCode::ShapeMismatch, "select_rows index out of range");
        }
        std::copy_n(dx.data() + rows[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    auto ix = x.impl();
    return make_result({rows.size(), d}, std::move(out), {ix},
                       [ix, d, idx = std::move(saved)](const TensorImpl& o) {
                           if (float* gx = grad_buffer(ix)) {
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                       gx[idx[i] * d + j] += o.grad[i * d + j];
                                   }
                               }
                           }
                       });
}

Tensor dropout(const Tensor& x, float rate, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f) {
        throw Error(ErrorCode::BadConfig, "dropout rate must lie in [0,1)");
    }
    if (rate == 0.0f) {
        return x;
    }
    const float keep_scale = 1.0f / (1.0f - rate);
    std::vector<float> mask(x.size());
    for (auto& m : mask) {
        m = rng.uniform() < rate ? 0.0f : keep_scale;
    }
    std::vector<float> out(x.size());
    const auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = dx[i] * mask[i];
    }
    auto ix = x.impl();
    return make_result(x.shape(), std::move(out), {ix},
                       [ix, mask = std::move(mask)](const TensorImpl& o) {
                           if (float* gx = grad_buffer(ix)) {
                               for (std::size_t i = 0; i < mask.size(); ++i) {
                                   gx[i] += o.grad[i] * mask[i];
                               }
                           }
                       });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionShape& dims,
                 std::span<const std::uint8_t> key_mask,
                 const Tensor& relative_bias) {
    require_rank(q, 2, "attention");
    const std::size_t B = dims.batch;
    const std::size_t T = dims.seq_len;
    const std::size_t A = dims.heads;
    const std::size_t H = q.dim(1);
    if (A == 0 || H % A != 0 || q.dim(0) != B * T || k.shape() != q.shape() ||
        v.shape() != q.shape() || key_mask.size() != B * T) {
        throw Error(ErrorCode::ShapeMismatch, "attention input shapes");
    }
    const std::size_t R = 2 * T - 1;
    const bool has_bias = relative_bias.defined();
    if (has_bias && relative_bias.shape() != Shape{A, R}) {
        throw Error(ErrorCode::ShapeMismatch,
                    "relative bias must be " + shape_string({A, R}));
    }
    const std::size_t dh = H / A;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    constexpr double kMasked = -1e9;

    const float* pq = q.data().data();
    const float* pk = k.data().data();
    const float* pv = v.data().data();
    const float* pbias = has_bias ? relative_bias.data().data() : nullptr;

    std::vector<double> probs(B * A * T * T);
    std::vector<float> out(B * T * H);
    std::vector<double> scores(T);
    std::vector<double> acc(dh);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < A; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                const float* qi = pq + (b * T + i) * H + h * dh;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < T; ++j) {
                    const float* kj = pk + (b * T + j) * H + h * dh;
                    double s = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) {
                        s += static_cast<double>(qi[d]) * kj[d];
                    }
                    s *= inv_sqrt;
                    if (pbias) {
                        s += pbias[h * R + (j + T - 1 - i)];
                    }
                    if (!key_mask[b * T + j]) {
                        s += kMasked;
                    }
                    scores[j] = s;
                    mx = std::max(mx, s);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    total += scores[j];
                }
                double* prow = probs.data() + ((b * A + h) * T + i) * T;
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t j = 0; j < T; ++j) {
                    prow[j] = scores[j] / total;
                    if (prow[j] == 0.0) {
                        continue;
                    }
                    const float* vj = pv + (b * T + j) * H + h * dh;
                    for (std::size_t d = 0; d < dh; ++d) {
                        acc[d] += prow[j] * vj[d];
                    }
                }
                float* oi = out.data() + (b * T + i) * H + h * dh;
                for (std::size_t d = 0; d < dh; ++d) {
                    oi[d] = static_cast<float>(acc[d]);
                }
            }
        }
    }

    auto iq = q.impl();
    auto ik = k.impl();
    auto iv = v.impl();
    std::vector<ImplPtr> inputs{iq, ik, iv};
    ImplPtr ibias;
    if (has_bias) {
        ibias = relative_bias.impl();
        inputs.push_back(ibias);
    }
    return make_result(
        q.shape(), std::move(out), std::move(inputs),
        [iq, ik, iv, ibias, B, T, A, H, dh, R, inv_sqrt,
         probs = std::move(probs)](const TensorImpl& o) {
            float* gq = grad_buffer(iq);
            float* gk = grad_buffer(ik);
            float* gv = grad_buffer(iv);
            float* gbias = ibias ? grad_buffer(ibias) : nullptr;
            const float* pq = iq->data.data();
            const float* pk = ik->data.data();
            const float* pv = iv->data.data();
            const float* g = o.grad.data();
            std::vector<double> dq(T * dh), dk(T * dh), dv(T * dh);
            std::vector<double> dscore(T);
            std::vector<double> dbias(ibias ? A * R : 0, 0.0);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < A; ++h) {
                    std::fill(dq.begin(), dq.end(), 0.0);
                    std::fill(dk.begin(), dk.end(), 0.0);
                    std::fill(dv.begin(), dv.end(), 0.0);
                    for (std::size_t i = 0; i < T; ++i) {
                        const double* prow = probs.data() + ((b * A + h) * T + i) * T;
                        const float* gi = g + (b * T + i) * H + h * dh;
                        const float* qi = pq + (b * T + i) * H + h * dh;
                        double row_dot = 0.0;
                        for (std::size_t j = 0; j < T; ++j) {
                            if (prow[j] == 0.0) {
                                dscore[j] = 0.0;
                                continue;
                            }
                            const float* vj = pv + (b * T + j) * H + h * dh;
                            double dp = 0.0;
                            for (std::size_t d = 0; d < dh; ++d) {
                                dp += static_cast<double>(gi[d]) * vj[d];
                                dv[j * dh + d] += prow[j] * gi[d];
                            }
                            dscore[j] = dp;
                            row_dot += prow[j] * dp;
                        }
                        for (std::size_t j = 0; j < T; ++j) {
                            if (prow[j] == 0.0) {
                                continue;
                            }
                            const double ds = prow[j] * (dscore[j] - row_dot);
                            if (ibias) {
                                dbias[h * R + (j + T - 1 - i)] += ds;
                            }
                            const double dsc = ds * inv_sqrt;
                            const float* kj = pk + (b * T + j) * H + h * dh;
                            for (std::size_t d = 0; d < dh; ++d) {
                                dq[i * dh + d] += dsc * kj[d];
                                dk[j * dh + d] += dsc * qi[d];
                            }
                        }
                    }
                    for (std::size_t t = 0; t < T; ++t) {
                        const std::size_t base = (b * T + t) * H + h * dh;
                        for (std::size_t d = 0; d < dh; ++d) {
                            if (gq) gq[base + d] += static_cast<float>(dq[t * dh + d]);
                            if (gk) gk[base + d] += static_cast<float>(dk[t * dh + d]);
                            if (gv) gv[base + d] += static_cast<float>(dv[t * dh + d]);
                        }
                    }
                }
            }
            if (gbias) {
                for (std::size_t idx = 0; idx < A * R; ++idx) {
                    gbias[idx] += static_cast<float>(dbias[idx]);
                }
            }
        });
}

} // namespace ops

} // namespace veridian
