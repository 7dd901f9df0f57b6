#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace veridian {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl;
struct GraphNode;
} // namespace detail

// Dense row-major float32 tensor with shared storage. Copies of a Tensor
// alias the same storage; use clone() for a deep copy. Operations on
// tensors that require gradients record a node in a dynamic compute graph.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    const Shape& shape() const noexcept;
    std::size_t rank() const noexcept { return shape().size(); }
    std::size_t size() const noexcept;
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }

    std::span<const float> data() const noexcept;
    // Direct mutation bypasses the graph; only for leaves (parameters, inputs).
    std::span<float> mutable_data() noexcept;
    // Empty until a backward pass reaches this tensor.
    std::span<const float> grad() const noexcept;

    float item() const;
    float at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const noexcept;
    void set_requires_grad(bool value);
    bool is_leaf() const noexcept;

    Tensor clone() const;  // deep copy, detached, same requires_grad
    Tensor detach() const; // deep copy, detached, requires_grad = false
    bool shares_storage(const Tensor& other) const noexcept {
        return impl_ == other.impl_;
    }
    bool defined() const noexcept { return impl_ != nullptr; }

    // Bitwise comparison of shape and values.
    bool bit_equal(const Tensor& other) const;

    // Internal access for ops.
    const std::shared_ptr<detail::TensorImpl>& impl() const noexcept {
        return impl_;
    }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
        : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled() noexcept;

// Topologically ordered view of the graph that produced `root`: every
// entry's inputs appear before it. Leaves are included.
class ComputeGraph {
public:
    static ComputeGraph trace(const Tensor& root);

    const std::vector<Tensor>& nodes() const noexcept { return nodes_; }
    // Indices into nodes() of each node's inputs.
    const std::vector<std::vector<std::size_t>>& inputs() const noexcept {
        return inputs_;
    }

private:
    std::vector<Tensor> nodes_;
    std::vector<std::vector<std::size_t>> inputs_;
};

// Fills .grad() of every tensor reachable from `loss` (which must be a
// scalar). Previous gradients in the graph are discarded.
void backward(const Tensor& loss);

using NamedTensors = std::map<std::string, Tensor>;

// Runs backward(loss) and returns d loss / d param for each named param.
// Parameters not reached by the graph get zero gradients.
NamedTensors backward(const Tensor& loss, const NamedTensors& params);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h. `x` is perturbed
// in place and restored; f must read x through its storage.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              Tensor x, double h);

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// a: [m x n], bias: [n], broadcast over rows.
Tensor add_row_vector(const Tensor& a, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& z);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps);
// Mean over the batch of -log softmax(logits)[label]. logits: [B x C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Rows of table [V x D] selected by ids -> [N x D].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
// Rows of x [N x D] at the given indices -> [k x D].
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, float rate, Rng& rng);

struct AttentionShape {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::size_t heads = 0;
};

// Multi-head scaled dot-product attention over packed [B*T x H] q/k/v.
// key_mask has B*T entries (0 = masked key, additive -1e9). relative_bias,
// if defined, is [heads x (2T - 1)] and adds bias[h][(j - i) + T - 1] to the
// logit of query i attending to key j.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionShape& dims,
                 std::span<const std::uint8_t> key_mask,
                 const Tensor& relative_bias = Tensor());

} // namespace ops

} // namespace veridian
