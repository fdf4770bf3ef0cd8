#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cumix/common.hpp"
#include "cumix/kernels.hpp"

namespace cumix {

template <typename T>
class Tape;

// Dense row-major tensor. The payload is immutable once the tensor is
// attached to a tape; mutable_data() is the designated entry point for
// initialization and parameter updates and requires a detached tensor.
template <typename T>
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<T>>()) {}
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(static_cast<size_t>(numel_of(shape_)), T(0))) {}
    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (static_cast<int64_t>(data_->size()) != numel_of(shape_))
            throw ShapeError("tensor: " + std::to_string(data_->size()) +
                             " values for shape " + shape_str(shape_));
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        for (auto& v : *t.data_) v = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    std::span<const T> data() const { return {data_->data(), data_->size()}; }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
        return (*data_)[0];
    }

    std::span<T> mutable_data() {
        if (tape_) throw std::logic_error("mutable_data: tensor is attached to a tape");
        return {data_->data(), data_->size()};
    }

    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

    bool on_tape() const { return tape_ != nullptr; }
    Tape<T>* tape() const { return tape_; }
    int32_t node() const { return node_; }
    bool requires_grad() const;

private:
    friend class Tape<T>;
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    int32_t node_ = -1;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

enum class PoolKind { Max, Avg };

// Per-layer batch-norm running statistics, owned by the module that owns the
// affine parameters. Updated in place during training forwards.
template <typename T>
struct BnState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BnState(int64_t channels = 0)
        : running_mean(static_cast<size_t>(channels), T(0)),
          running_var(static_cast<size_t>(channels), T(1)) {}
};

namespace detail {
template <typename T>
struct TapeNode;
}

// Reverse-mode tape. Confined to one thread; rebuilt per training iteration.
template <typename T>
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a tensor as a graph input. Only requires_grad leaves
    // accumulate gradient.
    Tensor<T> leaf(const Tensor<T>& value, bool requires_grad);

    // Populates dLoss/dNode for every node that requires grad. Errors on a
    // non-scalar or detached loss, and on a second call without zero_grad().
    void backward(const Tensor<T>& loss);

    // Drops accumulated gradients so the recorded graph can be replayed.
    void zero_grad();

    bool backward_run() const { return backward_run_; }
    size_t size() const { return nodes_.size(); }

    bool has_grad(const Tensor<T>& t) const;
    std::span<const T> grad(const Tensor<T>& t) const;

    // Implementation hooks for the op library; not a stable interface.
    int32_t record(detail::TapeNode<T> node);
    Tensor<T> adopt(const Tensor<T>& value, int32_t id);
    const detail::TapeNode<T>& node_at(int32_t id) const;

private:
    std::vector<detail::TapeNode<T>> nodes_;
    bool backward_run_ = false;

    T* grad_sink(int32_t id, bool& fresh);
    void accumulate(int32_t id, const T* values, int64_t n);
    void backward_node(int32_t id);
};

// Elementwise kinds mirroring the kernel enums plus the tape-level ops.
enum class EwOp { Add, Sub, Mul, Div, Relu, Exp, Log, Scale };

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T scalar);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Div, a, b); }
template <typename T> Tensor<T> add(const Tensor<T>& a, T s) { return elementwise(EwOp::Add, a, s); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, T s) { return elementwise(EwOp::Sub, a, s); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, T s) { return elementwise(EwOp::Mul, a, s); }
template <typename T> Tensor<T> div(const Tensor<T>& a, T s) { return elementwise(EwOp::Div, a, s); }
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s) { return elementwise(EwOp::Scale, a, s); }
template <typename T> Tensor<T> relu(const Tensor<T>& a) { return elementwise(EwOp::Relu, a, T(0)); }
template <typename T> Tensor<T> exp(const Tensor<T>& a) { return elementwise(EwOp::Exp, a, T(0)); }
template <typename T> Tensor<T> log(const Tensor<T>& a) { return elementwise(EwOp::Log, a, T(0)); }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// out[B,N] = x[B,K] * w[K,N] + bias[N] broadcast over rows.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Cross-correlation convention (no kernel flip). bias may be an empty tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad);

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int64_t wh, int64_t ww, int64_t stride);

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BnState<T>& state, T momentum, bool training, bool update_stats,
                      T eps = T(1e-5));

// Mean over the batch of -sum_n target_n * log softmax(logits)_n. Targets are
// per-row probability vectors (validated) and are not differentiated.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets);

// out[i] = x[indices[i]]. Indices must lie in [0, B); repeats are allowed and
// backward scatter-adds into the referenced rows.
template <typename T>
Tensor<T> index_select_batch(const Tensor<T>& x, const std::vector<int32_t>& indices);

// Per-(sample, channel): out = mask ? h : h'. The mask is a constant.
template <typename T>
Tensor<T> channel_mix(const Tensor<T>& h, const Tensor<T>& hp, const std::vector<uint8_t>& mask);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Forward value of softmax per row, detached convenience for eval paths.
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cumix
