#include "cumix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cumix {

namespace detail {

enum class Op {
    Leaf,
    EwTT,
    EwTS,
    Relu,
    Exp,
    Log,
    Matmul,
    Linear,
    Conv2d,
    Pool,
    BnTrain,
    BnEval,
    SoftmaxCE,
    IndexSelect,
    ChannelMix,
    Reshape,
    Sum,
    Mean,
};

template <typename T>
struct TapeNode {
    Op op = Op::Leaf;
    int sub = 0;  // elementwise / pool kind
    std::array<int32_t, 3> in{-1, -1, -1};
    Shape out_shape;
    bool needs_grad = false;
    std::vector<Tensor<T>> saved;
    std::shared_ptr<std::vector<int32_t>> ints;
    std::shared_ptr<std::vector<uint8_t>> bytes;
    std::vector<int64_t> ip;
    T fp = T(0);
    std::vector<T> grad;
    bool grad_live = false;
};

}  // namespace detail

using detail::Op;
using detail::TapeNode;

template <typename T>
bool Tensor<T>::requires_grad() const {
    return tape_ != nullptr && tape_->node_at(node_).needs_grad;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
Tape<T>::Tape() = default;

template <typename T>
Tape<T>::~Tape() = default;

template <typename T>
int32_t Tape<T>::record(TapeNode<T> node) {
    if (backward_run_)
        throw std::logic_error("tape: recording after backward; build a fresh tape");
    nodes_.push_back(std::move(node));
    return static_cast<int32_t>(nodes_.size()) - 1;
}

template <typename T>
Tensor<T> Tape<T>::leaf(const Tensor<T>& value, bool requires_grad) {
    TapeNode<T> n;
    n.op = Op::Leaf;
    n.out_shape = value.shape();
    n.needs_grad = requires_grad;
    Tensor<T> out = value.detached();
    out.tape_ = this;
    out.node_ = record(std::move(n));
    return out;
}

template <typename T>
void Tape<T>::zero_grad() {
    for (auto& n : nodes_) {
        n.grad.clear();
        n.grad_live = false;
    }
    backward_run_ = false;
}

template <typename T>
bool Tape<T>::has_grad(const Tensor<T>& t) const {
    if (t.tape() != this || t.node() < 0) return false;
    const auto& n = nodes_[static_cast<size_t>(t.node())];
    return n.needs_grad && n.grad_live;
}

template <typename T>
std::span<const T> Tape<T>::grad(const Tensor<T>& t) const {
    if (t.tape() != this) throw std::logic_error("grad: tensor is not on this tape");
    const auto& n = nodes_.at(static_cast<size_t>(t.node()));
    if (!n.needs_grad) throw std::logic_error("grad: tensor does not require grad");
    if (!n.grad_live) throw std::logic_error("grad: no gradient accumulated; run backward first");
    return {n.grad.data(), n.grad.size()};
}

template <typename T>
T* Tape<T>::grad_sink(int32_t id, bool& fresh) {
    auto& n = nodes_[static_cast<size_t>(id)];
    const auto need = static_cast<size_t>(numel_of(n.out_shape));
    if (n.grad.size() != need) n.grad.assign(need, T(0));
    fresh = !n.grad_live;
    n.grad_live = true;
    return n.grad.data();
}

template <typename T>
void Tape<T>::accumulate(int32_t id, const T* values, int64_t n) {
    bool fresh = false;
    T* sink = grad_sink(id, fresh);
    if (fresh) {
        std::memcpy(sink, values, static_cast<size_t>(n) * sizeof(T));
    } else {
        kern::ew_axpby<T>(n, T(1), values, T(1), sink, sink);
    }
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (!loss.on_tape() || loss.tape() != this)
        throw std::logic_error("backward: loss is detached from this tape");
    if (loss.numel() != 1)
        throw std::logic_error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (backward_run_)
        throw std::logic_error("backward: already run on this tape; call zero_grad() to replay");
    backward_run_ = true;
    auto& ln = nodes_.at(static_cast<size_t>(loss.node()));
    ln.grad.assign(1, T(1));
    ln.grad_live = true;
    for (int32_t id = loss.node(); id >= 0; --id) backward_node(id);
}

namespace {

template <typename T>
std::vector<T> ew_tt_input_grad(const TapeNode<T>& n, int which) {
    const auto g = n.grad.data();
    const int64_t cnt = static_cast<int64_t>(n.grad.size());
    const auto& a = n.saved[0];
    const auto& b = n.saved[1];
    std::vector<T> out(n.grad.size());
    switch (static_cast<EwOp>(n.sub)) {
        case EwOp::Add:
            std::memcpy(out.data(), g, out.size() * sizeof(T));
            break;
        case EwOp::Sub:
            kern::ew_axpby<T>(cnt, which == 0 ? T(1) : T(-1), g, T(0), nullptr, out.data());
            break;
        case EwOp::Mul:
            kern::ew_binary<T>(kern::Binary::Mul, cnt, g, (which == 0 ? b : a).data().data(),
                               out.data());
            break;
        default: {  // Div: da = g/b ; db = -g*a/b^2
            if (which == 0) {
                kern::ew_binary<T>(kern::Binary::Div, cnt, g, b.data().data(), out.data());
            } else {
                std::vector<T> t(out.size());
                kern::ew_binary<T>(kern::Binary::Mul, cnt, g, a.data().data(), t.data());
                std::vector<T> b2(out.size());
                kern::ew_binary<T>(kern::Binary::Mul, cnt, b.data().data(), b.data().data(),
                                   b2.data());
                kern::ew_binary<T>(kern::Binary::Div, cnt, t.data(), b2.data(), out.data());
                kern::ew_axpby<T>(cnt, T(-1), out.data(), T(0), nullptr, out.data());
            }
            break;
        }
    }
    return out;
}

}  // namespace

template <typename T>
void Tape<T>::backward_node(int32_t id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || !n.grad_live || n.op == Op::Leaf) return;
    const T* g = n.grad.data();
    const int64_t gn = static_cast<int64_t>(n.grad.size());

    auto input_needs = [&](int which) {
        const int32_t in_id = n.in[static_cast<size_t>(which)];
        return in_id >= 0 && nodes_[static_cast<size_t>(in_id)].needs_grad;
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::EwTT: {
            for (int which = 0; which < 2; ++which) {
                if (!input_needs(which)) continue;
                auto gi = ew_tt_input_grad<T>(n, which);
                accumulate(n.in[static_cast<size_t>(which)], gi.data(), gn);
            }
            break;
        }
        case Op::EwTS: {
            if (!input_needs(0)) break;
            std::vector<T> gi(n.grad.size());
            switch (static_cast<EwOp>(n.sub)) {
                case EwOp::Add:
                case EwOp::Sub:
                    std::memcpy(gi.data(), g, gi.size() * sizeof(T));
                    break;
                case EwOp::Mul:
                case EwOp::Scale:
                    kern::ew_binary_scalar<T>(kern::Binary::Mul, gn, g, n.fp, gi.data());
                    break;
                default:
                    kern::ew_binary_scalar<T>(kern::Binary::Div, gn, g, n.fp, gi.data());
                    break;
            }
            accumulate(n.in[0], gi.data(), gn);
            break;
        }
        case Op::Relu: {
            if (!input_needs(0)) break;
            std::vector<T> gi(n.grad.size());
            kern::ew_relu_backward<T>(gn, g, n.saved[0].data().data(), gi.data());
            accumulate(n.in[0], gi.data(), gn);
            break;
        }
        case Op::Exp: {
            if (!input_needs(0)) break;
            std::vector<T> gi(n.grad.size());
            kern::ew_binary<T>(kern::Binary::Mul, gn, g, n.saved[0].data().data(), gi.data());
            accumulate(n.in[0], gi.data(), gn);
            break;
        }
        case Op::Log: {
            if (!input_needs(0)) break;
            std::vector<T> gi(n.grad.size());
            kern::ew_binary<T>(kern::Binary::Div, gn, g, n.saved[0].data().data(), gi.data());
            accumulate(n.in[0], gi.data(), gn);
            break;
        }
        case Op::Matmul: {
            const auto& a = n.saved[0];
            const auto& b = n.saved[1];
            const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
            if (input_needs(0)) {
                std::vector<T> bt(static_cast<size_t>(K * N));
                kern::transpose<T>(K, N, b.data().data(), bt.data());
                std::vector<T> da(static_cast<size_t>(M * K));
                kern::gemm_nn<T>(M, K, N, g, bt.data(), da.data(), false);
                accumulate(n.in[0], da.data(), M * K);
            }
            if (input_needs(1)) {
                std::vector<T> at(static_cast<size_t>(M * K));
                kern::transpose<T>(M, K, a.data().data(), at.data());
                std::vector<T> db(static_cast<size_t>(K * N));
                kern::gemm_nn<T>(K, N, M, at.data(), g, db.data(), false);
                accumulate(n.in[1], db.data(), K * N);
            }
            break;
        }
        case Op::Linear: {
            const auto& x = n.saved[0];
            const auto& w = n.saved[1];
            const int64_t B = x.dim(0), K = x.dim(1), N = w.dim(1);
            if (input_needs(0)) {
                std::vector<T> wt(static_cast<size_t>(K * N));
                kern::transpose<T>(K, N, w.data().data(), wt.data());
                std::vector<T> dx(static_cast<size_t>(B * K));
                kern::gemm_nn<T>(B, K, N, g, wt.data(), dx.data(), false);
                accumulate(n.in[0], dx.data(), B * K);
            }
            if (input_needs(1)) {
                std::vector<T> xt(static_cast<size_t>(B * K));
                kern::transpose<T>(B, K, x.data().data(), xt.data());
                std::vector<T> dw(static_cast<size_t>(K * N));
                kern::gemm_nn<T>(K, N, B, xt.data(), g, dw.data(), false);
                accumulate(n.in[1], dw.data(), K * N);
            }
            if (input_needs(2)) {
                std::vector<T> db(static_cast<size_t>(N), T(0));
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t j = 0; j < N; ++j) db[static_cast<size_t>(j)] += g[b * N + j];
                accumulate(n.in[2], db.data(), N);
            }
            break;
        }
        case Op::Conv2d: {
            const int64_t B = n.ip[0], Cin = n.ip[1], H = n.ip[2], W = n.ip[3], Cout = n.ip[4],
                          kh = n.ip[5], kw = n.ip[6], stride = n.ip[7], pad = n.ip[8],
                          OH = n.ip[9], OW = n.ip[10];
            const int64_t K = Cin * kh * kw, P = OH * OW, BP = B * P;
            const auto& cols = n.saved[0];
            const auto& w = n.saved[1];
            std::vector<T> gout2(static_cast<size_t>(Cout * BP));
            std::vector<T> gout2t;
            const bool need_w = input_needs(1);
            if (need_w) gout2t.resize(static_cast<size_t>(Cout * BP));
            kern::bchw_to_cols<T>(g, B, Cout, P, gout2.data(),
                                  need_w ? gout2t.data() : nullptr);
            if (input_needs(2)) {
                std::vector<T> db(static_cast<size_t>(Cout));
                kern::row_sums<T>(Cout, BP, gout2.data(), db.data());
                accumulate(n.in[2], db.data(), Cout);
            }
            if (need_w) {
                std::vector<T> dwt(static_cast<size_t>(K * Cout));
                kern::gemm_nn<T>(K, Cout, BP, cols.data().data(), gout2t.data(), dwt.data(), false);
                std::vector<T> dw(static_cast<size_t>(Cout * K));
                kern::transpose<T>(K, Cout, dwt.data(), dw.data());
                accumulate(n.in[1], dw.data(), Cout * K);
            }
            if (input_needs(0)) {
                std::vector<T> wt(static_cast<size_t>(K * Cout));
                kern::transpose<T>(Cout, K, w.data().data(), wt.data());
                std::vector<T> dcols(static_cast<size_t>(K * BP));
                kern::gemm_nn<T>(K, BP, Cout, wt.data(), gout2.data(), dcols.data(), false);
                bool fresh = false;
                T* sink = grad_sink(n.in[0], fresh);
                if (fresh) {
                    kern::col2im<T>(dcols.data(), B, Cin, H, W, kh, kw, stride, pad, OH, OW, sink);
                } else {
                    std::vector<T> dx(static_cast<size_t>(B * Cin * H * W), T(0));
                    kern::col2im<T>(dcols.data(), B, Cin, H, W, kh, kw, stride, pad, OH, OW,
                                    dx.data());
                    accumulate(n.in[0], dx.data(), B * Cin * H * W);
                }
            }
            break;
        }
        case Op::Pool: {
            if (!input_needs(0)) break;
            const int64_t B = n.ip[0], C = n.ip[1], H = n.ip[2], W = n.ip[3], wh = n.ip[4],
                          ww = n.ip[5], stride = n.ip[6], OH = n.ip[7], OW = n.ip[8];
            std::vector<T> dx(static_cast<size_t>(B * C * H * W), T(0));
            if (static_cast<PoolKind>(n.sub) == PoolKind::Max) {
                kern::pool_max_backward<T>(g, n.ints->data(), B, C, H, W, OH, OW, dx.data());
            } else {
                kern::pool_avg_backward<T>(g, B, C, H, W, wh, ww, stride, OH, OW, dx.data());
            }
            accumulate(n.in[0], dx.data(), B * C * H * W);
            break;
        }
        case Op::BnTrain: {
            const int64_t B = n.ip[0], C = n.ip[1], HW = n.ip[2];
            const auto& xhat = n.saved[0];
            const auto& invstd = n.saved[1];
            const auto& gamma = n.saved[2];
            std::vector<T> dx(static_cast<size_t>(B * C * HW));
            std::vector<T> dgamma(static_cast<size_t>(C)), dbeta(static_cast<size_t>(C));
            kern::bn_train_backward<T>(g, xhat.data().data(), gamma.data().data(),
                                       invstd.data().data(), B, C, HW, dx.data(), dgamma.data(),
                                       dbeta.data());
            if (input_needs(0)) accumulate(n.in[0], dx.data(), B * C * HW);
            if (input_needs(1)) accumulate(n.in[1], dgamma.data(), C);
            if (input_needs(2)) accumulate(n.in[2], dbeta.data(), C);
            break;
        }
        case Op::BnEval: {
            const int64_t B = n.ip[0], C = n.ip[1], HW = n.ip[2];
            const auto& xhat = n.saved[0];
            const auto& gamma = n.saved[1];
            const auto& rvar = n.saved[2];
            std::vector<T> dx(static_cast<size_t>(B * C * HW));
            std::vector<T> dgamma(static_cast<size_t>(C)), dbeta(static_cast<size_t>(C));
            kern::bn_eval_backward<T>(g, xhat.data().data(), gamma.data().data(),
                                      rvar.data().data(), n.fp, B, C, HW, dx.data(), dgamma.data(),
                                      dbeta.data());
            if (input_needs(0)) accumulate(n.in[0], dx.data(), B * C * HW);
            if (input_needs(1)) accumulate(n.in[1], dgamma.data(), C);
            if (input_needs(2)) accumulate(n.in[2], dbeta.data(), C);
            break;
        }
        case Op::SoftmaxCE: {
            if (!input_needs(0)) break;
            const int64_t B = n.ip[0], N = n.ip[1];
            const auto& softmax = n.saved[0];
            const auto& targets = n.saved[1];
            std::vector<T> dlogits(static_cast<size_t>(B * N));
            kern::softmax_ce_backward<T>(softmax.data().data(), targets.data().data(), B, N, g[0],
                                         dlogits.data());
            accumulate(n.in[0], dlogits.data(), B * N);
            break;
        }
        case Op::IndexSelect: {
            if (!input_needs(0)) break;
            const int64_t B = n.ip[0], rowelems = n.ip[1];
            bool fresh = false;
            T* sink = grad_sink(n.in[0], fresh);
            if (fresh) {
                kern::scatter_add_rows<T>(g, B, rowelems, n.ints->data(), sink);
            } else {
                std::vector<T> dx(static_cast<size_t>(B * rowelems), T(0));
                kern::scatter_add_rows<T>(g, B, rowelems, n.ints->data(), dx.data());
                accumulate(n.in[0], dx.data(), B * rowelems);
            }
            break;
        }
        case Op::ChannelMix: {
            const int64_t B = n.ip[0], C = n.ip[1], HW = n.ip[2];
            std::vector<T> dh(static_cast<size_t>(B * C * HW)), dhp(static_cast<size_t>(B * C * HW));
            kern::channel_mix_backward<T>(g, n.bytes->data(), B, C, HW, dh.data(), dhp.data());
            if (input_needs(0)) accumulate(n.in[0], dh.data(), B * C * HW);
            if (input_needs(1)) accumulate(n.in[1], dhp.data(), B * C * HW);
            break;
        }
        case Op::Reshape: {
            if (!input_needs(0)) break;
            accumulate(n.in[0], g, gn);
            break;
        }
        case Op::Sum: {
            if (!input_needs(0)) break;
            const int64_t cnt = n.ip[0];
            std::vector<T> gi(static_cast<size_t>(cnt), g[0]);
            accumulate(n.in[0], gi.data(), cnt);
            break;
        }
        case Op::Mean: {
            if (!input_needs(0)) break;
            const int64_t cnt = n.ip[0];
            std::vector<T> gi(static_cast<size_t>(cnt), g[0] / static_cast<T>(cnt));
            accumulate(n.in[0], gi.data(), cnt);
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct OpCtx {
    Tape<T>* tape = nullptr;
    bool needs = false;
};

template <typename T>
OpCtx<T> op_ctx(std::initializer_list<const Tensor<T>*> inputs) {
    OpCtx<T> ctx;
    for (const auto* t : inputs) {
        if (!t->on_tape()) continue;
        if (ctx.tape && ctx.tape != t->tape())
            throw std::logic_error("op: inputs live on different tapes");
        ctx.tape = t->tape();
    }
    if (ctx.tape) {
        for (const auto* t : inputs)
            if (t->on_tape() && t->requires_grad()) ctx.needs = true;
    }
    return ctx;
}

template <typename T>
int32_t node_of(const Tensor<T>& t) {
    return t.on_tape() ? t.node() : -1;
}

template <typename T>
Tensor<T> attach(Tensor<T> out, const OpCtx<T>& ctx, TapeNode<T> node) {
    if (!ctx.tape) return out;
    node.out_shape = out.shape();
    node.needs_grad = ctx.needs;
    if (!ctx.needs) {
        node.saved.clear();
        node.ints.reset();
        node.bytes.reset();
    }
    const int32_t id = ctx.tape->record(std::move(node));
    return ctx.tape->adopt(out, id);
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::adopt(const Tensor<T>& value, int32_t id) {
    Tensor<T> t = value.detached();
    t.tape_ = this;
    t.node_ = id;
    return t;
}

template <typename T>
const detail::TapeNode<T>& Tape<T>::node_at(int32_t id) const {
    return nodes_.at(static_cast<size_t>(id));
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
    if (op == EwOp::Relu || op == EwOp::Exp || op == EwOp::Log || op == EwOp::Scale)
        throw std::logic_error("elementwise: kind takes a single tensor operand");
    check_same_shape("elementwise", a, b);
    auto ctx = op_ctx<T>({&a, &b});
    Tensor<T> out(a.shape());
    kern::ew_binary<T>(static_cast<kern::Binary>(op), a.numel(), a.data().data(), b.data().data(),
                       out.mutable_data().data());
    TapeNode<T> n;
    n.op = Op::EwTT;
    n.sub = static_cast<int>(op);
    n.in = {node_of(a), node_of(b), -1};
    if (op == EwOp::Mul || op == EwOp::Div) n.saved = {a.detached(), b.detached()};
    else n.saved = {Tensor<T>(), Tensor<T>()};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T scalar) {
    auto ctx = op_ctx<T>({&a});
    Tensor<T> out(a.shape());
    TapeNode<T> n;
    n.in = {node_of(a), -1, -1};
    switch (op) {
        case EwOp::Relu:
            kern::ew_unary<T>(kern::Unary::Relu, a.numel(), a.data().data(),
                              out.mutable_data().data());
            n.op = Op::Relu;
            n.saved = {a.detached()};
            break;
        case EwOp::Exp:
            kern::ew_unary<T>(kern::Unary::Exp, a.numel(), a.data().data(),
                              out.mutable_data().data());
            n.op = Op::Exp;
            n.saved = {out.detached()};
            break;
        case EwOp::Log:
            kern::ew_unary<T>(kern::Unary::Log, a.numel(), a.data().data(),
                              out.mutable_data().data());
            n.op = Op::Log;
            n.saved = {a.detached()};
            break;
        default: {
            const auto kind = op == EwOp::Scale ? kern::Binary::Mul : static_cast<kern::Binary>(op);
            kern::ew_binary_scalar<T>(kind, a.numel(), a.data().data(), scalar,
                                      out.mutable_data().data());
            n.op = Op::EwTS;
            n.sub = static_cast<int>(op);
            n.fp = scalar;
            break;
        }
    }
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) shape_fail("matmul", a.shape(), b.shape());
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto ctx = op_ctx<T>({&a, &b});
    const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor<T> out({M, N});
    kern::gemm_nn<T>(M, N, K, a.data().data(), b.data().data(), out.mutable_data().data(), false);
    TapeNode<T> n;
    n.op = Op::Matmul;
    n.in = {node_of(a), node_of(b), -1};
    n.saved = {a.detached(), b.detached()};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.rank() != 2 || w.rank() != 2) shape_fail("linear", x.shape(), w.shape());
    if (x.dim(1) != w.dim(0))
        throw ShapeError("linear: inner dimensions differ, " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    if (bias.numel() != w.dim(1)) shape_fail("linear bias", bias.shape(), w.shape());
    auto ctx = op_ctx<T>({&x, &w, &bias});
    const int64_t B = x.dim(0), K = x.dim(1), N = w.dim(1);
    Tensor<T> out({B, N});
    T* o = out.mutable_data().data();
    kern::gemm_nn<T>(B, N, K, x.data().data(), w.data().data(), o, false);
    const T* bv = bias.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < N; ++j) o[b * N + j] += bv[j];
    TapeNode<T> n;
    n.op = Op::Linear;
    n.in = {node_of(x), node_of(w), node_of(bias)};
    n.saved = {x.detached(), w.detached()};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad) {
    if (x.rank() != 4 || w.rank() != 4) shape_fail("conv2d", x.shape(), w.shape());
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input channels differ, " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d: padding must be >= 0");
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw ConfigError("conv2d: kernel exceeds padded input, kernel " + shape_str(w.shape()) +
                          " on input " + shape_str(x.shape()));
    if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
        throw ConfigError("conv2d: non-integral output size for input " + shape_str(x.shape()) +
                          ", kernel " + shape_str(w.shape()) + ", stride " +
                          std::to_string(stride) + ", pad " + std::to_string(pad));
    if (bias.numel() != 0 && bias.numel() != Cout) shape_fail("conv2d bias", bias.shape(), w.shape());
    const int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const int64_t OW = (W + 2 * pad - kw) / stride + 1;
    const int64_t K = Cin * kh * kw, P = OH * OW;

    auto ctx = op_ctx<T>({&x, &w, &bias});
    Tensor<T> cols({K, B * P});
    kern::im2col<T>(x.data().data(), B, Cin, H, W, kh, kw, stride, pad, OH, OW,
                    cols.mutable_data().data());
    std::vector<T> out2(static_cast<size_t>(Cout * B * P));
    kern::gemm_nn<T>(Cout, B * P, K, w.data().data(), cols.data().data(), out2.data(), false);
    Tensor<T> out({B, Cout, OH, OW});
    kern::cols_to_bchw<T>(out2.data(), B, Cout, P, bias.numel() ? bias.data().data() : nullptr,
                          out.mutable_data().data());
    TapeNode<T> n;
    n.op = Op::Conv2d;
    n.in = {node_of(x), node_of(w), node_of(bias)};
    n.saved = {cols.detached(), w.detached()};
    n.ip = {B, Cin, H, W, Cout, kh, kw, stride, pad, OH, OW};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int64_t wh, int64_t ww, int64_t stride) {
    if (x.rank() != 4) throw ShapeError("pool2d: expected rank-4 input, got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (wh < 1 || ww < 1 || stride < 1 || wh > H || ww > W)
        throw ConfigError("pool2d: invalid window " + std::to_string(wh) + "x" +
                          std::to_string(ww) + " for input " + shape_str(x.shape()));
    if ((H - wh) % stride != 0 || (W - ww) % stride != 0)
        throw ConfigError("pool2d: window/stride does not tile input " + shape_str(x.shape()));
    const int64_t OH = (H - wh) / stride + 1, OW = (W - ww) / stride + 1;
    auto ctx = op_ctx<T>({&x});
    Tensor<T> out({B, C, OH, OW});
    TapeNode<T> n;
    n.op = Op::Pool;
    n.sub = static_cast<int>(kind);
    n.in = {node_of(x), -1, -1};
    n.ip = {B, C, H, W, wh, ww, stride, OH, OW};
    if (kind == PoolKind::Max) {
        n.ints = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(B * C * OH * OW));
        kern::pool_max_forward<T>(x.data().data(), B, C, H, W, wh, ww, stride, OH, OW,
                                  out.mutable_data().data(), n.ints->data());
    } else {
        kern::pool_avg_forward<T>(x.data().data(), B, C, H, W, wh, ww, stride, OH, OW,
                                  out.mutable_data().data());
    }
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BnState<T>& state, T momentum, bool training, bool update_stats, T eps) {
    if (x.rank() != 4 && x.rank() != 2)
        throw ShapeError("batchnorm2d: expected rank-2 or rank-4 input, got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1);
    const int64_t HW = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("batchnorm2d: affine parameters do not match " + std::to_string(C) +
                         " channels");
    if (static_cast<int64_t>(state.running_mean.size()) != C)
        throw ShapeError("batchnorm2d: running stats sized " +
                         std::to_string(state.running_mean.size()) + ", expected " +
                         std::to_string(C));
    auto ctx = op_ctx<T>({&x, &gamma, &beta});
    Tensor<T> out(x.shape());
    TapeNode<T> n;
    n.in = {node_of(x), node_of(gamma), node_of(beta)};
    n.ip = {B, C, HW};
    n.fp = eps;
    if (training) {
        Tensor<T> xhat(x.shape());
        std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
        kern::bn_train_forward<T>(x.data().data(), B, C, HW, gamma.data().data(),
                                  beta.data().data(), eps, out.mutable_data().data(),
                                  xhat.mutable_data().data(), mean.data(), invstd.data());
        if (update_stats) {
            for (int64_t c = 0; c < C; ++c) {
                const T var = T(1) / (invstd[static_cast<size_t>(c)] * invstd[static_cast<size_t>(c)]) - eps;
                state.running_mean[static_cast<size_t>(c)] =
                    (T(1) - momentum) * state.running_mean[static_cast<size_t>(c)] +
                    momentum * mean[static_cast<size_t>(c)];
                state.running_var[static_cast<size_t>(c)] =
                    (T(1) - momentum) * state.running_var[static_cast<size_t>(c)] + momentum * var;
            }
        }
        n.op = Op::BnTrain;
        Tensor<T> invstd_t({C}, std::move(invstd));
        n.saved = {xhat.detached(), invstd_t.detached(), gamma.detached()};
    } else {
        const bool want_xhat = ctx.tape != nullptr && ctx.needs;
        Tensor<T> xhat(want_xhat ? x.shape() : Shape{0});
        Tensor<T> rmean({C}, std::vector<T>(state.running_mean));
        Tensor<T> rvar({C}, std::vector<T>(state.running_var));
        kern::bn_eval_forward<T>(x.data().data(), B, C, HW, gamma.data().data(),
                                 beta.data().data(), rmean.data().data(), rvar.data().data(), eps,
                                 out.mutable_data().data(),
                                 want_xhat ? xhat.mutable_data().data() : nullptr);
        n.op = Op::BnEval;
        n.saved = {xhat.detached(), gamma.detached(), rvar.detached()};
    }
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.rank() != 2) shape_fail("softmax_cross_entropy", logits.shape(), targets.shape());
    check_same_shape("softmax_cross_entropy", logits, targets);
    const int64_t B = logits.dim(0), N = logits.dim(1);
    const T* tv = targets.data().data();
    for (int64_t b = 0; b < B; ++b) {
        T s = T(0);
        for (int64_t j = 0; j < N; ++j) s += tv[b * N + j];
        if (std::abs(static_cast<double>(s) - 1.0) > 1e-6)
            throw std::invalid_argument("softmax_cross_entropy: target row " + std::to_string(b) +
                                        " sums to " + std::to_string(static_cast<double>(s)));
    }
    auto ctx = op_ctx<T>({&logits});
    Tensor<T> softmax({B, N});
    T loss_val = T(0);
    kern::softmax_ce_forward<T>(logits.data().data(), tv, B, N, softmax.mutable_data().data(),
                                &loss_val);
    Tensor<T> out({1}, {loss_val});
    TapeNode<T> n;
    n.op = Op::SoftmaxCE;
    n.in = {node_of(logits), -1, -1};
    n.saved = {softmax.detached(), targets.detached()};
    n.ip = {B, N};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> index_select_batch(const Tensor<T>& x, const std::vector<int32_t>& indices) {
    if (x.rank() < 1) throw ShapeError("index_select_batch: scalar input");
    const int64_t B = x.dim(0);
    if (static_cast<int64_t>(indices.size()) != B)
        throw std::invalid_argument("index_select_batch: " + std::to_string(indices.size()) +
                                    " indices for batch of " + std::to_string(B));
    for (const auto i : indices)
        if (i < 0 || i >= B)
            throw std::invalid_argument("index_select_batch: index " + std::to_string(i) +
                                        " out of range [0," + std::to_string(B) + ")");
    const int64_t rowelems = x.numel() / B;
    auto ctx = op_ctx<T>({&x});
    Tensor<T> out(x.shape());
    kern::gather_rows<T>(x.data().data(), B, rowelems, indices.data(), out.mutable_data().data());
    TapeNode<T> n;
    n.op = Op::IndexSelect;
    n.in = {node_of(x), -1, -1};
    n.ints = std::make_shared<std::vector<int32_t>>(indices);
    n.ip = {B, rowelems};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> channel_mix(const Tensor<T>& h, const Tensor<T>& hp, const std::vector<uint8_t>& mask) {
    check_same_shape("channel_mix", h, hp);
    if (h.rank() < 2) throw ShapeError("channel_mix: expected [B,C,...] input, got " + shape_str(h.shape()));
    const int64_t B = h.dim(0), C = h.dim(1);
    if (static_cast<int64_t>(mask.size()) != B * C)
        throw std::invalid_argument("channel_mix: mask has " + std::to_string(mask.size()) +
                                    " entries, expected " + std::to_string(B * C));
    const int64_t HW = h.numel() / (B * C);
    auto ctx = op_ctx<T>({&h, &hp});
    Tensor<T> out(h.shape());
    kern::channel_mix_forward<T>(h.data().data(), hp.data().data(), mask.data(), B, C, HW,
                                 out.mutable_data().data());
    TapeNode<T> n;
    n.op = Op::ChannelMix;
    n.in = {node_of(h), node_of(hp), -1};
    n.bytes = std::make_shared<std::vector<uint8_t>>(mask);
    n.ip = {B, C, HW};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        shape_fail("reshape", x.shape(), shape);
    auto ctx = op_ctx<T>({&x});
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    TapeNode<T> n;
    n.op = Op::Reshape;
    n.in = {node_of(x), -1, -1};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    auto ctx = op_ctx<T>({&x});
    Tensor<T> out({1}, {kern::reduce_sum(x.data().data(), x.numel())});
    TapeNode<T> n;
    n.op = Op::Sum;
    n.in = {node_of(x), -1, -1};
    n.ip = {x.numel()};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    auto ctx = op_ctx<T>({&x});
    Tensor<T> out({1}, {kern::reduce_sum(x.data().data(), x.numel()) / static_cast<T>(x.numel())});
    TapeNode<T> n;
    n.op = Op::Mean;
    n.in = {node_of(x), -1, -1};
    n.ip = {x.numel()};
    return attach(std::move(out), ctx, std::move(n));
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + shape_str(logits.shape()));
    const int64_t B = logits.dim(0), N = logits.dim(1);
    std::vector<T> out(static_cast<size_t>(B * N));
    const T* lv = logits.data().data();
    for (int64_t b = 0; b < B; ++b) {
        const T* row = lv + b * N;
        T mx = row[0];
        for (int64_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < N; ++j) {
            out[static_cast<size_t>(b * N + j)] = std::exp(row[j] - mx);
            denom += out[static_cast<size_t>(b * N + j)];
        }
        for (int64_t j = 0; j < N; ++j) out[static_cast<size_t>(b * N + j)] /= denom;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

#define CUMIX_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> elementwise<T>(EwOp, const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> elementwise<T>(EwOp, const Tensor<T>&, T);                                 \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t,  \
                                 int64_t);                                                        \
    template Tensor<T> pool2d<T>(const Tensor<T>&, PoolKind, int64_t, int64_t, int64_t);         \
    template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      BnState<T>&, T, bool, bool, T);                            \
    template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> index_select_batch<T>(const Tensor<T>&, const std::vector<int32_t>&);     \
    template Tensor<T> channel_mix<T>(const Tensor<T>&, const Tensor<T>&,                        \
                                      const std::vector<uint8_t>&);                              \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                      \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                \
    template std::vector<T> softmax_rows<T>(const Tensor<T>&);

CUMIX_INSTANTIATE_OPS(float)
CUMIX_INSTANTIATE_OPS(double)

#undef CUMIX_INSTANTIATE_OPS

}  // namespace cumix
