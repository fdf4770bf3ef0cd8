#pragma once

// Finite-difference gradient checks for every tensor primitive and for a
// small end-to-end network, run in 64-bit mode with step 1e-3. Shared by the
// unit tests and the acceptance suite.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cumix/nn.hpp"
#include "cumix/tensor.hpp"
#include "testutil.hpp"

namespace fd_checks {

using cumix::BnState;
using cumix::PoolKind;
using cumix::Rng;
using cumix::Shape;
using cumix::Tape;
using cumix::Tensor;
using TensorD = cumix::Tensor<double>;

// Runs the op on the given (possibly tape-attached) inputs.
using OpRunner = std::function<TensorD(const std::vector<TensorD>&)>;

inline double check_op(const OpRunner& run, const std::vector<TensorD>& inputs, Rng& rng,
                       double h = 1e-3) {
    // Weighted sum makes any output shape a scalar loss.
    TensorD probe = run(inputs);
    TensorD weights = testutil::random_tensor<double>(probe.shape(), rng);

    Tape<double> tape;
    std::vector<TensorD> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in, true));
    TensorD loss = cumix::sum(cumix::mul(run(leaves), weights));
    tape.backward(loss);

    // Flat view over all inputs for the numeric gradient.
    std::vector<double> flat;
    std::vector<size_t> offsets{0};
    for (const auto& in : inputs) {
        flat.insert(flat.end(), in.data().begin(), in.data().end());
        offsets.push_back(flat.size());
    }
    auto f = [&](const std::vector<double>& x) {
        std::vector<TensorD> rebuilt;
        for (size_t i = 0; i < inputs.size(); ++i)
            rebuilt.emplace_back(inputs[i].shape(),
                                 std::vector<double>(x.begin() + static_cast<int64_t>(offsets[i]),
                                                     x.begin() + static_cast<int64_t>(offsets[i + 1])));
        const TensorD out = run(rebuilt);
        double acc = 0.0;
        for (int64_t j = 0; j < out.numel(); ++j)
            acc += out.data()[static_cast<size_t>(j)] * weights.data()[static_cast<size_t>(j)];
        return acc;
    };
    const auto fd = testutil::finite_difference(f, flat, h);

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const auto g = tape.grad(leaves[i]);
        for (size_t j = 0; j < g.size(); ++j)
            worst = std::max(worst, testutil::rel_err(g[j], fd[offsets[i] + j]));
    }
    return worst;
}

namespace detail {

inline TensorD away_from_zero(TensorD t, double margin = 0.1) {
    for (auto& v : t.mutable_data()) v += v >= 0.0 ? margin : -margin;
    return t;
}

// Clear of the log/div singularities, so the 1e-3 central difference keeps
// its truncation error below the 1e-6 gate.
inline TensorD positive(Shape shape, Rng& rng) {
    return testutil::random_tensor<double>(std::move(shape), rng, 0.8, 3.0);
}

inline TensorD signed_away(Shape shape, Rng& rng) {
    TensorD t(std::move(shape));
    for (auto& v : t.mutable_data())
        v = rng.uniform(1.2, 3.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return t;
}

inline TensorD prob_rows(int64_t b, int64_t n, Rng& rng) {
    TensorD t({b, n});
    auto d = t.mutable_data();
    for (int64_t i = 0; i < b; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            d[static_cast<size_t>(i * n + j)] = rng.uniform(0.05, 1.0);
            s += d[static_cast<size_t>(i * n + j)];
        }
        for (int64_t j = 0; j < n; ++j) d[static_cast<size_t>(i * n + j)] /= s;
    }
    return t;
}

// Max-pool inputs whose in-window values stay separated, so the 1e-3 step
// cannot flip an argmax.
inline TensorD separated_pool_input(Shape shape, Rng& rng) {
    for (;;) {
        TensorD t = testutil::random_tensor<double>(shape, rng, -2.0, 2.0);
        const int64_t hw = shape[2] * shape[3];
        bool ok = true;
        const auto* v = t.data().data();
        for (int64_t p = 0; p < shape[0] * shape[1] && ok; ++p)
            for (int64_t i = 0; i < hw && ok; ++i)
                for (int64_t j = i + 1; j < hw && ok; ++j)
                    if (std::abs(v[p * hw + i] - v[p * hw + j]) < 5e-3) ok = false;
        if (ok) return t;
    }
}

}  // namespace detail

// name -> one randomized trial returning the max relative error.
inline std::map<std::string, std::function<double(Rng&)>> primitive_trials() {
    using testutil::random_tensor;
    std::map<std::string, std::function<double(Rng&)>> trials;

    for (const auto op : {cumix::EwOp::Add, cumix::EwOp::Sub, cumix::EwOp::Mul}) {
        const std::string name = op == cumix::EwOp::Add   ? "add"
                                 : op == cumix::EwOp::Sub ? "sub"
                                                          : "mul";
        trials[name] = [op](Rng& rng) {
            const Shape s = testutil::random_shape(rng);
            const std::vector<TensorD> in{random_tensor<double>(s, rng),
                                          random_tensor<double>(s, rng)};
            return check_op(
                [op](const std::vector<TensorD>& v) { return cumix::elementwise(op, v[0], v[1]); },
                in, rng);
        };
    }
    trials["div"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const std::vector<TensorD> in{random_tensor<double>(s, rng), detail::signed_away(s, rng)};
        return check_op(
            [](const std::vector<TensorD>& v) { return cumix::div(v[0], v[1]); }, in, rng);
    };
    trials["scalar_ops"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const double c = rng.uniform(0.5, 2.0);
        const std::vector<TensorD> in{random_tensor<double>(s, rng)};
        double worst = 0.0;
        for (const auto op :
             {cumix::EwOp::Add, cumix::EwOp::Sub, cumix::EwOp::Mul, cumix::EwOp::Div,
              cumix::EwOp::Scale}) {
            worst = std::max(
                worst, check_op([op, c](const std::vector<TensorD>& v) {
                    return cumix::elementwise(op, v[0], c);
                }, in, rng));
        }
        return worst;
    };
    trials["relu"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const std::vector<TensorD> in{detail::away_from_zero(random_tensor<double>(s, rng))};
        return check_op([](const std::vector<TensorD>& v) { return cumix::relu(v[0]); }, in, rng);
    };
    trials["exp"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const std::vector<TensorD> in{random_tensor<double>(s, rng, -1.0, 1.0)};
        return check_op([](const std::vector<TensorD>& v) { return cumix::exp(v[0]); }, in, rng);
    };
    trials["log"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const std::vector<TensorD> in{detail::positive(s, rng)};
        return check_op([](const std::vector<TensorD>& v) { return cumix::log(v[0]); }, in, rng);
    };
    trials["matmul"] = [](Rng& rng) {
        const int64_t m = 1 + rng.uniform_int(4), k = 1 + rng.uniform_int(4),
                      n = 1 + rng.uniform_int(4);
        const std::vector<TensorD> in{random_tensor<double>({m, k}, rng),
                                      random_tensor<double>({k, n}, rng)};
        return check_op([](const std::vector<TensorD>& v) { return cumix::matmul(v[0], v[1]); },
                        in, rng);
    };
    trials["linear"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(4), k = 1 + rng.uniform_int(4),
                      n = 1 + rng.uniform_int(4);
        const std::vector<TensorD> in{random_tensor<double>({b, k}, rng),
                                      random_tensor<double>({k, n}, rng),
                                      random_tensor<double>({n}, rng)};
        return check_op(
            [](const std::vector<TensorD>& v) { return cumix::linear(v[0], v[1], v[2]); }, in,
            rng);
    };
    trials["conv2d"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(2), cin = 1 + rng.uniform_int(3),
                      cout = 1 + rng.uniform_int(3);
        const int64_t k = 1 + 2 * rng.uniform_int(2);  // 1 or 3
        const int64_t h = k + rng.uniform_int(3), w = k + rng.uniform_int(3);
        const std::vector<TensorD> in{random_tensor<double>({b, cin, h, w}, rng),
                                      random_tensor<double>({cout, cin, k, k}, rng),
                                      random_tensor<double>({cout}, rng)};
        return check_op(
            [](const std::vector<TensorD>& v) { return cumix::conv2d(v[0], v[1], v[2], 1, 0); },
            in, rng);
    };
    trials["pool_max"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(2), c = 1 + rng.uniform_int(2);
        const std::vector<TensorD> in{detail::separated_pool_input({b, c, 4, 4}, rng)};
        return check_op(
            [](const std::vector<TensorD>& v) { return cumix::pool2d(v[0], PoolKind::Max, 2, 2, 2); },
            in, rng);
    };
    trials["pool_avg"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(2), c = 1 + rng.uniform_int(2);
        const std::vector<TensorD> in{random_tensor<double>({b, c, 4, 4}, rng)};
        return check_op(
            [](const std::vector<TensorD>& v) { return cumix::pool2d(v[0], PoolKind::Avg, 2, 2, 2); },
            in, rng);
    };
    trials["batchnorm_train"] = [](Rng& rng) {
        const int64_t b = 2 + rng.uniform_int(2), c = 1 + rng.uniform_int(3);
        const std::vector<TensorD> in{random_tensor<double>({b, c, 2, 2}, rng, -3.0, 3.0),
                                      detail::positive({c}, rng),
                                      random_tensor<double>({c}, rng)};
        return check_op(
            [c](const std::vector<TensorD>& v) {
                BnState<double> state(c);
                return cumix::batchnorm2d<double>(v[0], v[1], v[2], state, 0.1, true, false);
            },
            in, rng);
    };
    trials["batchnorm_eval"] = [](Rng& rng) {
        const int64_t b = 2 + rng.uniform_int(2), c = 1 + rng.uniform_int(3);
        BnState<double> state(c);
        for (auto& v : state.running_mean) v = rng.uniform(-0.5, 0.5);
        for (auto& v : state.running_var) v = rng.uniform(0.5, 2.0);
        const std::vector<TensorD> in{random_tensor<double>({b, c, 2, 2}, rng),
                                      detail::positive({c}, rng),
                                      random_tensor<double>({c}, rng)};
        return check_op(
            [&state](const std::vector<TensorD>& v) {
                BnState<double> local = state;
                return cumix::batchnorm2d<double>(v[0], v[1], v[2], local, 0.1, false, false);
            },
            in, rng);
    };
    trials["softmax_ce"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(4), n = 2 + rng.uniform_int(4);
        const TensorD targets = detail::prob_rows(b, n, rng);
        const std::vector<TensorD> in{random_tensor<double>({b, n}, rng, -2.0, 2.0)};
        return check_op(
            [targets](const std::vector<TensorD>& v) {
                return cumix::softmax_cross_entropy(v[0], targets);
            },
            in, rng);
    };
    trials["index_select"] = [](Rng& rng) {
        const int64_t b = 2 + rng.uniform_int(4), d = 1 + rng.uniform_int(4);
        std::vector<int32_t> idx(static_cast<size_t>(b));
        for (auto& i : idx) i = static_cast<int32_t>(rng.uniform_int(b));  // repeats allowed
        const std::vector<TensorD> in{random_tensor<double>({b, d}, rng)};
        return check_op(
            [idx](const std::vector<TensorD>& v) { return cumix::index_select_batch(v[0], idx); },
            in, rng);
    };
    trials["channel_mix"] = [](Rng& rng) {
        const int64_t b = 1 + rng.uniform_int(3), c = 1 + rng.uniform_int(4);
        std::vector<uint8_t> mask(static_cast<size_t>(b * c));
        for (auto& m : mask) m = rng.uniform() < 0.5 ? 1 : 0;
        const std::vector<TensorD> in{random_tensor<double>({b, c, 2, 2}, rng),
                                      random_tensor<double>({b, c, 2, 2}, rng)};
        return check_op(
            [mask](const std::vector<TensorD>& v) { return cumix::channel_mix(v[0], v[1], mask); },
            in, rng);
    };
    trials["reshape_sum_mean"] = [](Rng& rng) {
        const Shape s = testutil::random_shape(rng);
        const std::vector<TensorD> in{random_tensor<double>(s, rng)};
        const int64_t n = cumix::numel_of(s);
        double worst = check_op(
            [n](const std::vector<TensorD>& v) { return cumix::reshape(v[0], {n}); }, in, rng);
        worst = std::max(worst, check_op([](const std::vector<TensorD>& v) {
                             return cumix::sum(v[0]);
                         }, in, rng));
        worst = std::max(worst, check_op([](const std::vector<TensorD>& v) {
                             return cumix::mean(v[0]);
                         }, in, rng));
        return worst;
    };
    return trials;
}

// End-to-end: finite differences over every parameter of a two-block network
// (conv+bn+relu+pool twice, then the classifier head) under soft-label loss.
inline double check_two_block_network(Rng& rng, double h = 1e-3) {
    cumix::nn::NetworkSpec spec;
    spec.name = "fd-2block";
    spec.in_channels = 3;
    spec.num_classes = 4;
    for (const int64_t ch : {6, 10}) {
        cumix::nn::BlockSpec b;
        b.out_channels = ch;
        b.kernel = 3;
        b.stride = 1;
        b.pad = 1;
        b.norm = true;
        b.act = true;
        b.pool = 2;
        spec.blocks.push_back(b);
    }
    auto net = cumix::nn::build<double>(spec, rng.next_u64());
    const TensorD x = testutil::random_tensor<double>({3, 3, 8, 8}, rng, 0.0, 1.0);
    const TensorD y = detail::prob_rows(3, 4, rng);

    auto loss_value = [&]() {
        cumix::nn::Pass<double> pass(net, nullptr, true, false, false);
        return cumix::softmax_cross_entropy(pass.forward(x), y).item();
    };

    Tape<double> tape;
    cumix::nn::Pass<double> pass(net, &tape, true, false, true);
    TensorD loss = cumix::softmax_cross_entropy(pass.forward(x), y);
    tape.backward(loss);

    double worst = 0.0;
    auto params = net.params();
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto g = tape.grad(pass.param_leaf(pi));
        auto pd = params[pi].tensor->mutable_data();
        for (size_t j = 0; j < pd.size(); ++j) {
            const double p0 = pd[j];
            pd[j] = p0 + h;
            const double fp = loss_value();
            pd[j] = p0 - h;
            const double fm = loss_value();
            pd[j] = p0;
            worst = std::max(worst, testutil::rel_err(g[j], (fp - fm) / (2.0 * h)));
        }
    }
    return worst;
}

}  // namespace fd_checks
