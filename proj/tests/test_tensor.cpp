#include <doctest.h>

#include <cstring>
#include <sstream>

#include "cumix/serialize.hpp"
#include "cumix/tensor.hpp"
#include "fd_checks.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace cumix;
using testutil::bit_equal;
using testutil::random_tensor;

TEST_CASE("elementwise basics") {
    TensorF a({2}, {1.0f, 2.0f});
    TensorF b({2}, {3.0f, 4.0f});
    auto sum = add(a, b);
    CHECK(sum.data()[0] == 4.0f);
    CHECK(sum.data()[1] == 6.0f);

    TensorF r({3}, {-1.0f, 0.0f, 2.0f});
    auto rl = relu(r);
    CHECK(rl.data()[0] == 0.0f);
    CHECK(rl.data()[1] == 0.0f);
    CHECK(rl.data()[2] == 2.0f);

    auto zero = mul(b, 0.0f);
    for (const auto v : zero.data()) CHECK(v == 0.0f);

    TensorF c({3});
    CHECK_THROWS_WITH_AS(add(a, c), doctest::Contains("[2]"), ShapeError);
    CHECK_THROWS_WITH_AS(add(a, c), doctest::Contains("[3]"), ShapeError);
}

TEST_CASE("matmul examples and errors") {
    TensorF a({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    TensorF eye({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    CHECK(bit_equal(matmul(a, eye), a));

    TensorF ones({2, 1}, {1.0f, 1.0f});
    auto rowsums = matmul(a, ones);
    CHECK(rowsums.data()[0] == 3.0f);
    CHECK(rowsums.data()[1] == 7.0f);

    TensorF bad({3, 2});
    CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(42);
    const std::vector<fd_checks::TensorD> in{random_tensor<double>({3, 4}, rng),
                                             random_tensor<double>({4, 2}, rng)};
    const double err = fd_checks::check_op(
        [](const std::vector<fd_checks::TensorD>& v) { return matmul(v[0], v[1]); }, in, rng);
    CHECK(err < 1e-4);
}

TEST_CASE("conv2d identity and constant field") {
    Rng rng(7);
    TensorF x = random_tensor<float>({2, 1, 4, 4}, rng);
    TensorF k1({1, 1, 1, 1}, {1.0f});
    CHECK(bit_equal(conv2d(x, k1, TensorF(), 1, 0), x));

    TensorF ones_in = TensorF::full({1, 1, 5, 5}, 1.0f);
    TensorF ones_k = TensorF::full({1, 1, 3, 3}, 1.0f);
    auto out = conv2d(ones_in, ones_k, TensorF(), 1, 0);
    CHECK(out.shape() == Shape{1, 1, 3, 3});
    for (const auto v : out.data()) CHECK(v == 9.0f);
}

TEST_CASE("conv2d matches the direct-loop reference") {
    Rng rng(11);
    const int64_t B = 2, Cin = 3, H = 6, W = 5, Cout = 4, kh = 3, kw = 3, stride = 1, pad = 1;
    auto x = random_tensor<double>({B, Cin, H, W}, rng);
    auto w = random_tensor<double>({Cout, Cin, kh, kw}, rng);
    auto bias = random_tensor<double>({Cout}, rng);
    auto out = conv2d(x, w, bias, stride, pad);
    const auto ref = oracles::conv2d(
        std::vector<double>(x.data().begin(), x.data().end()),
        std::vector<double>(w.data().begin(), w.data().end()),
        std::vector<double>(bias.data().begin(), bias.data().end()), B, Cin, H, W, Cout, kh, kw,
        stride, pad);
    REQUIRE(out.numel() == static_cast<int64_t>(ref.size()));
    for (size_t i = 0; i < ref.size(); ++i)
        CHECK(std::abs(out.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("conv2d rejects non-integral output size") {
    TensorF x({1, 1, 5, 5});
    TensorF w({1, 1, 2, 2});
    CHECK_THROWS_WITH_AS(conv2d(x, w, TensorF(), 2, 0), doctest::Contains("non-integral"),
                         ConfigError);
}

TEST_CASE("conv2d kernel gradient vs finite differences") {
    Rng rng(13);
    const std::vector<fd_checks::TensorD> in{random_tensor<double>({2, 2, 4, 4}, rng),
                                             random_tensor<double>({3, 2, 3, 3}, rng),
                                             random_tensor<double>({3}, rng)};
    const double err = fd_checks::check_op(
        [](const std::vector<fd_checks::TensorD>& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
        in, rng);
    CHECK(err < 1e-4);
}

TEST_CASE("softmax cross entropy examples") {
    // Dominant correct logit: loss approaches zero.
    TensorF logits({1, 3}, {30.0f, 0.0f, 0.0f});
    TensorF onehot({1, 3}, {1.0f, 0.0f, 0.0f});
    CHECK(softmax_cross_entropy(logits, onehot).item() < 1e-6f);

    // Uniform target and logits: entropy of the uniform distribution.
    const int64_t n = 5;
    TensorF u({2, n}, std::vector<float>(2 * n, 1.0f / n));
    TensorF z({2, n}, std::vector<float>(2 * n, 0.7f));
    CHECK(softmax_cross_entropy(z, u).item() == doctest::Approx(std::log(static_cast<float>(n))));

    TensorF bad({1, 3}, {0.5f, 0.2f, 0.8f});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), std::invalid_argument);
}

TEST_CASE("softmax cross entropy is linear in the targets") {
    Rng rng(3);
    auto logits = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
    auto make_onehot = [&](const std::vector<int>& idx) {
        TensorD t({4, 6});
        auto d = t.mutable_data();
        for (int i = 0; i < 4; ++i) d[static_cast<size_t>(i * 6 + idx[static_cast<size_t>(i)])] = 1.0;
        return t;
    };
    const auto y = make_onehot({0, 2, 4, 1});
    const auto yp = make_onehot({3, 3, 0, 5});
    const double lambda = 0.3;
    TensorD ymix({4, 6});
    for (int64_t i = 0; i < ymix.numel(); ++i)
        ymix.mutable_data()[static_cast<size_t>(i)] =
            lambda * y.data()[static_cast<size_t>(i)] + (1 - lambda) * yp.data()[static_cast<size_t>(i)];
    const double mixed = softmax_cross_entropy(logits, ymix).item();
    const double split = lambda * softmax_cross_entropy(logits, y).item() +
                         (1 - lambda) * softmax_cross_entropy(logits, yp).item();
    CHECK(mixed == doctest::Approx(split).epsilon(1e-12));
}

TEST_CASE("index_select_batch forward and scatter-add backward") {
    TensorF x({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(bit_equal(index_select_batch(x, {0, 1}), x));

    auto swapped = index_select_batch(x, {1, 0});
    CHECK(swapped.data()[0] == 3.0f);
    CHECK(swapped.data()[2] == 1.0f);

    // Row referenced twice accumulates both contributions.
    Tape<float> tape;
    TensorF src({2, 1}, {5.0f, 7.0f});
    auto leaf = tape.leaf(src, true);
    auto picked = index_select_batch(leaf, {1, 1});
    tape.backward(sum(picked));
    const auto g = tape.grad(leaf);
    CHECK(g[0] == 0.0f);
    CHECK(g[1] == 2.0f);

    CHECK_THROWS_AS(index_select_batch(x, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(index_select_batch(x, {0}), std::invalid_argument);
}

TEST_CASE("index_select_batch inverse permutation is the identity") {
    Rng rng(19);
    auto x = random_tensor<float>({6, 3, 2, 2}, rng);
    const auto perm = rng.permutation(6);
    std::vector<int32_t> inv(6);
    for (int32_t i = 0; i < 6; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;

    Tape<float> tape;
    auto leaf = tape.leaf(x, true);
    auto roundtrip = index_select_batch(index_select_batch(leaf, perm), inv);
    CHECK(bit_equal(roundtrip.detached(), x));

    auto weights = random_tensor<float>(x.shape(), rng);
    tape.backward(sum(mul(roundtrip, weights)));
    const auto g = tape.grad(leaf);
    for (size_t i = 0; i < g.size(); ++i) CHECK(g[i] == weights.data()[i]);
}

TEST_CASE("backward basics and error paths") {
    Tape<float> tape;
    TensorF x({3}, {1.0f, 2.0f, 3.0f});
    auto leaf = tape.leaf(x, true);
    auto loss = sum(leaf);
    tape.backward(loss);
    for (const auto v : tape.grad(leaf)) CHECK(v == 1.0f);

    // d(x*x)/dx = 2x
    Tape<float> tape2;
    TensorF x2({1}, {3.0f});
    auto leaf2 = tape2.leaf(x2, true);
    auto sq = mul(leaf2, leaf2);
    tape2.backward(sq);
    CHECK(tape2.grad(leaf2)[0] == 6.0f);

    CHECK_THROWS_WITH_AS(tape2.backward(sq), doctest::Contains("already run"), std::logic_error);

    Tape<float> tape3;
    auto leaf3 = tape3.leaf(x, true);
    CHECK_THROWS_AS(tape3.backward(leaf3), std::logic_error);       // non-scalar
    CHECK_THROWS_AS(tape3.backward(sum(x)), std::logic_error);      // detached loss
}

TEST_CASE("requires_grad=false leaves never accumulate gradient") {
    Tape<float> tape;
    TensorF x({2}, {1.0f, 2.0f});
    auto frozen = tape.leaf(x, false);
    auto live = tape.leaf(x, true);
    tape.backward(sum(mul(frozen, live)));
    CHECK(tape.has_grad(live));
    CHECK_FALSE(tape.has_grad(frozen));
    CHECK_THROWS_AS(tape.grad(frozen), std::logic_error);
}

TEST_CASE("tape replay yields identical gradients") {
    Rng rng(23);
    auto x = random_tensor<float>({4, 4}, rng);
    auto w = random_tensor<float>({4, 3}, rng);

    Tape<float> tape;
    auto xl = tape.leaf(x, true);
    auto wl = tape.leaf(w, true);
    auto loss = mean(relu(matmul(xl, wl)));
    tape.backward(loss);
    const std::vector<float> g1(tape.grad(wl).begin(), tape.grad(wl).end());
    tape.zero_grad();
    tape.backward(loss);
    const std::vector<float> g2(tape.grad(wl).begin(), tape.grad(wl).end());
    CHECK(g1 == g2);

    // A rebuilt tape reproduces the same gradients as well.
    Tape<float> tape2;
    auto xl2 = tape2.leaf(x, true);
    auto wl2 = tape2.leaf(w, true);
    tape2.backward(mean(relu(matmul(xl2, wl2))));
    const std::vector<float> g3(tape2.grad(wl2).begin(), tape2.grad(wl2).end());
    CHECK(g1 == g3);
}

TEST_CASE("forward determinism across repeated evaluation") {
    Rng rng(29);
    auto x = random_tensor<float>({2, 3, 6, 6}, rng);
    auto w = random_tensor<float>({4, 3, 3, 3}, rng);
    auto b = random_tensor<float>({4}, rng);
    auto first = pool2d(relu(conv2d(x, w, b, 1, 1)), PoolKind::Max, 2, 2, 2);
    auto second = pool2d(relu(conv2d(x, w, b, 1, 1)), PoolKind::Max, 2, 2, 2);
    CHECK(bit_equal(first, second));
}

TEST_CASE("parallel and serial lanes produce identical results") {
    Rng rng(31);
    auto x = random_tensor<float>({3, 4, 8, 8}, rng);
    auto w = random_tensor<float>({6, 4, 3, 3}, rng);
    auto b = random_tensor<float>({6}, rng);
    auto gamma = TensorF::full({6}, 1.0f);
    auto beta = TensorF({6});

    auto run_chain = [&]() {
        BnState<float> state(6);
        auto y = conv2d(x, w, b, 1, 1);
        y = batchnorm2d(y, gamma, beta, state, 0.1f, true, false);
        return pool2d(relu(y), PoolKind::Max, 2, 2, 2);
    };
    set_num_threads(1);
    auto serial = run_chain();
    set_num_threads(2);
    auto parallel = run_chain();
    set_num_threads(0);
    CHECK(bit_equal(serial, parallel));
}

TEST_CASE("gradient checks per primitive (randomized shapes)") {
    Rng rng(2024);
    for (auto& [name, trial] : fd_checks::primitive_trials()) {
        CAPTURE(name);
        double worst = 0.0;
        for (int t = 0; t < 12; ++t) worst = std::max(worst, trial(rng));
        CHECK_MESSAGE(worst < 1e-6, name, " max rel err ", worst);
    }
}

TEST_CASE("two-block network gradients match finite differences") {
    Rng rng(77);
    CHECK(fd_checks::check_two_block_network(rng) < 1e-5);
}

TEST_CASE("tensor serialization round-trips bit-exactly") {
    Rng rng(37);
    auto t = random_tensor<float>({2, 3, 4}, rng);
    std::stringstream ss;
    io::save_tensor(ss, t);
    auto back = io::load_tensor<float>(ss);
    CHECK(bit_equal(t, back));

    // Header layout: magic, dtype code, rank, little-endian u64 dims.
    const std::string blob = ss.str();
    CHECK(blob.substr(0, 7) == "CUMTEN1");
    CHECK(blob[7] == 1);  // f32
    CHECK(blob[8] == 3);  // rank
    uint64_t d0 = 0;
    std::memcpy(&d0, blob.data() + 9, 8);
    CHECK(d0 == 2);

    std::stringstream wrong(blob);
    CHECK_THROWS_AS(io::load_tensor<double>(wrong), IoError);
}

TEST_CASE("mutable_data refuses tensors attached to a tape") {
    Tape<float> tape;
    TensorF x({2}, {1.0f, 2.0f});
    auto leaf = tape.leaf(x, true);
    CHECK_THROWS_AS(leaf.mutable_data(), std::logic_error);
}
