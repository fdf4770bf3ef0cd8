#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cumix/mix.hpp"
#include "cumix/nn.hpp"
#include "fd_checks.hpp"
#include "testutil.hpp"

using namespace cumix;
using nn::Network;
using nn::NetworkSpec;
using nn::Pass;
using testutil::bit_equal;
using testutil::random_tensor;

namespace {

NetworkSpec small_spec(int64_t classes = 4) {
    NetworkSpec spec;
    spec.name = "small-2";
    spec.num_classes = classes;
    for (const int64_t ch : {6, 10}) {
        nn::BlockSpec b;
        b.out_channels = ch;
        b.pool = 2;
        spec.blocks.push_back(b);
    }
    return spec;
}

}  // namespace

TEST_CASE("build is deterministic per seed") {
    auto a = nn::build<float>(NetworkSpec::tiny4(8), 5);
    auto b = nn::build<float>(NetworkSpec::tiny4(8), 5);
    auto c = nn::build<float>(NetworkSpec::tiny4(8), 6);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_equal = all_equal && bit_equal(*pa[i].tensor, *pb[i].tensor);
        any_diff = any_diff || !bit_equal(*pa[i].tensor, *pc[i].tensor);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("tiny-4 geometry: boundaries, k=2 shape, latent width") {
    auto net = nn::build<float>(NetworkSpec::tiny4(8), 1);
    CHECK(net.num_boundaries() == 6);  // K = {0..5}, including the input
    CHECK(net.latent_dim() == 128);

    Rng rng(3);
    auto x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0, 1.0);
    Pass<float> pass(net, nullptr, false, false, false);
    auto fm = pass.forward_to(x, 2);
    CHECK(fm.values.shape() == Shape{2, 32, 8, 8});
    CHECK(net.boundary_shape(2, 2, 32, 32) == Shape{2, 32, 8, 8});
    for (int64_t k = 0; k <= net.num_blocks(); ++k)
        CHECK(net.boundary_shape(k, 2, 32, 32) == pass.forward_to(x, k).values.shape());
}

TEST_CASE("single-block specs are rejected") {
    NetworkSpec spec;
    spec.num_classes = 4;
    nn::BlockSpec b;
    b.out_channels = 8;
    spec.blocks.push_back(b);
    CHECK_THROWS_WITH_AS(nn::build<float>(spec, 1), doctest::Contains("2 blocks"), ConfigError);
}

TEST_CASE("inconsistent channel chain is rejected") {
    auto spec = small_spec();
    spec.blocks[1].in_channels = 7;  // chain gives 6
    CHECK_THROWS_WITH_AS(nn::build<float>(spec, 1), doctest::Contains("channel chain"),
                         ConfigError);
}

TEST_CASE("split consistency: forward equals forward_from(forward_to) bit-exactly") {
    auto net = nn::build<float>(NetworkSpec::tiny4(8), 11);
    Rng rng(12);
    auto x = random_tensor<float>({3, 3, 32, 32}, rng, 0.0, 1.0);

    for (const bool training : {false, true}) {
        Pass<float> full(net, nullptr, training, false, false);
        auto expect = full.forward(x);
        for (int64_t k = 0; k <= net.num_blocks(); ++k) {
            Pass<float> split(net, nullptr, training, false, false);
            auto got = split.forward_from(split.forward_to(x, k));
            CHECK_MESSAGE(bit_equal(expect, got), "boundary ", k, " training=", training);
        }
    }
}

TEST_CASE("forward_to boundary checks") {
    auto net = nn::build<float>(small_spec(), 2);
    Rng rng(5);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng, 0.0, 1.0);
    Pass<float> pass(net, nullptr, false, false, false);
    CHECK(bit_equal(pass.forward_to(x, 0).values, x));  // k=0 is the input
    CHECK_THROWS_AS(pass.forward_to(x, 3), ConfigError);
    CHECK_THROWS_AS(pass.forward_to(x, -1), ConfigError);
}

TEST_CASE("forward_from at the last boundary applies only the head") {
    auto net = nn::build<float>(small_spec(), 2);
    Rng rng(6);
    auto h = random_tensor<float>({2, 10, 2, 2}, rng);
    Pass<float> pass(net, nullptr, false, false, false);
    auto logits = pass.forward_from({h, net.num_blocks()});
    // Same thing by hand: global average pool then the fc layer.
    auto pooled = reshape(pool2d(h, PoolKind::Avg, 2, 2, 1), {2, 10});
    auto expect = linear(pooled, net.fc_w, net.fc_b);
    CHECK(bit_equal(logits, expect));

    // Zero feature map: logits collapse to the classifier bias pattern.
    TensorF zeros({2, 10, 2, 2});
    auto bias_logits = pass.forward_from({zeros, net.num_blocks()});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(bias_logits.data()[static_cast<size_t>(i * 4 + j)] ==
                  net.fc_b.data()[static_cast<size_t>(j)]);

    TensorF wrong({2, 7, 2, 2});
    CHECK_THROWS_AS(pass.forward_from({wrong, net.num_blocks()}), ShapeError);
}

TEST_CASE("latent feeds the classifier head exactly") {
    auto net = nn::build<float>(NetworkSpec::tiny4(8), 21);
    Rng rng(22);
    auto x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0, 1.0);
    auto z = nn::eval_latent(net, x);
    CHECK(z.shape() == Shape{2, 128});
    Pass<float> pass(net, nullptr, false, false, false);
    CHECK(bit_equal(pass.head(z), nn::eval_logits(net, x)));

    // Constant-zero input is deterministic.
    TensorF zeros({1, 3, 32, 32});
    CHECK(bit_equal(nn::eval_latent(net, zeros), nn::eval_latent(net, zeros)));
}

TEST_CASE("eval-mode purity: repeated forwards are bit-identical") {
    auto net = nn::build<float>(NetworkSpec::tiny4(8), 31);
    Rng rng(32);
    auto x = random_tensor<float>({4, 3, 32, 32}, rng, 0.0, 1.0);
    // Move running stats off their initial values first.
    Pass<float> warm(net, nullptr, true, true, false);
    (void)warm.forward(x);
    auto r1 = nn::eval_logits(net, x);
    auto r2 = nn::eval_logits(net, x);
    CHECK(bit_equal(r1, r2));
}

TEST_CASE("training forwards update running statistics, eval does not") {
    auto net = nn::build<float>(small_spec(), 41);
    Rng rng(42);
    auto x = random_tensor<float>({4, 3, 8, 8}, rng, 0.0, 1.0);
    const auto before = net.blocks[0].bn->state.running_mean;
    (void)nn::eval_logits(net, x);
    CHECK(net.blocks[0].bn->state.running_mean == before);
    Pass<float> train_pass(net, nullptr, true, true, false);
    (void)train_pass.forward(x);
    CHECK(net.blocks[0].bn->state.running_mean != before);
}

TEST_CASE("tiny-4 parameter count matches the frozen closed-form sum") {
    auto net = nn::build<float>(NetworkSpec::tiny4(8), 1);
    // conv (Cout*Cin*9 + Cout) + bn (2*Cout) per block, then the 128->8 head.
    CHECK(net.param_count() == 246792);
}

TEST_CASE("residual blocks build a projection when shapes change") {
    auto spec = small_spec();
    spec.blocks[1].residual = true;  // 6 -> 10 channels needs a projection
    auto net = nn::build<float>(spec, 51);
    REQUIRE(net.blocks[1].proj.has_value());
    Rng rng(52);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng, 0.0, 1.0);
    auto logits = nn::eval_logits(net, x);
    CHECK(logits.shape() == Shape{2, 4});
    // Split consistency holds with the residual path too.
    Pass<float> split(net, nullptr, false, false, false);
    CHECK(bit_equal(logits, split.forward_from(split.forward_to(x, 1))));
}

TEST_CASE("gradients reach both source and shuffled rows through a mixed map") {
    // Block 1 (the part behind the mix point) is kept free of relu/pool
    // kinks so the finite-difference oracle is valid everywhere.
    auto spec = small_spec();
    spec.blocks[1].act = false;
    spec.blocks[1].pool = 1;
    auto net = nn::build<double>(spec, 61);
    Rng rng(62);
    const auto h0 = random_tensor<double>({2, 6, 4, 4}, rng);
    const TensorD y({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    const std::vector<int32_t> perm{1, 0};

    // Mask frozen from the mixing decision; it is a constant in the graph.
    auto plan = mix::catchup_mix_batch_with(h0, y, 0.5, perm);
    const auto masks = plan.plan.masks;
    REQUIRE(plan.plan.n_mix == 3);

    Tape<double> tape;
    Pass<double> pass(net, &tape, true, false, true);
    auto hleaf = tape.leaf(h0, true);
    auto mixed = channel_mix(hleaf, index_select_batch(hleaf, perm), masks);
    auto loss = softmax_cross_entropy(pass.forward_from({mixed, 1}), plan.labels);
    tape.backward(loss);

    const auto g = tape.grad(hleaf);
    double row0 = 0.0, row1 = 0.0;
    for (size_t i = 0; i < g.size() / 2; ++i) {
        row0 += std::abs(g[i]);
        row1 += std::abs(g[g.size() / 2 + i]);
    }
    CHECK(row0 > 0.0);
    CHECK(row1 > 0.0);

    // Finite-difference oracle over the pre-mix feature map.
    auto f = [&](const std::vector<double>& flat) {
        TensorD h(h0.shape(), flat);
        Pass<double> p(net, nullptr, true, false, false);
        auto m = channel_mix(h, index_select_batch(h, perm), masks);
        return softmax_cross_entropy(p.forward_from({m, 1}), plan.labels).item();
    };
    const auto fd = testutil::finite_difference(
        f, std::vector<double>(h0.data().begin(), h0.data().end()));
    CHECK(testutil::max_rel_err(g, fd) < 1e-5);
}

TEST_CASE("checkpoint round-trip and integrity checks") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "cumix_nn_test";
    fs::create_directories(dir);
    const auto path = (dir / "ckpt.cumix").string();

    auto net = nn::build<float>(NetworkSpec::tiny4(8), 71);
    Rng rng(72);
    auto x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0, 1.0);
    Pass<float> warm(net, nullptr, true, true, false);
    (void)warm.forward(x);  // give running stats non-trivial values
    nn::save_checkpoint(path, net);

    auto back = nn::load_checkpoint<float>(path);
    CHECK(back.spec.canonical() == net.spec.canonical());
    auto pa = net.params(), pb = back.params();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(*pa[i].tensor, *pb[i].tensor));
    CHECK(back.blocks[0].bn->state.running_mean == net.blocks[0].bn->state.running_mean);
    CHECK(bit_equal(nn::eval_logits(back, x), nn::eval_logits(net, x)));

    // Flip one byte inside the embedded spec text: hash check must fire.
    {
        std::ifstream in(path, std::ios::binary);
        std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        blob[blob.find("tiny-4") + 1] = 'X';
        std::ofstream out((dir / "bad.cumix").string(), std::ios::binary);
        out << blob;
    }
    CHECK_THROWS_WITH_AS(nn::load_checkpoint<float>((dir / "bad.cumix").string()),
                         doctest::Contains("hash mismatch"), CheckpointError);

    // Truncated file.
    {
        std::ifstream in(path, std::ios::binary);
        std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out((dir / "trunc.cumix").string(), std::ios::binary);
        out << blob.substr(0, blob.size() / 2);
    }
    CHECK_THROWS_AS(nn::load_checkpoint<float>((dir / "trunc.cumix").string()), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("network spec canonical text parses back") {
    auto spec = NetworkSpec::tiny4(8);
    auto parsed = NetworkSpec::parse(spec.canonical());
    CHECK(parsed.canonical() == spec.canonical());
    CHECK(nn::spec_hash(parsed) == nn::spec_hash(spec));
}
