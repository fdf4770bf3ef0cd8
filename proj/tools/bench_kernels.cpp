// Times the serial reference lane against the OpenMP lane for the hot kernels
// and checks that both produce bit-identical results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "cumix/kernels.hpp"
#include "cumix/rng.hpp"

using namespace cumix;

namespace {

using Clock = std::chrono::steady_clock;

std::vector<float> random_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e100;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

struct Row {
    std::string name;
    double serial_s;
    double parallel_s;
    double gflops;
    bool bitexact;
};

void print_row(const Row& r) {
    std::printf("%-28s %10.4f ms %10.4f ms   x%-5.2f %8.2f GF/s  %s\n", r.name.c_str(),
                r.serial_s * 1e3, r.parallel_s * 1e3, r.serial_s / r.parallel_s, r.gflops,
                r.bitexact ? "bit-exact" : "MISMATCH");
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("threads: %d\n", num_threads());
    std::printf("%-28s %13s %13s %8s %12s\n", "kernel", "serial", "openmp", "speedup",
                "omp rate");
    bool all_exact = true;

    // GEMM shapes that appear in the reference network.
    struct GemmCase {
        int64_t m, n, k;
    } gemm_cases[] = {{16, 65536, 27}, {32, 16384, 144}, {64, 4096, 288}, {128, 1024, 576},
                      {128, 256, 1152}};
    for (const auto& c : gemm_cases) {
        const auto a = random_vec(static_cast<size_t>(c.m * c.k), rng);
        const auto b = random_vec(static_cast<size_t>(c.k * c.n), rng);
        std::vector<float> out_s(static_cast<size_t>(c.m * c.n));
        std::vector<float> out_p(out_s.size());
        const double serial = time_best_of(3, [&] {
            kern::gemm_nn<float>(c.m, c.n, c.k, a.data(), b.data(), out_s.data(), false,
                                 kern::Exec::Serial);
        });
        const double parallel = time_best_of(3, [&] {
            kern::gemm_nn<float>(c.m, c.n, c.k, a.data(), b.data(), out_p.data(), false,
                                 kern::Exec::Parallel);
        });
        const bool exact = std::memcmp(out_s.data(), out_p.data(), out_s.size() * 4) == 0;
        all_exact = all_exact && exact;
        char name[64];
        std::snprintf(name, sizeof(name), "gemm %lldx%lldx%lld", static_cast<long long>(c.m),
                      static_cast<long long>(c.n), static_cast<long long>(c.k));
        print_row({name, serial, parallel,
                   2.0 * static_cast<double>(c.m * c.n * c.k) / parallel / 1e9, exact});
    }

    // Batch-norm forward over a stem-sized activation block.
    {
        const int64_t B = 64, C = 32, HW = 1024;
        const auto x = random_vec(static_cast<size_t>(B * C * HW), rng);
        std::vector<float> gamma(C, 1.0f), beta(C, 0.0f);
        std::vector<float> y_s(x.size()), y_p(x.size()), xh(x.size()), mean(C), invstd(C);
        const double serial = time_best_of(3, [&] {
            kern::bn_train_forward<float>(x.data(), B, C, HW, gamma.data(), beta.data(), 1e-5f,
                                          y_s.data(), xh.data(), mean.data(), invstd.data(),
                                          kern::Exec::Serial);
        });
        const double parallel = time_best_of(3, [&] {
            kern::bn_train_forward<float>(x.data(), B, C, HW, gamma.data(), beta.data(), 1e-5f,
                                          y_p.data(), xh.data(), mean.data(), invstd.data(),
                                          kern::Exec::Parallel);
        });
        const bool exact = std::memcmp(y_s.data(), y_p.data(), y_s.size() * 4) == 0;
        all_exact = all_exact && exact;
        print_row({"bn_train_forward 64x32x1024", serial, parallel,
                   6.0 * static_cast<double>(B * C * HW) / parallel / 1e9, exact});
    }

    // im2col for the stem geometry.
    {
        const int64_t B = 64, Cin = 3, H = 32, W = 32, kh = 3, kw = 3, OH = 32, OW = 32;
        const auto x = random_vec(static_cast<size_t>(B * Cin * H * W), rng);
        std::vector<float> cols_s(static_cast<size_t>(Cin * kh * kw * B * OH * OW));
        std::vector<float> cols_p(cols_s.size());
        const double serial = time_best_of(3, [&] {
            kern::im2col<float>(x.data(), B, Cin, H, W, kh, kw, 1, 1, OH, OW, cols_s.data(),
                                kern::Exec::Serial);
        });
        const double parallel = time_best_of(3, [&] {
            kern::im2col<float>(x.data(), B, Cin, H, W, kh, kw, 1, 1, OH, OW, cols_p.data(),
                                kern::Exec::Parallel);
        });
        const bool exact = std::memcmp(cols_s.data(), cols_p.data(), cols_s.size() * 4) == 0;
        all_exact = all_exact && exact;
        print_row({"im2col 64x3x32x32 k3", serial, parallel,
                   static_cast<double>(cols_s.size()) / parallel / 1e9, exact});
    }

    // Elementwise over a large buffer.
    {
        const int64_t n = 1 << 22;
        const auto a = random_vec(static_cast<size_t>(n), rng);
        const auto b = random_vec(static_cast<size_t>(n), rng);
        std::vector<float> out_s(a.size()), out_p(a.size());
        const double serial = time_best_of(3, [&] {
            kern::ew_binary<float>(kern::Binary::Mul, n, a.data(), b.data(), out_s.data(),
                                   kern::Exec::Serial);
        });
        const double parallel = time_best_of(3, [&] {
            kern::ew_binary<float>(kern::Binary::Mul, n, a.data(), b.data(), out_p.data(),
                                   kern::Exec::Parallel);
        });
        const bool exact = std::memcmp(out_s.data(), out_p.data(), out_s.size() * 4) == 0;
        all_exact = all_exact && exact;
        print_row({"ew_mul 4M", serial, parallel, static_cast<double>(n) / parallel / 1e9, exact});
    }

    if (!all_exact) {
        std::printf("FAIL: serial and OpenMP lanes disagree\n");
        return 1;
    }
    std::printf("all kernels bit-exact across lanes\n");
    return 0;
}
