#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cumix {

// Deterministic random source. All distributions are implemented on top of
// the (fully specified) mt19937_64 stream, so a seed reproduces the same
// draws on every platform and compiler.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection keeps the draw unbiased.
    int64_t uniform_int(int64_t n);

    // Standard normal via Box-Muller; the second value is cached.
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1.
    double gamma(double alpha);

    // Beta(a, b) as a ratio of gammas.
    double beta(double a, double b);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<int32_t> permutation(int32_t n);

    // Independent stream derived from the seed, not from generator state.
    Rng split(uint64_t stream) const;

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace cumix
