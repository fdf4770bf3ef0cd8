#include "cumix/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cumix/common.hpp"

namespace cumix {

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

double Rng::gamma(double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("gamma: alpha must be positive");
    if (alpha < 1.0) {
        // Gamma(a) = Gamma(a+1) * U^(1/a)
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double Rng::beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    const double s = x + y;
    if (s <= 0.0) return 0.5;
    return x / s;
}

std::vector<int32_t> Rng::permutation(int32_t n) {
    std::vector<int32_t> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int32_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int32_t>(uniform_int(i + 1));
        std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
}

Rng Rng::split(uint64_t stream) const {
    uint64_t material[2] = {seed_, stream};
    return Rng(fnv1a(material, sizeof(material)));
}

}  // namespace cumix
