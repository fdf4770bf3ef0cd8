#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cumix/rng.hpp"
#include "cumix/tensor.hpp"

namespace testutil {

using cumix::Rng;
using cumix::Shape;
using cumix::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal() * scale);
    return t;
}

inline Shape random_shape(Rng& rng, int max_rank = 4, int64_t max_dim = 5) {
    const int rank = 1 + static_cast<int>(rng.uniform_int(max_rank));
    Shape s;
    for (int i = 0; i < rank; ++i) s.push_back(1 + rng.uniform_int(max_dim));
    return s;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[static_cast<size_t>(i)] != b.data()[static_cast<size_t>(i)]) return false;
    return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[static_cast<size_t>(i)]) -
                                 static_cast<double>(b.data()[static_cast<size_t>(i)])));
    return m;
}

// Central finite differences of a scalar-valued function of a flat vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-3) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Relative error with a unit floor, so near-zero gradients compare absolutely.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(std::span<const double> a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < b.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

}  // namespace testutil
