#pragma once

// Independent reference implementations used to freeze expected values. These
// stay naive on purpose and must not share code with the library paths they
// check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracles {

// Plain triple-loop matrix product.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t t = 0; t < k; ++t)
                c[static_cast<size_t>(i * n + j)] +=
                    a[static_cast<size_t>(i * k + t)] * b[static_cast<size_t>(t * n + j)];
    return c;
}

// Direct six-loop cross-correlation.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& bias, int64_t B, int64_t Cin,
                                  int64_t H, int64_t W, int64_t Cout, int64_t kh, int64_t kw,
                                  int64_t stride, int64_t pad) {
    const int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const int64_t OW = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(B * Cout * OH * OW), 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
                    for (int64_t ci = 0; ci < Cin; ++ci)
                        for (int64_t r = 0; r < kh; ++r)
                            for (int64_t s = 0; s < kw; ++s) {
                                const int64_t ih = oh * stride - pad + r;
                                const int64_t iw = ow * stride - pad + s;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x[static_cast<size_t>(((b * Cin + ci) * H + ih) * W + iw)] *
                                       w[static_cast<size_t>(((co * Cin + ci) * kh + r) * kw + s)];
                            }
                    out[static_cast<size_t>(((b * Cout + co) * OH + oh) * OW + ow)] = acc;
                }
    return out;
}

// Double-loop per-channel activation norm.
inline std::vector<double> filter_influence(const std::vector<double>& h, int64_t c, int64_t hw) {
    std::vector<double> fi(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < hw; ++j) {
            const double v = h[static_cast<size_t>(i * hw + j)];
            acc += v * v;
        }
        fi[static_cast<size_t>(i)] = std::sqrt(acc);
    }
    return fi;
}

// Full-sort reference for the retained-channel set: the n_mix channels with
// the smallest RFI, ties resolved toward the lower index.
inline std::vector<int64_t> retained_set(const std::vector<double>& rfi, int64_t n_mix) {
    std::vector<int64_t> idx(rfi.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return rfi[static_cast<size_t>(a)] < rfi[static_cast<size_t>(b)];
    });
    idx.resize(static_cast<size_t>(n_mix));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// O(n^2) pairwise AUROC with half-credit for ties.
inline double auroc_pairwise(const std::vector<double>& pos, const std::vector<double>& neg) {
    double score = 0.0;
    for (const double p : pos)
        for (const double n : neg) {
            if (p > n) score += 1.0;
            else if (p == n) score += 0.5;
        }
    return score / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Chi-square upper 1% critical values for small degrees of freedom.
inline double chi2_crit_p01(int df) {
    static const double table[] = {0.0,    6.635,  9.210,  11.345, 13.277, 15.086, 16.812,
                                   18.475, 20.090, 21.666, 23.209, 24.725, 26.217};
    return table[df];
}

inline double chi2_stat(const std::vector<int64_t>& counts, double expected) {
    double stat = 0.0;
    for (const auto c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

}  // namespace oracles
