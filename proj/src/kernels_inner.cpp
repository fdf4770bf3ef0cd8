#include "kernels_inner.hpp"

#include <cmath>
#include <limits>

namespace cumix::kern::inner {

template <typename T>
void gemm_row(const T* Arow, const T* B, T* Crow, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) {
        for (int64_t j = 0; j < N; ++j) Crow[j] = T(0);
    }
    for (int64_t k = 0; k < K; ++k) {
        const T a = Arow[k];
        const T* Brow = B + k * N;
        for (int64_t j = 0; j < N; ++j) Crow[j] += a * Brow[j];
    }
}

template <typename T>
void transpose_row(const T* arow, T* at, int64_t r, int64_t R, int64_t C) {
    for (int64_t c = 0; c < C; ++c) at[c * R + r] = arow[c];
}

template <typename T>
void ew_binary_chunk(int kind, const T* a, const T* b, T* out, int64_t i0, int64_t i1) {
    switch (kind) {
        case 0:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] + b[i];
            break;
        case 1:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] - b[i];
            break;
        case 2:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] * b[i];
            break;
        default:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] / b[i];
            break;
    }
}

template <typename T>
void ew_binary_scalar_chunk(int kind, const T* a, T s, T* out, int64_t i0, int64_t i1) {
    switch (kind) {
        case 0:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] + s;
            break;
        case 1:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] - s;
            break;
        case 2:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] * s;
            break;
        default:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] / s;
            break;
    }
}

template <typename T>
void ew_unary_chunk(int kind, const T* a, T* out, int64_t i0, int64_t i1) {
    switch (kind) {
        case 0:
            for (int64_t i = i0; i < i1; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
            break;
        case 1:
            for (int64_t i = i0; i < i1; ++i) out[i] = std::exp(a[i]);
            break;
        default:
            for (int64_t i = i0; i < i1; ++i) out[i] = std::log(a[i]);
            break;
    }
}

template <typename T>
void ew_axpby_chunk(T alpha, const T* x, T beta, const T* y, T* out, int64_t i0, int64_t i1) {
    if (y) {
        for (int64_t i = i0; i < i1; ++i) out[i] = alpha * x[i] + beta * y[i];
    } else {
        for (int64_t i = i0; i < i1; ++i) out[i] = alpha * x[i];
    }
}

template <typename T>
void ew_relu_backward_chunk(const T* g, const T* x, T* dx, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dx[i] = x[i] > T(0) ? g[i] : T(0);
}

template <typename T>
void im2col_sample(const T* xb, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* cols, int64_t ldc,
                   int64_t col0) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
        const T* plane = xb + ci * H * W;
        for (int64_t r = 0; r < kh; ++r) {
            for (int64_t s = 0; s < kw; ++s) {
                T* crow = cols + ((ci * kh + r) * kw + s) * ldc + col0;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) {
                        for (int64_t ow = 0; ow < OW; ++ow) crow[oh * OW + ow] = T(0);
                        continue;
                    }
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride - pad + s;
                        crow[oh * OW + ow] = (iw < 0 || iw >= W) ? T(0) : plane[ih * W + iw];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_sample(const T* dcols, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW, int64_t ldc, int64_t col0,
                   T* dxb) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
        T* plane = dxb + ci * H * W;
        for (int64_t r = 0; r < kh; ++r) {
            for (int64_t s = 0; s < kw; ++s) {
                const T* crow = dcols + ((ci * kh + r) * kw + s) * ldc + col0;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride - pad + s;
                        if (iw < 0 || iw >= W) continue;
                        plane[ih * W + iw] += crow[oh * OW + ow];
                    }
                }
            }
        }
    }
}

template <typename T>
void cols_to_bchw_channel(const T* out2, int64_t b, int64_t c, int64_t C, int64_t B, int64_t P,
                          T bias, T* out) {
    const T* src = out2 + c * (B * P) + b * P;
    T* dst = out + (b * C + c) * P;
    for (int64_t p = 0; p < P; ++p) dst[p] = src[p] + bias;
}

template <typename T>
void bchw_to_cols_channel(const T* g, int64_t b, int64_t c, int64_t C, int64_t B, int64_t P,
                          T* gout2, T* gout2t) {
    const T* src = g + (b * C + c) * P;
    if (gout2) {
        T* dst = gout2 + c * (B * P) + b * P;
        for (int64_t p = 0; p < P; ++p) dst[p] = src[p];
    }
    if (gout2t) {
        T* dst = gout2t + (b * P) * C + c;
        for (int64_t p = 0; p < P; ++p) dst[p * C] = src[p];
    }
}

template <typename T>
void row_sum_one(const T* row, int64_t n, T* out) {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += row[i];
    *out = acc;
}

template <typename T>
void row_sqnorm_one(const T* row, int64_t n, T* out) {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += row[i] * row[i];
    *out = acc;
}

template <typename T>
void bn_train_forward_channel(const T* x, int64_t c, int64_t B, int64_t C, int64_t HW, T gamma,
                              T beta, T eps, T* y, T* xhat, T* mean, T* invstd) {
    const int64_t n = B * HW;
    T sum = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) sum += p[i];
    }
    const T m = sum / static_cast<T>(n);
    T var = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
            const T d = p[i] - m;
            var += d * d;
        }
    }
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    mean[c] = m;
    invstd[c] = is;
    for (int64_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * HW;
        T* xh = xhat + (b * C + c) * HW;
        T* yo = y + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
            const T v = (p[i] - m) * is;
            xh[i] = v;
            yo[i] = gamma * v + beta;
        }
    }
}

template <typename T>
void bn_eval_forward_channel(const T* x, int64_t c, int64_t B, int64_t C, int64_t HW, T gamma,
                             T beta, T rmean, T rvar, T eps, T* y, T* xhat) {
    const T is = T(1) / std::sqrt(rvar + eps);
    for (int64_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * HW;
        T* yo = y + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
            const T v = (p[i] - rmean) * is;
            if (xhat) xhat[(b * C + c) * HW + i] = v;
            yo[i] = gamma * v + beta;
        }
    }
}

template <typename T>
void bn_train_backward_channel(const T* g, const T* xhat, int64_t c, int64_t B, int64_t C,
                               int64_t HW, T gamma, T invstd, T* dx, T* dgamma, T* dbeta) {
    const int64_t n = B * HW;
    T sum_g = T(0), sum_gx = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* gp = g + (b * C + c) * HW;
        const T* xh = xhat + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * xh[i];
        }
    }
    dgamma[c] = sum_gx;
    dbeta[c] = sum_g;
    const T mean_g = sum_g / static_cast<T>(n);
    const T mean_gx = sum_gx / static_cast<T>(n);
    const T scale = gamma * invstd;
    for (int64_t b = 0; b < B; ++b) {
        const T* gp = g + (b * C + c) * HW;
        const T* xh = xhat + (b * C + c) * HW;
        T* dp = dx + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) dp[i] = scale * (gp[i] - mean_g - xh[i] * mean_gx);
    }
}

template <typename T>
void bn_eval_backward_channel(const T* g, const T* xhat, int64_t c, int64_t B, int64_t C,
                              int64_t HW, T gamma, T rvar, T eps, T* dx, T* dgamma, T* dbeta) {
    const T is = T(1) / std::sqrt(rvar + eps);
    const T scale = gamma * is;
    T sum_g = T(0), sum_gx = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* gp = g + (b * C + c) * HW;
        const T* xh = xhat + (b * C + c) * HW;
        T* dp = dx + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * xh[i];
            dp[i] = scale * gp[i];
        }
    }
    dgamma[c] = sum_gx;
    dbeta[c] = sum_g;
}

template <typename T>
void pool_max_plane(const T* xp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                    int64_t OH, int64_t OW, T* yp, int32_t* argp) {
    for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
            T best = -std::numeric_limits<T>::infinity();
            int32_t best_idx = 0;
            for (int64_t r = 0; r < wh; ++r) {
                const int64_t ih = oh * stride + r;
                for (int64_t s = 0; s < ww; ++s) {
                    const int64_t iw = ow * stride + s;
                    const T v = xp[ih * W + iw];
                    if (v > best) {
                        best = v;
                        best_idx = static_cast<int32_t>(ih * W + iw);
                    }
                }
            }
            yp[oh * OW + ow] = best;
            argp[oh * OW + ow] = best_idx;
        }
    }
}

template <typename T>
void pool_max_back_plane(const T* gp, const int32_t* argp, int64_t OHOW, T* dxp) {
    for (int64_t p = 0; p < OHOW; ++p) dxp[argp[p]] += gp[p];
}

template <typename T>
void pool_avg_plane(const T* xp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                    int64_t OH, int64_t OW, T* yp) {
    (void)H;
    const T inv = T(1) / static_cast<T>(wh * ww);
    for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
            T acc = T(0);
            for (int64_t r = 0; r < wh; ++r) {
                const int64_t ih = oh * stride + r;
                for (int64_t s = 0; s < ww; ++s) acc += xp[ih * W + ow * stride + s];
            }
            yp[oh * OW + ow] = acc * inv;
        }
    }
}

template <typename T>
void pool_avg_back_plane(const T* gp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                         int64_t OH, int64_t OW, T* dxp) {
    (void)H;
    const T inv = T(1) / static_cast<T>(wh * ww);
    for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
            const T v = gp[oh * OW + ow] * inv;
            for (int64_t r = 0; r < wh; ++r) {
                const int64_t ih = oh * stride + r;
                for (int64_t s = 0; s < ww; ++s) dxp[ih * W + ow * stride + s] += v;
            }
        }
    }
}

template <typename T>
void softmax_ce_row(const T* logits, const T* targets, int64_t N, T* softmax, T* rowloss) {
    T mx = logits[0];
    for (int64_t i = 1; i < N; ++i) mx = logits[i] > mx ? logits[i] : mx;
    T denom = T(0);
    for (int64_t i = 0; i < N; ++i) {
        softmax[i] = std::exp(logits[i] - mx);
        denom += softmax[i];
    }
    const T log_denom = std::log(denom);
    T loss = T(0);
    for (int64_t i = 0; i < N; ++i) {
        loss -= targets[i] * (logits[i] - mx - log_denom);
        softmax[i] /= denom;
    }
    *rowloss = loss;
}

template <typename T>
void softmax_ce_backward_row(const T* softmax, const T* targets, int64_t N, T scale, T* dlogits) {
    for (int64_t i = 0; i < N; ++i) dlogits[i] = scale * (softmax[i] - targets[i]);
}

template <typename T>
void copy_row(const T* src, T* dst, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] = src[i];
}

template <typename T>
void accumulate_rows(const T* g, int64_t rowelems, const int32_t* srcs, int64_t count, T* dst) {
    for (int64_t k = 0; k < count; ++k) {
        const T* row = g + static_cast<int64_t>(srcs[k]) * rowelems;
        for (int64_t i = 0; i < rowelems; ++i) dst[i] += row[i];
    }
}

template <typename T>
void channel_mix_plane(const T* h, const T* hp, uint8_t keep, int64_t HW, T* out) {
    const T* src = keep ? h : hp;
    for (int64_t i = 0; i < HW; ++i) out[i] = src[i];
}

template <typename T>
void channel_mix_back_plane(const T* g, uint8_t keep, int64_t HW, T* dh, T* dhp) {
    T* dst = keep ? dh : dhp;
    T* other = keep ? dhp : dh;
    for (int64_t i = 0; i < HW; ++i) {
        dst[i] = g[i];
        other[i] = T(0);
    }
}

#define CUMIX_INSTANTIATE_INNER(T)                                                                \
    template void gemm_row<T>(const T*, const T*, T*, int64_t, int64_t, bool);                    \
    template void transpose_row<T>(const T*, T*, int64_t, int64_t, int64_t);                      \
    template void ew_binary_chunk<T>(int, const T*, const T*, T*, int64_t, int64_t);              \
    template void ew_binary_scalar_chunk<T>(int, const T*, T, T*, int64_t, int64_t);              \
    template void ew_unary_chunk<T>(int, const T*, T*, int64_t, int64_t);                         \
    template void ew_axpby_chunk<T>(T, const T*, T, const T*, T*, int64_t, int64_t);              \
    template void ew_relu_backward_chunk<T>(const T*, const T*, T*, int64_t, int64_t);            \
    template void im2col_sample<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,         \
                                   int64_t, int64_t, int64_t, int64_t, T*, int64_t, int64_t);     \
    template void col2im_sample<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,         \
                                   int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, T*);     \
    template void cols_to_bchw_channel<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,  \
                                          T, T*);                                                 \
    template void bchw_to_cols_channel<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,  \
                                          T*, T*);                                                \
    template void row_sum_one<T>(const T*, int64_t, T*);                                          \
    template void row_sqnorm_one<T>(const T*, int64_t, T*);                                       \
    template void bn_train_forward_channel<T>(const T*, int64_t, int64_t, int64_t, int64_t, T, T, \
                                              T, T*, T*, T*, T*);                                 \
    template void bn_eval_forward_channel<T>(const T*, int64_t, int64_t, int64_t, int64_t, T, T,  \
                                             T, T, T, T*, T*);                                    \
    template void bn_train_backward_channel<T>(const T*, const T*, int64_t, int64_t, int64_t,     \
                                               int64_t, T, T, T*, T*, T*);                        \
    template void bn_eval_backward_channel<T>(const T*, const T*, int64_t, int64_t, int64_t,      \
                                              int64_t, T, T, T, T*, T*, T*);                      \
    template void pool_max_plane<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,        \
                                    int64_t, int64_t, T*, int32_t*);                              \
    template void pool_max_back_plane<T>(const T*, const int32_t*, int64_t, T*);                  \
    template void pool_avg_plane<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,        \
                                    int64_t, int64_t, T*);                                        \
    template void pool_avg_back_plane<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,   \
                                         int64_t, int64_t, T*);                                   \
    template void softmax_ce_row<T>(const T*, const T*, int64_t, T*, T*);                         \
    template void softmax_ce_backward_row<T>(const T*, const T*, int64_t, T, T*);                 \
    template void copy_row<T>(const T*, T*, int64_t);                                             \
    template void accumulate_rows<T>(const T*, int64_t, const int32_t*, int64_t, T*);             \
    template void channel_mix_plane<T>(const T*, const T*, uint8_t, int64_t, T*);                 \
    template void channel_mix_back_plane<T>(const T*, uint8_t, int64_t, T*, T*);

CUMIX_INSTANTIATE_INNER(float)
CUMIX_INSTANTIATE_INNER(double)

#undef CUMIX_INSTANTIATE_INNER

}  // namespace cumix::kern::inner
