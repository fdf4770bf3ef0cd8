#include "cumix/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "kernels_inner.hpp"

namespace cumix {

namespace {

int env_thread_cap() {
    if (const char* e = std::getenv("CUM_THREADS")) {
        const int v = std::atoi(e);
        if (v > 0) return v;
    }
    return 0;
}

std::atomic<int> g_threads{0};

}  // namespace

void set_num_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

int num_threads() {
    int n = g_threads.load();
    if (n == 0) {
        n = omp_get_max_threads();
        if (const int cap = env_thread_cap(); cap > 0) n = std::min(n, cap);
    }
    return std::max(1, n);
}

}  // namespace cumix

namespace cumix::kern {

namespace in = inner;

Exec resolve(Exec ex) {
    if (ex != Exec::Auto) return ex;
    return num_threads() > 1 ? Exec::Parallel : Exec::Serial;
}

namespace {

// Work items are independent and each writes a disjoint output slice, so the
// split is just a scheduling choice; results do not depend on it.
template <typename F>
void for_each(int64_t n, Exec ex, F&& work) {
    if (resolve(ex) == Exec::Parallel && n > 1) {
        const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int64_t i = 0; i < n; ++i) work(i);
    } else {
        for (int64_t i = 0; i < n; ++i) work(i);
    }
}

constexpr int64_t kChunk = 16384;

template <typename F>
void for_each_chunk(int64_t n, Exec ex, F&& work) {
    const int64_t chunks = (n + kChunk - 1) / kChunk;
    for_each(chunks, ex, [&](int64_t c) {
        const int64_t i0 = c * kChunk;
        work(i0, std::min<int64_t>(i0 + kChunk, n));
    });
}

}  // namespace

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate,
             Exec ex) {
    for_each(M, ex, [&](int64_t i) { in::gemm_row(A + i * K, B, C + i * N, K, N, accumulate); });
}

template <typename T>
void transpose(int64_t R, int64_t C, const T* a, T* at, Exec ex) {
    for_each(R, ex, [&](int64_t r) { in::transpose_row(a + r * C, at, r, R, C); });
}

template <typename T>
void ew_binary(Binary kind, int64_t n, const T* a, const T* b, T* out, Exec ex) {
    for_each_chunk(n, ex, [&](int64_t i0, int64_t i1) {
        in::ew_binary_chunk(static_cast<int>(kind), a, b, out, i0, i1);
    });
}

template <typename T>
void ew_binary_scalar(Binary kind, int64_t n, const T* a, T s, T* out, Exec ex) {
    for_each_chunk(n, ex, [&](int64_t i0, int64_t i1) {
        in::ew_binary_scalar_chunk(static_cast<int>(kind), a, s, out, i0, i1);
    });
}

template <typename T>
void ew_unary(Unary kind, int64_t n, const T* a, T* out, Exec ex) {
    for_each_chunk(n, ex, [&](int64_t i0, int64_t i1) {
        in::ew_unary_chunk(static_cast<int>(kind), a, out, i0, i1);
    });
}

template <typename T>
void ew_axpby(int64_t n, T alpha, const T* x, T beta, const T* y, T* out, Exec ex) {
    for_each_chunk(n, ex,
                   [&](int64_t i0, int64_t i1) { in::ew_axpby_chunk(alpha, x, beta, y, out, i0, i1); });
}

template <typename T>
void ew_relu_backward(int64_t n, const T* g, const T* x, T* dx, Exec ex) {
    for_each_chunk(n, ex,
                   [&](int64_t i0, int64_t i1) { in::ew_relu_backward_chunk(g, x, dx, i0, i1); });
}

template <typename T>
void im2col(const T* x, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* cols, Exec ex) {
    const int64_t ldc = B * OH * OW;
    for_each(B, ex, [&](int64_t b) {
        in::im2col_sample(x + b * Cin * H * W, Cin, H, W, kh, kw, stride, pad, OH, OW, cols, ldc,
                          b * OH * OW);
    });
}

template <typename T>
void col2im(const T* dcols, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* dx, Exec ex) {
    const int64_t ldc = B * OH * OW;
    for_each(B, ex, [&](int64_t b) {
        in::col2im_sample(dcols, Cin, H, W, kh, kw, stride, pad, OH, OW, ldc, b * OH * OW,
                          dx + b * Cin * H * W);
    });
}

template <typename T>
void cols_to_bchw(const T* out2, int64_t B, int64_t C, int64_t P, const T* bias, T* out, Exec ex) {
    for_each(B * C, ex, [&](int64_t idx) {
        const int64_t b = idx / C, c = idx % C;
        in::cols_to_bchw_channel(out2, b, c, C, B, P, bias ? bias[c] : T(0), out);
    });
}

template <typename T>
void bchw_to_cols(const T* g, int64_t B, int64_t C, int64_t P, T* gout2, T* gout2t, Exec ex) {
    for_each(B * C, ex, [&](int64_t idx) {
        in::bchw_to_cols_channel(g, idx / C, idx % C, C, B, P, gout2, gout2t);
    });
}

template <typename T>
void row_sums(int64_t R, int64_t n, const T* a, T* out, Exec ex) {
    for_each(R, ex, [&](int64_t r) { in::row_sum_one(a + r * n, n, out + r); });
}

template <typename T>
void row_sqnorms(int64_t R, int64_t n, const T* a, T* out, Exec ex) {
    for_each(R, ex, [&](int64_t r) { in::row_sqnorm_one(a + r * n, n, out + r); });
}

template <typename T>
void bn_train_forward(const T* x, int64_t B, int64_t C, int64_t HW, const T* gamma, const T* beta,
                      T eps, T* y, T* xhat, T* mean, T* invstd, Exec ex) {
    for_each(C, ex, [&](int64_t c) {
        in::bn_train_forward_channel(x, c, B, C, HW, gamma[c], beta[c], eps, y, xhat, mean, invstd);
    });
}

template <typename T>
void bn_eval_forward(const T* x, int64_t B, int64_t C, int64_t HW, const T* gamma, const T* beta,
                     const T* rmean, const T* rvar, T eps, T* y, T* xhat, Exec ex) {
    for_each(C, ex, [&](int64_t c) {
        in::bn_eval_forward_channel(x, c, B, C, HW, gamma[c], beta[c], rmean[c], rvar[c], eps, y,
                                    xhat);
    });
}

template <typename T>
void bn_train_backward(const T* g, const T* xhat, const T* gamma, const T* invstd, int64_t B,
                       int64_t C, int64_t HW, T* dx, T* dgamma, T* dbeta, Exec ex) {
    for_each(C, ex, [&](int64_t c) {
        in::bn_train_backward_channel(g, xhat, c, B, C, HW, gamma[c], invstd[c], dx, dgamma, dbeta);
    });
}

template <typename T>
void bn_eval_backward(const T* g, const T* xhat, const T* gamma, const T* rvar, T eps, int64_t B,
                      int64_t C, int64_t HW, T* dx, T* dgamma, T* dbeta, Exec ex) {
    for_each(C, ex, [&](int64_t c) {
        in::bn_eval_backward_channel(g, xhat, c, B, C, HW, gamma[c], rvar[c], eps, dx, dgamma,
                                     dbeta);
    });
}

template <typename T>
void pool_max_forward(const T* x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                      int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* y, int32_t* argmax,
                      Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::pool_max_plane(x + p * H * W, H, W, wh, ww, stride, OH, OW, y + p * OH * OW,
                           argmax + p * OH * OW);
    });
}

template <typename T>
void pool_max_backward(const T* g, const int32_t* argmax, int64_t B, int64_t C, int64_t H,
                       int64_t W, int64_t OH, int64_t OW, T* dx, Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::pool_max_back_plane(g + p * OH * OW, argmax + p * OH * OW, OH * OW, dx + p * H * W);
    });
}

template <typename T>
void pool_avg_forward(const T* x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                      int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* y, Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::pool_avg_plane(x + p * H * W, H, W, wh, ww, stride, OH, OW, y + p * OH * OW);
    });
}

template <typename T>
void pool_avg_backward(const T* g, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                       int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* dx, Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::pool_avg_back_plane(g + p * OH * OW, H, W, wh, ww, stride, OH, OW, dx + p * H * W);
    });
}

template <typename T>
void softmax_ce_forward(const T* logits, const T* targets, int64_t B, int64_t N, T* softmax,
                        T* loss, Exec ex) {
    std::vector<T> rowloss(static_cast<size_t>(B));
    for_each(B, ex, [&](int64_t b) {
        in::softmax_ce_row(logits + b * N, targets + b * N, N, softmax + b * N, rowloss.data() + b);
    });
    T acc = T(0);
    for (int64_t b = 0; b < B; ++b) acc += rowloss[static_cast<size_t>(b)];
    *loss = acc / static_cast<T>(B);
}

template <typename T>
void softmax_ce_backward(const T* softmax, const T* targets, int64_t B, int64_t N, T gscale,
                         T* dlogits, Exec ex) {
    const T scale = gscale / static_cast<T>(B);
    for_each(B, ex, [&](int64_t b) {
        in::softmax_ce_backward_row(softmax + b * N, targets + b * N, N, scale, dlogits + b * N);
    });
}

template <typename T>
void gather_rows(const T* x, int64_t B, int64_t rowelems, const int32_t* perm, T* y, Exec ex) {
    for_each(B, ex, [&](int64_t i) {
        in::copy_row(x + static_cast<int64_t>(perm[i]) * rowelems, y + i * rowelems, rowelems);
    });
}

template <typename T>
void scatter_add_rows(const T* g, int64_t B, int64_t rowelems, const int32_t* perm, T* dx,
                      Exec ex) {
    // Invert the permutation into per-destination source lists so each
    // destination row is owned by one work item; ascending order keeps the
    // accumulation deterministic when a row is referenced several times.
    std::vector<int32_t> heads(static_cast<size_t>(B), 0);
    for (int64_t i = 0; i < B; ++i) heads[static_cast<size_t>(perm[i])]++;
    std::vector<int64_t> offsets(static_cast<size_t>(B) + 1, 0);
    for (int64_t d = 0; d < B; ++d) offsets[static_cast<size_t>(d) + 1] = offsets[static_cast<size_t>(d)] + heads[static_cast<size_t>(d)];
    std::vector<int32_t> srcs(static_cast<size_t>(B));
    std::vector<int64_t> fill(offsets.begin(), offsets.end() - 1);
    for (int64_t i = 0; i < B; ++i) {
        srcs[static_cast<size_t>(fill[static_cast<size_t>(perm[i])]++)] = static_cast<int32_t>(i);
    }
    for_each(B, ex, [&](int64_t d) {
        const int64_t lo = offsets[static_cast<size_t>(d)], hi = offsets[static_cast<size_t>(d) + 1];
        in::accumulate_rows(g, rowelems, srcs.data() + lo, hi - lo, dx + d * rowelems);
    });
}

template <typename T>
void channel_mix_forward(const T* h, const T* hp, const uint8_t* mask, int64_t B, int64_t C,
                         int64_t HW, T* out, Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::channel_mix_plane(h + p * HW, hp + p * HW, mask[p], HW, out + p * HW);
    });
}

template <typename T>
void channel_mix_backward(const T* g, const uint8_t* mask, int64_t B, int64_t C, int64_t HW,
                          T* dh, T* dhp, Exec ex) {
    for_each(B * C, ex, [&](int64_t p) {
        in::channel_mix_back_plane(g + p * HW, mask[p], HW, dh + p * HW, dhp + p * HW);
    });
}

template <typename T>
T reduce_sum(const T* a, int64_t n) {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

#define CUMIX_INSTANTIATE_KERN(T)                                                                 \
    template void gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool, Exec);      \
    template void transpose<T>(int64_t, int64_t, const T*, T*, Exec);                             \
    template void ew_binary<T>(Binary, int64_t, const T*, const T*, T*, Exec);                    \
    template void ew_binary_scalar<T>(Binary, int64_t, const T*, T, T*, Exec);                    \
    template void ew_unary<T>(Unary, int64_t, const T*, T*, Exec);                                \
    template void ew_axpby<T>(int64_t, T, const T*, T, const T*, T*, Exec);                       \
    template void ew_relu_backward<T>(int64_t, const T*, const T*, T*, Exec);                     \
    template void im2col<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t,       \
                            int64_t, int64_t, int64_t, int64_t, T*, Exec);                        \
    template void col2im<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t,       \
                            int64_t, int64_t, int64_t, int64_t, T*, Exec);                        \
    template void cols_to_bchw<T>(const T*, int64_t, int64_t, int64_t, const T*, T*, Exec);       \
    template void bchw_to_cols<T>(const T*, int64_t, int64_t, int64_t, T*, T*, Exec);             \
    template void row_sums<T>(int64_t, int64_t, const T*, T*, Exec);                              \
    template void row_sqnorms<T>(int64_t, int64_t, const T*, T*, Exec);                           \
    template void bn_train_forward<T>(const T*, int64_t, int64_t, int64_t, const T*, const T*, T, \
                                      T*, T*, T*, T*, Exec);                                      \
    template void bn_eval_forward<T>(const T*, int64_t, int64_t, int64_t, const T*, const T*,     \
                                     const T*, const T*, T, T*, T*, Exec);                        \
    template void bn_train_backward<T>(const T*, const T*, const T*, const T*, int64_t, int64_t,  \
                                       int64_t, T*, T*, T*, Exec);                                \
    template void bn_eval_backward<T>(const T*, const T*, const T*, const T*, T, int64_t,         \
                                      int64_t, int64_t, T*, T*, T*, Exec);                        \
    template void pool_max_forward<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,      \
                                      int64_t, int64_t, int64_t, int64_t, T*, int32_t*, Exec);    \
    template void pool_max_backward<T>(const T*, const int32_t*, int64_t, int64_t, int64_t,       \
                                       int64_t, int64_t, int64_t, T*, Exec);                      \
    template void pool_avg_forward<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,      \
                                      int64_t, int64_t, int64_t, int64_t, T*, Exec);              \
    template void pool_avg_backward<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t,     \
                                       int64_t, int64_t, int64_t, int64_t, T*, Exec);             \
    template void softmax_ce_forward<T>(const T*, const T*, int64_t, int64_t, T*, T*, Exec);      \
    template void softmax_ce_backward<T>(const T*, const T*, int64_t, int64_t, T, T*, Exec);      \
    template void gather_rows<T>(const T*, int64_t, int64_t, const int32_t*, T*, Exec);           \
    template void scatter_add_rows<T>(const T*, int64_t, int64_t, const int32_t*, T*, Exec);      \
    template void channel_mix_forward<T>(const T*, const T*, const uint8_t*, int64_t, int64_t,    \
                                         int64_t, T*, Exec);                                      \
    template void channel_mix_backward<T>(const T*, const uint8_t*, int64_t, int64_t, int64_t,    \
                                          T*, T*, Exec);                                          \
    template T reduce_sum<T>(const T*, int64_t);

CUMIX_INSTANTIATE_KERN(float)
CUMIX_INSTANTIATE_KERN(double)

#undef CUMIX_INSTANTIATE_KERN

}  // namespace cumix::kern
