#pragma once

#include <cstdint>

// Per-work-item routines shared by the serial and OpenMP drivers. They are
// compiled exactly once (kernels_inner.cpp, no omp pragmas), which makes the
// two lanes bit-identical by construction: a work item's floating-point
// instruction stream does not depend on the lane that scheduled it.

namespace cumix::kern::inner {

template <typename T>
void gemm_row(const T* Arow, const T* B, T* Crow, int64_t K, int64_t N, bool accumulate);

template <typename T>
void transpose_row(const T* arow, T* at, int64_t r, int64_t R, int64_t C);

template <typename T>
void ew_binary_chunk(int kind, const T* a, const T* b, T* out, int64_t i0, int64_t i1);
template <typename T>
void ew_binary_scalar_chunk(int kind, const T* a, T s, T* out, int64_t i0, int64_t i1);
template <typename T>
void ew_unary_chunk(int kind, const T* a, T* out, int64_t i0, int64_t i1);
template <typename T>
void ew_axpby_chunk(T alpha, const T* x, T beta, const T* y, T* out, int64_t i0, int64_t i1);
template <typename T>
void ew_relu_backward_chunk(const T* g, const T* x, T* dx, int64_t i0, int64_t i1);

template <typename T>
void im2col_sample(const T* xb, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* cols, int64_t ldc,
                   int64_t col0);
template <typename T>
void col2im_sample(const T* dcols, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW, int64_t ldc, int64_t col0,
                   T* dxb);

template <typename T>
void cols_to_bchw_channel(const T* out2, int64_t b, int64_t c, int64_t C, int64_t B, int64_t P,
                          T bias, T* out);
template <typename T>
void bchw_to_cols_channel(const T* g, int64_t b, int64_t c, int64_t C, int64_t B, int64_t P,
                          T* gout2, T* gout2t);

template <typename T>
void row_sum_one(const T* row, int64_t n, T* out);
template <typename T>
void row_sqnorm_one(const T* row, int64_t n, T* out);

template <typename T>
void bn_train_forward_channel(const T* x, int64_t c, int64_t B, int64_t C, int64_t HW, T gamma,
                              T beta, T eps, T* y, T* xhat, T* mean, T* invstd);
template <typename T>
void bn_eval_forward_channel(const T* x, int64_t c, int64_t B, int64_t C, int64_t HW, T gamma,
                             T beta, T rmean, T rvar, T eps, T* y, T* xhat);
template <typename T>
void bn_train_backward_channel(const T* g, const T* xhat, int64_t c, int64_t B, int64_t C,
                               int64_t HW, T gamma, T invstd, T* dx, T* dgamma, T* dbeta);
template <typename T>
void bn_eval_backward_channel(const T* g, const T* xhat, int64_t c, int64_t B, int64_t C,
                              int64_t HW, T gamma, T rvar, T eps, T* dx, T* dgamma, T* dbeta);

template <typename T>
void pool_max_plane(const T* xp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                    int64_t OH, int64_t OW, T* yp, int32_t* argp);
template <typename T>
void pool_max_back_plane(const T* gp, const int32_t* argp, int64_t OHOW, T* dxp);
template <typename T>
void pool_avg_plane(const T* xp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                    int64_t OH, int64_t OW, T* yp);
template <typename T>
void pool_avg_back_plane(const T* gp, int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t stride,
                         int64_t OH, int64_t OW, T* dxp);

template <typename T>
void softmax_ce_row(const T* logits, const T* targets, int64_t N, T* softmax, T* rowloss);
template <typename T>
void softmax_ce_backward_row(const T* softmax, const T* targets, int64_t N, T scale, T* dlogits);

template <typename T>
void copy_row(const T* src, T* dst, int64_t n);
template <typename T>
void accumulate_rows(const T* g, int64_t rowelems, const int32_t* srcs, int64_t count, T* dst);

template <typename T>
void channel_mix_plane(const T* h, const T* hp, uint8_t keep, int64_t HW, T* out);
template <typename T>
void channel_mix_back_plane(const T* g, uint8_t keep, int64_t HW, T* dh, T* dhp);

}  // namespace cumix::kern::inner
