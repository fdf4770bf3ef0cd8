#pragma once

#include <cstdint>

#include "cumix/common.hpp"

namespace cumix::kern {

// Execution lane. Auto picks Parallel when more than one worker thread is
// configured. Serial is the reference lane kept for testing and benchmarks;
// both lanes call the same inner routines, so results are bit-identical.
enum class Exec { Auto, Serial, Parallel };

Exec resolve(Exec ex);

// Row-major C[M,N] (+)= A[M,K] * B[K,N]. Accumulation order over K is fixed
// per output element regardless of lane or thread count.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate, Exec ex = Exec::Auto);

template <typename T>
void transpose(int64_t R, int64_t C, const T* a, T* at, Exec ex = Exec::Auto);

// Elementwise kinds.
enum class Binary { Add, Sub, Mul, Div };
enum class Unary { Relu, Exp, Log };

template <typename T>
void ew_binary(Binary kind, int64_t n, const T* a, const T* b, T* out, Exec ex = Exec::Auto);
template <typename T>
void ew_binary_scalar(Binary kind, int64_t n, const T* a, T s, T* out, Exec ex = Exec::Auto);
template <typename T>
void ew_unary(Unary kind, int64_t n, const T* a, T* out, Exec ex = Exec::Auto);
// out = alpha*x + beta*y
template <typename T>
void ew_axpby(int64_t n, T alpha, const T* x, T beta, const T* y, T* out, Exec ex = Exec::Auto);
// out = a * b elementwise where gate selects backward masks etc.
template <typename T>
void ew_relu_backward(int64_t n, const T* g, const T* x, T* dx, Exec ex = Exec::Auto);

// Convolution lowering. cols is [Cin*kh*kw, B*OH*OW].
template <typename T>
void im2col(const T* x, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* cols, Exec ex = Exec::Auto);
// Scatter of dcols back to dx. dx must be zeroed by the caller.
template <typename T>
void col2im(const T* dcols, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* dx, Exec ex = Exec::Auto);
// out[b,c,p] = out2[c, b*P+p] + bias[c]  (bias may be null)
template <typename T>
void cols_to_bchw(const T* out2, int64_t B, int64_t C, int64_t P, const T* bias, T* out,
                  Exec ex = Exec::Auto);
// gout2[c, b*P+p] = g[b,c,p]; gout2t is the [B*P, C] transpose (either may be null)
template <typename T>
void bchw_to_cols(const T* g, int64_t B, int64_t C, int64_t P, T* gout2, T* gout2t,
                  Exec ex = Exec::Auto);

// Per-row reductions over row-major A[R, n].
template <typename T>
void row_sums(int64_t R, int64_t n, const T* a, T* out, Exec ex = Exec::Auto);
template <typename T>
void row_sqnorms(int64_t R, int64_t n, const T* a, T* out, Exec ex = Exec::Auto);

// Batch norm over [B,C,HW] layout, statistics per channel.
template <typename T>
void bn_train_forward(const T* x, int64_t B, int64_t C, int64_t HW, const T* gamma, const T* beta,
                      T eps, T* y, T* xhat, T* mean, T* invstd, Exec ex = Exec::Auto);
template <typename T>
void bn_eval_forward(const T* x, int64_t B, int64_t C, int64_t HW, const T* gamma, const T* beta,
                     const T* rmean, const T* rvar, T eps, T* y, T* xhat = nullptr,
                     Exec ex = Exec::Auto);
template <typename T>
void bn_train_backward(const T* g, const T* xhat, const T* gamma, const T* invstd, int64_t B,
                       int64_t C, int64_t HW, T* dx, T* dgamma, T* dbeta, Exec ex = Exec::Auto);
template <typename T>
void bn_eval_backward(const T* g, const T* xhat, const T* gamma, const T* rvar, T eps, int64_t B,
                      int64_t C, int64_t HW, T* dx, T* dgamma, T* dbeta, Exec ex = Exec::Auto);

// Pooling over [B,C,H,W]; argmax records the flat in-plane index.
template <typename T>
void pool_max_forward(const T* x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                      int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* y, int32_t* argmax,
                      Exec ex = Exec::Auto);
template <typename T>
void pool_max_backward(const T* g, const int32_t* argmax, int64_t B, int64_t C, int64_t H,
                       int64_t W, int64_t OH, int64_t OW, T* dx, Exec ex = Exec::Auto);
template <typename T>
void pool_avg_forward(const T* x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                      int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* y, Exec ex = Exec::Auto);
template <typename T>
void pool_avg_backward(const T* g, int64_t B, int64_t C, int64_t H, int64_t W, int64_t wh,
                       int64_t ww, int64_t stride, int64_t OH, int64_t OW, T* dx, Exec ex = Exec::Auto);

// Softmax cross entropy with per-row soft targets; loss is the batch mean.
template <typename T>
void softmax_ce_forward(const T* logits, const T* targets, int64_t B, int64_t N, T* softmax,
                        T* loss, Exec ex = Exec::Auto);
template <typename T>
void softmax_ce_backward(const T* softmax, const T* targets, int64_t B, int64_t N, T gscale,
                         T* dlogits, Exec ex = Exec::Auto);

// Batch-index selection. rowelems is the per-row element count.
template <typename T>
void gather_rows(const T* x, int64_t B, int64_t rowelems, const int32_t* perm, T* y,
                 Exec ex = Exec::Auto);
// dx[perm[i]] += g[i]; rows referenced twice accumulate both, in ascending i order.
template <typename T>
void scatter_add_rows(const T* g, int64_t B, int64_t rowelems, const int32_t* perm, T* dx,
                      Exec ex = Exec::Auto);

// Channel-wise mix: out[b,c] plane = mask[b,c] ? h : hp.
template <typename T>
void channel_mix_forward(const T* h, const T* hp, const uint8_t* mask, int64_t B, int64_t C,
                         int64_t HW, T* out, Exec ex = Exec::Auto);
template <typename T>
void channel_mix_backward(const T* g, const uint8_t* mask, int64_t B, int64_t C, int64_t HW,
                          T* dh, T* dhp, Exec ex = Exec::Auto);

// Serial scalar reduction, fixed order.
template <typename T>
T reduce_sum(const T* a, int64_t n);

}  // namespace cumix::kern
