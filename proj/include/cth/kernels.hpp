#pragma once

#include <cstdint>

namespace cth::kern {

// Pin the BLAS backend to a single thread; all threading is ours.
void init_blas_single_thread();

// Row-major C[M,N] = alpha*op(A)[M,K]*op(B)[K,N] + beta*C
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

inline int64_t conv_out_len(int64_t l, int64_t k, int64_t stride, int64_t pad) {
    return (l + 2 * pad - k) / stride + 1;
}

// Batched 1D convolution, zero padding.
//   x[B,Ci,L]  w[Co,Ci,K]  bias[Co] (may be null)  y[B,Co,Lo]
template <typename T>
void conv1d_fwd(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Ci, int64_t L,
                int64_t Co, int64_t K, int64_t stride, int64_t pad);

// Any of gx, gw, gb may be null. gw/gb are accumulated into; gx is overwritten.
template <typename T>
void conv1d_bwd(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B, int64_t Ci,
                int64_t L, int64_t Co, int64_t K, int64_t stride, int64_t pad);

// Plain-loop serial references, kept as the independent route for tests and
// the kernel benchmark.
template <typename T>
void conv1d_fwd_ref(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Ci, int64_t L,
                    int64_t Co, int64_t K, int64_t stride, int64_t pad);
template <typename T>
void conv1d_bwd_ref(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B,
                    int64_t Ci, int64_t L, int64_t Co, int64_t K, int64_t stride, int64_t pad);

//   x[B,Fi]  w[Fo,Fi]  bias[Fo] (may be null)  y[B,Fo]
template <typename T>
void linear_fwd(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Fi, int64_t Fo);
template <typename T>
void linear_bwd(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B, int64_t Fi,
                int64_t Fo);
template <typename T>
void linear_fwd_ref(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Fi,
                    int64_t Fo);

}  // namespace cth::kern
