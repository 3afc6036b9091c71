#include "cth/kernels.hpp"

#include <cstring>
#include <vector>

#include "cth/parallel.hpp"

#include <cblas.h>

extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace cth::kern {

void init_blas_single_thread() {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
}

namespace {
struct BlasInit {
    BlasInit() { init_blas_single_thread(); }
} blas_init;
}  // namespace

template <>
void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
                 int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
                  int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

namespace {

// reusable per-thread scratch; lifetimes at each call site do not overlap
template <typename T>
T* tls_scratch(size_t n) {
    thread_local std::vector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf.data();
}

// col[(ci*K+k), lo] = x[ci, lo*stride + k - pad], zero outside; rows are
// written with leading dimension ld so callers can target batch sub-blocks.
template <typename T>
void im2col_ld(const T* x, T* col, int64_t ld, int64_t Ci, int64_t L, int64_t K, int64_t stride,
               int64_t pad, int64_t Lo) {
    for (int64_t ci = 0; ci < Ci; ++ci) {
        for (int64_t k = 0; k < K; ++k) {
            T* row = col + (ci * K + k) * ld;
            const T* src = x + ci * L;
            for (int64_t lo = 0; lo < Lo; ++lo) {
                int64_t li = lo * stride + k - pad;
                row[lo] = (li >= 0 && li < L) ? src[li] : T(0);
            }
        }
    }
}

template <typename T>
void im2col(const T* x, T* col, int64_t Ci, int64_t L, int64_t K, int64_t stride, int64_t pad,
            int64_t Lo) {
    im2col_ld(x, col, Lo, Ci, L, K, stride, pad, Lo);
}

template <typename T>
void col2im_acc(const T* col, T* gx, int64_t Ci, int64_t L, int64_t K, int64_t stride, int64_t pad,
                int64_t Lo) {
    for (int64_t ci = 0; ci < Ci; ++ci) {
        for (int64_t k = 0; k < K; ++k) {
            const T* row = col + (ci * K + k) * Lo;
            T* dst = gx + ci * L;
            for (int64_t lo = 0; lo < Lo; ++lo) {
                int64_t li = lo * stride + k - pad;
                if (li >= 0 && li < L) dst[li] += row[lo];
            }
        }
    }
}

}  // namespace

// Convolutions run as one GEMM over the whole batch in a [rows, B*Lo]
// layout; gathers/scatters between the [B,C,L] tensors and that layout are
// parallel over disjoint per-item blocks, so results are bit-identical for
// any thread count.
template <typename T>
void conv1d_fwd(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Ci, int64_t L,
                int64_t Co, int64_t K, int64_t stride, int64_t pad) {
    const int64_t Lo = conv_out_len(L, K, stride, pad);
    const int64_t CiK = Ci * K;
    thread_local std::vector<T> col_big, y_big;
    if (col_big.size() < static_cast<size_t>(CiK * B * Lo))
        col_big.resize(static_cast<size_t>(CiK * B * Lo));
    if (y_big.size() < static_cast<size_t>(Co * B * Lo))
        y_big.resize(static_cast<size_t>(Co * B * Lo));
    T* const colp = col_big.data();
    T* const ybp = y_big.data();
    parallel_for(B, [&, colp](int64_t b) {
        im2col_ld(x + b * Ci * L, colp + b * Lo, B * Lo, Ci, L, K, stride, pad, Lo);
    });
    gemm<T>(false, false, Co, B * Lo, CiK, T(1), w, CiK, colp, B * Lo, T(0), ybp, B * Lo);
    parallel_for(B, [&, ybp](int64_t b) {
        for (int64_t co = 0; co < Co; ++co) {
            const T* src = ybp + co * B * Lo + b * Lo;
            T* dst = y + (b * Co + co) * Lo;
            const T add = bias ? bias[co] : T(0);
            for (int64_t lo = 0; lo < Lo; ++lo) dst[lo] = src[lo] + add;
        }
    });
}

template <typename T>
void conv1d_bwd(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B, int64_t Ci,
                int64_t L, int64_t Co, int64_t K, int64_t stride, int64_t pad) {
    const int64_t Lo = conv_out_len(L, K, stride, pad);
    const int64_t CiK = Ci * K;
    thread_local std::vector<T> gy_big;
    if (gy_big.size() < static_cast<size_t>(Co * B * Lo))
        gy_big.resize(static_cast<size_t>(Co * B * Lo));
    T* const gyp = gy_big.data();
    parallel_for(B, [&, gyp](int64_t b) {
        for (int64_t co = 0; co < Co; ++co)
            std::memcpy(gyp + co * B * Lo + b * Lo, gy + (b * Co + co) * Lo,
                        sizeof(T) * static_cast<size_t>(Lo));
    });
    if (gx) {
        thread_local std::vector<T> gcol_big;
        if (gcol_big.size() < static_cast<size_t>(CiK * B * Lo))
            gcol_big.resize(static_cast<size_t>(CiK * B * Lo));
        T* const gcolp = gcol_big.data();
        gemm<T>(true, false, CiK, B * Lo, Co, T(1), w, CiK, gyp, B * Lo, T(0), gcolp, B * Lo);
        parallel_for(B, [&, gcolp](int64_t b) {
            T* scratch = tls_scratch<T>(static_cast<size_t>(CiK * Lo));
            for (int64_t r = 0; r < CiK; ++r)
                std::memcpy(scratch + r * Lo, gcolp + r * B * Lo + b * Lo,
                            sizeof(T) * static_cast<size_t>(Lo));
            col2im_acc(scratch, gx + b * Ci * L, Ci, L, K, stride, pad, Lo);
        });
    }
    if (gw) {
        thread_local std::vector<T> col_big;
        if (col_big.size() < static_cast<size_t>(CiK * B * Lo))
            col_big.resize(static_cast<size_t>(CiK * B * Lo));
        T* const colp = col_big.data();
        parallel_for(B, [&, colp](int64_t b) {
            im2col_ld(x + b * Ci * L, colp + b * Lo, B * Lo, Ci, L, K, stride, pad, Lo);
        });
        gemm<T>(false, true, Co, CiK, B * Lo, T(1), gyp, B * Lo, colp, B * Lo, T(1), gw, CiK);
    }
    if (gb) {
        for (int64_t co = 0; co < Co; ++co) {
            T s = T(0);
            const T* row = gyp + co * B * Lo;
            for (int64_t i = 0; i < B * Lo; ++i) s += row[i];
            gb[co] += s;
        }
    }
}

template <typename T>
void conv1d_fwd_ref(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Ci, int64_t L,
                    int64_t Co, int64_t K, int64_t stride, int64_t pad) {
    const int64_t Lo = conv_out_len(L, K, stride, pad);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t lo = 0; lo < Lo; ++lo) {
                T acc = bias ? bias[co] : T(0);
                for (int64_t ci = 0; ci < Ci; ++ci)
                    for (int64_t k = 0; k < K; ++k) {
                        int64_t li = lo * stride + k - pad;
                        if (li >= 0 && li < L)
                            acc += w[(co * Ci + ci) * K + k] * x[(b * Ci + ci) * L + li];
                    }
                y[(b * Co + co) * Lo + lo] = acc;
            }
}

template <typename T>
void conv1d_bwd_ref(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B,
                    int64_t Ci, int64_t L, int64_t Co, int64_t K, int64_t stride, int64_t pad) {
    const int64_t Lo = conv_out_len(L, K, stride, pad);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t lo = 0; lo < Lo; ++lo) {
                const T g = gy[(b * Co + co) * Lo + lo];
                if (gb) gb[co] += g;
                for (int64_t ci = 0; ci < Ci; ++ci)
                    for (int64_t k = 0; k < K; ++k) {
                        int64_t li = lo * stride + k - pad;
                        if (li < 0 || li >= L) continue;
                        if (gw) gw[(co * Ci + ci) * K + k] += g * x[(b * Ci + ci) * L + li];
                        if (gx) gx[(b * Ci + ci) * L + li] += g * w[(co * Ci + ci) * K + k];
                    }
            }
}

template <typename T>
void linear_fwd(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Fi, int64_t Fo) {
    gemm<T>(false, true, B, Fo, Fi, T(1), x, Fi, w, Fi, T(0), y, Fo);
    if (bias)
        for (int64_t b = 0; b < B; ++b)
            for (int64_t f = 0; f < Fo; ++f) y[b * Fo + f] += bias[f];
}

template <typename T>
void linear_bwd(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, int64_t B, int64_t Fi,
                int64_t Fo) {
    if (gx) gemm<T>(false, false, B, Fi, Fo, T(1), gy, Fo, w, Fi, T(1), gx, Fi);
    if (gw) gemm<T>(true, false, Fo, Fi, B, T(1), gy, Fo, x, Fi, T(1), gw, Fi);
    if (gb)
        for (int64_t b = 0; b < B; ++b)
            for (int64_t f = 0; f < Fo; ++f) gb[f] += gy[b * Fo + f];
}

template <typename T>
void linear_fwd_ref(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Fi,
                    int64_t Fo) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t f = 0; f < Fo; ++f) {
            T acc = bias ? bias[f] : T(0);
            for (int64_t i = 0; i < Fi; ++i) acc += x[b * Fi + i] * w[f * Fi + i];
            y[b * Fo + f] = acc;
        }
}

#define CTH_INSTANTIATE(T)                                                                      \
    template void conv1d_fwd<T>(const T*, const T*, const T*, T*, int64_t, int64_t, int64_t,   \
                                int64_t, int64_t, int64_t, int64_t);                           \
    template void conv1d_bwd<T>(const T*, const T*, const T*, T*, T*, T*, int64_t, int64_t,    \
                                int64_t, int64_t, int64_t, int64_t, int64_t);                  \
    template void conv1d_fwd_ref<T>(const T*, const T*, const T*, T*, int64_t, int64_t,        \
                                    int64_t, int64_t, int64_t, int64_t, int64_t);              \
    template void conv1d_bwd_ref<T>(const T*, const T*, const T*, T*, T*, T*, int64_t,         \
                                    int64_t, int64_t, int64_t, int64_t, int64_t, int64_t);     \
    template void linear_fwd<T>(const T*, const T*, const T*, T*, int64_t, int64_t, int64_t);  \
    template void linear_bwd<T>(const T*, const T*, const T*, T*, T*, T*, int64_t, int64_t,    \
                                int64_t);                                                      \
    template void linear_fwd_ref<T>(const T*, const T*, const T*, T*, int64_t, int64_t, int64_t);

CTH_INSTANTIATE(float)
CTH_INSTANTIATE(double)
#undef CTH_INSTANTIATE

}  // namespace cth::kern
