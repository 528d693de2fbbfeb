#ifndef TACT_GEMM_HPP
#define TACT_GEMM_HPP

#include <cstddef>

#include "tact/tensor.hpp"

namespace tact {

// Row-major GEMM kernels. Every C element is produced by exactly one thread
// with a fixed k-accumulation order, so results are bit-identical for any
// OpenMP thread count.
//
//   gemm_nn: C[M,N] (+)= A[M,K]   * B[K,N]
//   gemm_tn: C[M,N] (+)= A[K,M]^T * B[K,N]
//   gemm_nt: C[M,N] (+)= A[M,K]   * B[N,K]^T

namespace detail {

inline constexpr std::size_t kMR = 4;   // rows per register tile
inline constexpr std::size_t kNR = 32;  // columns per register tile

// trans_a=false: A index [r, k] with leading dim lda; true: [k, r].
template <Real T, bool TransA>
inline T load_a(const T* a, std::size_t lda, std::size_t r, std::size_t k) {
    return TransA ? a[k * lda + r] : a[r * lda + k];
}

template <Real T, bool TransA>
inline void gemm_tile(std::size_t mr, std::size_t nr, std::size_t K, const T* __restrict__ a,
                      std::size_t lda, const T* __restrict__ b, std::size_t ldb,
                      T* __restrict__ c, std::size_t ldc, bool accumulate) {
    if (mr == kMR && nr == kNR) {
        // Named accumulator rows keep everything in vector registers; k is
        // unrolled by two to overlap the broadcast loads.
        T a0[kNR] = {}, a1[kNR] = {}, a2[kNR] = {}, a3[kNR] = {};
        std::size_t k = 0;
        for (; k + 2 <= K; k += 2) {
            const T* __restrict__ bp0 = b + k * ldb;
            const T* __restrict__ bp1 = bp0 + ldb;
            const T u0 = load_a<T, TransA>(a, lda, 0, k), u1 = load_a<T, TransA>(a, lda, 1, k),
                    u2 = load_a<T, TransA>(a, lda, 2, k), u3 = load_a<T, TransA>(a, lda, 3, k);
            const T w0 = load_a<T, TransA>(a, lda, 0, k + 1), w1 = load_a<T, TransA>(a, lda, 1, k + 1),
                    w2 = load_a<T, TransA>(a, lda, 2, k + 1), w3 = load_a<T, TransA>(a, lda, 3, k + 1);
            for (std::size_t j = 0; j < kNR; ++j) {
                const T b0 = bp0[j], b1 = bp1[j];
                a0[j] += u0 * b0;
                a1[j] += u1 * b0;
                a2[j] += u2 * b0;
                a3[j] += u3 * b0;
                a0[j] += w0 * b1;
                a1[j] += w1 * b1;
                a2[j] += w2 * b1;
                a3[j] += w3 * b1;
            }
        }
        for (; k < K; ++k) {
            const T* __restrict__ bp = b + k * ldb;
            const T v0 = load_a<T, TransA>(a, lda, 0, k), v1 = load_a<T, TransA>(a, lda, 1, k),
                    v2 = load_a<T, TransA>(a, lda, 2, k), v3 = load_a<T, TransA>(a, lda, 3, k);
            for (std::size_t j = 0; j < kNR; ++j) {
                const T bj = bp[j];
                a0[j] += v0 * bj;
                a1[j] += v1 * bj;
                a2[j] += v2 * bj;
                a3[j] += v3 * bj;
            }
        }
        if (accumulate) {
            for (std::size_t j = 0; j < kNR; ++j) {
                c[0 * ldc + j] += a0[j];
                c[1 * ldc + j] += a1[j];
                c[2 * ldc + j] += a2[j];
                c[3 * ldc + j] += a3[j];
            }
        } else {
            for (std::size_t j = 0; j < kNR; ++j) {
                c[0 * ldc + j] = a0[j];
                c[1 * ldc + j] = a1[j];
                c[2 * ldc + j] = a2[j];
                c[3 * ldc + j] = a3[j];
            }
        }
        return;
    }
    // edge tile
    for (std::size_t r = 0; r < mr; ++r) {
        T* crow = c + r * ldc;
        if (!accumulate)
            for (std::size_t j = 0; j < nr; ++j) crow[j] = T(0);
        for (std::size_t k = 0; k < K; ++k) {
            const T av = load_a<T, TransA>(a, lda, r, k);
            const T* __restrict__ bp = b + k * ldb;
            for (std::size_t j = 0; j < nr; ++j) crow[j] += av * bp[j];
        }
    }
}

template <Real T, bool TransA>
void gemm_broadcast(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                    const T* B, std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
    const std::size_t nib = (M + kMR - 1) / kMR;
    const std::size_t njb = (N + kNR - 1) / kNR;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(nib * njb);
    // i varies fastest so consecutive iterations of one thread reuse the hot B tile
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < total; ++t) {
        const std::size_t jb = static_cast<std::size_t>(t) / nib;
        const std::size_t ib = static_cast<std::size_t>(t) % nib;
        const std::size_t i0 = ib * kMR;
        const std::size_t j0 = jb * kNR;
        const std::size_t mr = std::min(kMR, M - i0);
        const std::size_t nr = std::min(kNR, N - j0);
        const T* a = TransA ? A + i0 : A + i0 * lda;
        gemm_tile<T, TransA>(mr, nr, K, a, lda, B + j0, ldb, C + i0 * ldc + j0, ldc, accumulate);
    }
}

}  // namespace detail

template <Real T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    detail::gemm_broadcast<T, false>(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <Real T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    detail::gemm_broadcast<T, true>(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <Real T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    // Dot-product form: C[i,j] = sum_k A[i,k] * B[j,k]. Each (i,j) owned by one
    // thread; lane sums are combined in a fixed order.
    const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(M);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        const T* __restrict__ arow = A + static_cast<std::size_t>(i) * lda;
        T* crow = C + static_cast<std::size_t>(i) * ldc;
        for (std::size_t j = 0; j < N; ++j) {
            const T* __restrict__ brow = B + j * ldb;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            std::size_t k = 0;
            for (; k + 4 <= K; k += 4) {
                s0 += arow[k] * brow[k];
                s1 += arow[k + 1] * brow[k + 1];
                s2 += arow[k + 2] * brow[k + 2];
                s3 += arow[k + 3] * brow[k + 3];
            }
            T s = (s0 + s1) + (s2 + s3);
            for (; k < K; ++k) s += arow[k] * brow[k];
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

}  // namespace tact

#endif
