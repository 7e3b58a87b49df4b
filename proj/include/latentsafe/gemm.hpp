#pragma once

#include <cstdint>
#include <cstring>

// Dense double-precision GEMM kernels, row-major. These carry nearly all of
// the training FLOPs (conv via im2col, dense layers, their backward passes),
// so the inner loops are register-blocked by hand. Single-threaded and
// bitwise deterministic: every output element is a dot product evaluated in
// a fixed order.

namespace latentsafe {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(int64_t M, int64_t N, int64_t K,
                    const double* A, const double* B, double* C) {
    constexpr int64_t MR = 8;
    int64_t i = 0;
    for (; i + MR <= M; i += MR) {
        const double* a0 = A + (i + 0) * K;
        const double* a1 = A + (i + 1) * K;
        const double* a2 = A + (i + 2) * K;
        const double* a3 = A + (i + 3) * K;
        const double* a4 = A + (i + 4) * K;
        const double* a5 = A + (i + 5) * K;
        const double* a6 = A + (i + 6) * K;
        const double* a7 = A + (i + 7) * K;
        double* c0 = C + (i + 0) * N;
        double* c1 = C + (i + 1) * N;
        double* c2 = C + (i + 2) * N;
        double* c3 = C + (i + 3) * N;
        double* c4 = C + (i + 4) * N;
        double* c5 = C + (i + 5) * N;
        double* c6 = C + (i + 6) * N;
        double* c7 = C + (i + 7) * N;
        for (int64_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            const double v4 = a4[k], v5 = a5[k], v6 = a6[k], v7 = a7[k];
            for (int64_t j = 0; j < N; ++j) {
                const double bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
                c4[j] += v4 * bj;
                c5[j] += v5 * bj;
                c6[j] += v6 * bj;
                c7[j] += v7 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const double v = a[k];
            const double* b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += v * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T   (i.e. C[i][j] += dot(A_row_i, B_row_j))
inline void gemm_nt(int64_t M, int64_t N, int64_t K,
                    const double* A, const double* B, double* C) {
    constexpr int64_t NR = 4;
    for (int64_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        int64_t j = 0;
        for (; j + NR <= N; j += NR) {
            const double* b0 = B + (j + 0) * K;
            const double* b1 = B + (j + 1) * K;
            const double* b2 = B + (j + 2) * K;
            const double* b3 = B + (j + 3) * K;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int64_t k = 0; k < K; ++k) {
                const double av = a[k];
                s0 += av * b0[k];
                s1 += av * b1[k];
                s2 += av * b2[k];
                s3 += av * b3[k];
            }
            c[j + 0] += s0;
            c[j + 1] += s1;
            c[j + 2] += s2;
            c[j + 3] += s3;
        }
        for (; j < N; ++j) {
            const double* b = B + j * K;
            double s = 0;
            for (int64_t k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] += s;
        }
    }
}

// C[M,N] op= A[K,M]^T * B[K,N]   (rank-K accumulation over rows of A and B).
// Accumulate=false writes C outright, sparing callers a zero-fill pass.
template <bool Accumulate>
inline void gemm_tn_impl(int64_t M, int64_t N, int64_t K,
                         const double* A, const double* B, double* C) {
    // Block columns of C so the active panel stays cache-resident.
    constexpr int64_t NB = 2048;
    constexpr int64_t MR = 4;
    for (int64_t j0 = 0; j0 < N; j0 += NB) {
        const int64_t jend = j0 + NB < N ? j0 + NB : N;
        int64_t i = 0;
        for (; i + MR <= M; i += MR) {
            double* c0 = C + (i + 0) * N;
            double* c1 = C + (i + 1) * N;
            double* c2 = C + (i + 2) * N;
            double* c3 = C + (i + 3) * N;
            for (int64_t k = 0; k < K; ++k) {
                const double* ar = A + k * M + i;
                const double* b = B + k * N;
                const double v0 = ar[0], v1 = ar[1], v2 = ar[2], v3 = ar[3];
                if (!Accumulate && k == 0) {
                    for (int64_t j = j0; j < jend; ++j) {
                        const double bj = b[j];
                        c0[j] = v0 * bj;
                        c1[j] = v1 * bj;
                        c2[j] = v2 * bj;
                        c3[j] = v3 * bj;
                    }
                    continue;
                }
                for (int64_t j = j0; j < jend; ++j) {
                    const double bj = b[j];
                    c0[j] += v0 * bj;
                    c1[j] += v1 * bj;
                    c2[j] += v2 * bj;
                    c3[j] += v3 * bj;
                }
            }
        }
        for (; i < M; ++i) {
            double* c = C + i * N;
            for (int64_t k = 0; k < K; ++k) {
                const double v = A[k * M + i];
                const double* b = B + k * N;
                if (!Accumulate && k == 0) {
                    for (int64_t j = j0; j < jend; ++j) c[j] = v * b[j];
                    continue;
                }
                for (int64_t j = j0; j < jend; ++j) c[j] += v * b[j];
            }
        }
    }
}

inline void gemm_tn(int64_t M, int64_t N, int64_t K,
                    const double* A, const double* B, double* C) {
    gemm_tn_impl<true>(M, N, K, A, B, C);
}

// C = A^T * B with no prior contents assumed
inline void gemm_tn0(int64_t M, int64_t N, int64_t K,
                     const double* A, const double* B, double* C) {
    gemm_tn_impl<false>(M, N, K, A, B, C);
}

}  // namespace latentsafe
