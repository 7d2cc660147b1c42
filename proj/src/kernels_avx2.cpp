#include "hvsr/kernels.hpp"

#ifdef HVSR_BUILD_AVX2

#include <immintrin.h>

namespace hvsr::kernels {

namespace {

inline double hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return static_cast<double>(_mm_cvtss_f32(lo));
}

// 4x16 register block over j; plain loads from B (no packing). The B panel
// for one j-block stays L2-resident across the i loop, which is enough at
// the matrix sizes the conv layers produce.
template <bool TransA>
void gemm_axb(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    auto a_at = [&](int i, int k) -> float {
        return TransA ? A[static_cast<int64_t>(k) * lda + i] : A[static_cast<int64_t>(i) * lda + k];
    };
    int j = 0;
    for (; j + 16 <= N; j += 16) {
        int i = 0;
        for (; i + 4 <= M; i += 4) {
            __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
            __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
            __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
            __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
            for (int k = 0; k < K; ++k) {
                const float* b = B + static_cast<int64_t>(k) * ldb + j;
                __m256 b0 = _mm256_loadu_ps(b);
                __m256 b1 = _mm256_loadu_ps(b + 8);
                __m256 a0 = _mm256_set1_ps(a_at(i + 0, k));
                __m256 a1 = _mm256_set1_ps(a_at(i + 1, k));
                __m256 a2 = _mm256_set1_ps(a_at(i + 2, k));
                __m256 a3 = _mm256_set1_ps(a_at(i + 3, k));
                c00 = _mm256_fmadd_ps(a0, b0, c00);
                c01 = _mm256_fmadd_ps(a0, b1, c01);
                c10 = _mm256_fmadd_ps(a1, b0, c10);
                c11 = _mm256_fmadd_ps(a1, b1, c11);
                c20 = _mm256_fmadd_ps(a2, b0, c20);
                c21 = _mm256_fmadd_ps(a2, b1, c21);
                c30 = _mm256_fmadd_ps(a3, b0, c30);
                c31 = _mm256_fmadd_ps(a3, b1, c31);
            }
            float* c0 = C + static_cast<int64_t>(i + 0) * ldc + j;
            float* c1 = C + static_cast<int64_t>(i + 1) * ldc + j;
            float* c2 = C + static_cast<int64_t>(i + 2) * ldc + j;
            float* c3 = C + static_cast<int64_t>(i + 3) * ldc + j;
            _mm256_storeu_ps(c0, _mm256_add_ps(_mm256_loadu_ps(c0), c00));
            _mm256_storeu_ps(c0 + 8, _mm256_add_ps(_mm256_loadu_ps(c0 + 8), c01));
            _mm256_storeu_ps(c1, _mm256_add_ps(_mm256_loadu_ps(c1), c10));
            _mm256_storeu_ps(c1 + 8, _mm256_add_ps(_mm256_loadu_ps(c1 + 8), c11));
            _mm256_storeu_ps(c2, _mm256_add_ps(_mm256_loadu_ps(c2), c20));
            _mm256_storeu_ps(c2 + 8, _mm256_add_ps(_mm256_loadu_ps(c2 + 8), c21));
            _mm256_storeu_ps(c3, _mm256_add_ps(_mm256_loadu_ps(c3), c30));
            _mm256_storeu_ps(c3 + 8, _mm256_add_ps(_mm256_loadu_ps(c3 + 8), c31));
        }
        for (; i < M; ++i) {
            __m256 c0 = _mm256_setzero_ps(), c1 = _mm256_setzero_ps();
            for (int k = 0; k < K; ++k) {
                const float* b = B + static_cast<int64_t>(k) * ldb + j;
                __m256 a = _mm256_set1_ps(a_at(i, k));
                c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b), c0);
                c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(b + 8), c1);
            }
            float* c = C + static_cast<int64_t>(i) * ldc + j;
            _mm256_storeu_ps(c, _mm256_add_ps(_mm256_loadu_ps(c), c0));
            _mm256_storeu_ps(c + 8, _mm256_add_ps(_mm256_loadu_ps(c + 8), c1));
        }
    }
    if (j < N) {
        for (int i = 0; i < M; ++i) {
            float* c = C + static_cast<int64_t>(i) * ldc;
            for (int k = 0; k < K; ++k) {
                float a = a_at(i, k);
                const float* b = B + static_cast<int64_t>(k) * ldb;
                for (int jj = j; jj < N; ++jj) c[jj] += a * b[jj];
            }
        }
    }
}

void v_gemm_nn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    gemm_axb<false>(M, N, K, A, lda, B, ldb, C, ldc);
}

void v_gemm_tn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    gemm_axb<true>(M, N, K, A, lda, B, ldb, C, ldc);
}

void v_gemm_nt(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<int64_t>(i) * lda;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<int64_t>(j) * ldb;
            __m256 acc = _mm256_setzero_ps();
            int k = 0;
            for (; k + 8 <= K; k += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc);
            float tail = 0.0f;
            for (; k < K; ++k) tail += a[k] * b[k];
            C[static_cast<int64_t>(i) * ldc + j] += static_cast<float>(hsum(acc)) + tail;
        }
    }
}

// Elementwise maps below avoid FMA on purpose: they must round exactly like
// the scalar reference so the two backends stay bit-identical per element.

void v_add(const float* a, const float* b, float* out, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_add_inplace(float* a, const float* b, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(a + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) a[i] += b[i];
}

void v_axpy(float alpha, const float* x, float* y, int64_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_mul(const float* a, const float* b, float* out, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const float* a, float alpha, float* out, int64_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(a + i)));
    for (; i < n; ++i) out[i] = alpha * a[i];
}

void v_fma_scalar(const float* h, const float* g, float alpha, float* out, int64_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(h + i), prod));
    }
    for (; i < n; ++i) out[i] = h[i] + alpha * g[i];
}

double v_sum(const float* a, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

double v_sumsq(const float* a, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(a + i);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(v, v));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += static_cast<double>(a[i]) * a[i];
    return s;
}

const Ops table = {
    v_gemm_nn, v_gemm_tn, v_gemm_nt,
    v_add, v_add_inplace, v_axpy, v_mul, v_scale, v_fma_scalar,
    v_sum, v_sumsq,
};

}  // namespace

namespace avx2 {
const Ops* ops = &table;
}

}  // namespace hvsr::kernels

#else

namespace hvsr::kernels::avx2 {
const Ops* ops = nullptr;
}

#endif
