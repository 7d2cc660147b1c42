#include "hvsr/kernels.hpp"

namespace hvsr::kernels {

namespace {

// i-k-j order: the j loop streams contiguously through B and C.
void s_gemm_nn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    for (int i = 0; i < M; ++i) {
        float* c = C + static_cast<int64_t>(i) * ldc;
        for (int k = 0; k < K; ++k) {
            float a = A[static_cast<int64_t>(i) * lda + k];
            const float* b = B + static_cast<int64_t>(k) * ldb;
            for (int j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

void s_gemm_tn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    for (int k = 0; k < K; ++k) {
        const float* arow = A + static_cast<int64_t>(k) * lda;
        const float* b = B + static_cast<int64_t>(k) * ldb;
        for (int i = 0; i < M; ++i) {
            float a = arow[i];
            float* c = C + static_cast<int64_t>(i) * ldc;
            for (int j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

void s_gemm_nt(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<int64_t>(i) * lda;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<int64_t>(j) * ldb;
            float acc = 0.0f;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            C[static_cast<int64_t>(i) * ldc + j] += acc;
        }
    }
}

void s_add(const float* a, const float* b, float* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_add_inplace(float* a, const float* b, int64_t n) {
    for (int64_t i = 0; i < n; ++i) a[i] += b[i];
}

void s_axpy(float alpha, const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_mul(const float* a, const float* b, float* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const float* a, float alpha, float* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = alpha * a[i];
}

void s_fma_scalar(const float* h, const float* g, float alpha, float* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = h[i] + alpha * g[i];
}

double s_sum(const float* a, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double s_sumsq(const float* a, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * a[i];
    return acc;
}

}  // namespace

namespace ref {

const Ops ops = {
    s_gemm_nn, s_gemm_tn, s_gemm_nt,
    s_add, s_add_inplace, s_axpy, s_mul, s_scale, s_fma_scalar,
    s_sum, s_sumsq,
};

void gemm_nn_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<int64_t>(i) * ldc;
        for (int k = 0; k < K; ++k) {
            double a = A[static_cast<int64_t>(i) * lda + k];
            const double* b = B + static_cast<int64_t>(k) * ldb;
            for (int j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

void gemm_tn_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    for (int k = 0; k < K; ++k) {
        const double* arow = A + static_cast<int64_t>(k) * lda;
        const double* b = B + static_cast<int64_t>(k) * ldb;
        for (int i = 0; i < M; ++i) {
            double a = arow[i];
            double* c = C + static_cast<int64_t>(i) * ldc;
            for (int j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

void gemm_nt_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<int64_t>(i) * lda;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<int64_t>(j) * ldb;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            C[static_cast<int64_t>(i) * ldc + j] += acc;
        }
    }
}

}  // namespace ref

}  // namespace hvsr::kernels
