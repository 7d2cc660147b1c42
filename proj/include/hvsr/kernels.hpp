#pragma once

#include <cstdint>
#include <string>

namespace hvsr::kernels {

// Hot float32 inner loops, selected once at startup: a scalar reference
// build that runs everywhere, and an AVX2+FMA build used when the CPU
// supports it. Both are equivalence-tested against each other; elementwise
// maps must match bit-exactly, reductions and GEMM within a tolerance
// (the vector variants reassociate sums).
//
// All GEMMs accumulate: C += op(A) * op(B). Row-major, explicit leading
// dimensions.

enum class Backend { scalar, avx2 };

struct Ops {
    // C(MxN) += A(MxK) * B(KxN)
    void (*gemm_nn)(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc);
    // C(MxN) += A(KxM)^T * B(KxN)
    void (*gemm_tn)(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc);
    // C(MxN) += A(MxK) * B(NxK)^T
    void (*gemm_nt)(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc);

    void (*add)(const float* a, const float* b, float* out, int64_t n);       // out = a + b
    void (*add_inplace)(float* a, const float* b, int64_t n);                 // a += b
    void (*axpy)(float alpha, const float* x, float* y, int64_t n);           // y += alpha * x
    void (*mul)(const float* a, const float* b, float* out, int64_t n);       // out = a * b
    void (*scale)(const float* a, float alpha, float* out, int64_t n);        // out = alpha * a
    void (*fma_scalar)(const float* h, const float* g, float alpha, float* out, int64_t n);  // out = h + alpha*g

    double (*sum)(const float* a, int64_t n);
    double (*sumsq)(const float* a, int64_t n);
};

bool avx2_supported();
Backend backend();
void set_backend(Backend b);            // throws ArgumentError if unsupported on this CPU
bool set_backend(const std::string& name);  // "auto" | "scalar" | "avx2"; false on unknown name
const char* backend_name();
const Ops& active();

namespace ref {
extern const Ops ops;

// Double-precision reference path used by the float64 graph instantiation
// (gradient checks). No vector variants; precision matters there, not speed.
void gemm_nn_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc);
void gemm_tn_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc);
void gemm_nt_d(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc);
}  // namespace ref

namespace avx2 {
// Null when the binary was built without AVX2 support.
extern const Ops* ops;
}

// Type-dispatched helpers so templated graph code can call one name.
inline void gemm_nn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    active().gemm_nn(M, N, K, A, lda, B, ldb, C, ldc);
}
inline void gemm_tn(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    active().gemm_tn(M, N, K, A, lda, B, ldb, C, ldc);
}
inline void gemm_nt(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc) {
    active().gemm_nt(M, N, K, A, lda, B, ldb, C, ldc);
}
inline void gemm_nn(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    ref::gemm_nn_d(M, N, K, A, lda, B, ldb, C, ldc);
}
inline void gemm_tn(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    ref::gemm_tn_d(M, N, K, A, lda, B, ldb, C, ldc);
}
inline void gemm_nt(int M, int N, int K, const double* A, int lda, const double* B, int ldb, double* C, int ldc) {
    ref::gemm_nt_d(M, N, K, A, lda, B, ldb, C, ldc);
}

}  // namespace hvsr::kernels
