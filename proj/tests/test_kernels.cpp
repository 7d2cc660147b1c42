#include <doctest.h>

#include <cmath>
#include <vector>

#include "hvsr/kernels.hpp"
#include "hvsr/rng.hpp"

using namespace hvsr;

namespace {

std::vector<float> random_vec(Rng& rng, int64_t n, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = lo + static_cast<float>(rng.uniform()) * (hi - lo);
    return v;
}

struct BackendGuard {
    kernels::Backend saved = kernels::backend();
    ~BackendGuard() { kernels::set_backend(saved); }
};

}  // namespace

TEST_CASE("gemm variants match the scalar reference") {
    if (!kernels::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(7);
    // deliberately awkward sizes: remainders in every dimension
    const int sizes[][3] = {{1, 1, 1}, {4, 16, 8}, {5, 17, 9}, {13, 33, 27}, {48, 100, 144}, {3, 250, 7}};
    for (auto [M, N, K] : sizes) {
        auto A = random_vec(rng, static_cast<int64_t>(M) * K);
        auto At = random_vec(rng, static_cast<int64_t>(K) * M);
        auto B = random_vec(rng, static_cast<int64_t>(K) * N);
        auto Bt = random_vec(rng, static_cast<int64_t>(N) * K);
        auto C0 = random_vec(rng, static_cast<int64_t>(M) * N);

        auto run = [&](kernels::Backend b, int which) {
            kernels::set_backend(b);
            auto C = C0;
            if (which == 0) kernels::active().gemm_nn(M, N, K, A.data(), K, B.data(), N, C.data(), N);
            if (which == 1) kernels::active().gemm_tn(M, N, K, At.data(), M, B.data(), N, C.data(), N);
            if (which == 2) kernels::active().gemm_nt(M, N, K, A.data(), K, Bt.data(), K, C.data(), N);
            return C;
        };
        for (int which = 0; which < 3; ++which) {
            auto ref = run(kernels::Backend::scalar, which);
            auto vec = run(kernels::Backend::avx2, which);
            double max_rel = 0.0;
            for (size_t i = 0; i < ref.size(); ++i) {
                double denom = std::max(1.0, std::fabs(static_cast<double>(ref[i])));
                max_rel = std::max(max_rel, std::fabs(static_cast<double>(ref[i]) - vec[i]) / denom);
            }
            CAPTURE(M);
            CAPTURE(N);
            CAPTURE(K);
            CAPTURE(which);
            CHECK(max_rel < 2e-5);
        }
    }
}

TEST_CASE("elementwise maps are bit-identical across backends") {
    if (!kernels::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(11);
    for (int64_t n : {1, 7, 8, 9, 64, 1000, 4097}) {
        auto a = random_vec(rng, n, -3.0f, 3.0f);
        auto b = random_vec(rng, n, -3.0f, 3.0f);
        float alpha = static_cast<float>(rng.uniform()) * 2.0f - 1.0f;

        auto run = [&](kernels::Backend be) {
            kernels::set_backend(be);
            const auto& k = kernels::active();
            std::vector<std::vector<float>> outs;
            std::vector<float> o(static_cast<size_t>(n));
            k.add(a.data(), b.data(), o.data(), n);
            outs.push_back(o);
            k.mul(a.data(), b.data(), o.data(), n);
            outs.push_back(o);
            k.scale(a.data(), alpha, o.data(), n);
            outs.push_back(o);
            k.fma_scalar(a.data(), b.data(), alpha, o.data(), n);
            outs.push_back(o);
            o = a;
            k.add_inplace(o.data(), b.data(), n);
            outs.push_back(o);
            o = a;
            k.axpy(alpha, b.data(), o.data(), n);
            outs.push_back(o);
            return outs;
        };
        auto ref = run(kernels::Backend::scalar);
        auto vec = run(kernels::Backend::avx2);
        for (size_t op = 0; op < ref.size(); ++op)
            for (int64_t i = 0; i < n; ++i) {
                CAPTURE(op);
                CAPTURE(i);
                REQUIRE(ref[op][static_cast<size_t>(i)] == vec[op][static_cast<size_t>(i)]);
            }
    }
}

TEST_CASE("gate of exactly zero leaves the base untouched bit-for-bit") {
    BackendGuard guard;
    Rng rng(3);
    auto h = random_vec(rng, 513, -10.0f, 10.0f);
    auto g = random_vec(rng, 513, -10.0f, 10.0f);
    for (auto be : {kernels::Backend::scalar, kernels::Backend::avx2}) {
        if (be == kernels::Backend::avx2 && !kernels::avx2_supported()) continue;
        kernels::set_backend(be);
        std::vector<float> out(h.size());
        kernels::active().fma_scalar(h.data(), g.data(), 0.0f, out.data(), static_cast<int64_t>(h.size()));
        for (size_t i = 0; i < h.size(); ++i) REQUIRE(out[i] == h[i]);
    }
}

TEST_CASE("reductions agree across backends within tolerance") {
    if (!kernels::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(5);
    for (int64_t n : {1, 9, 100, 12345}) {
        auto a = random_vec(rng, n, -2.0f, 2.0f);
        kernels::set_backend(kernels::Backend::scalar);
        double s0 = kernels::active().sum(a.data(), n);
        double q0 = kernels::active().sumsq(a.data(), n);
        kernels::set_backend(kernels::Backend::avx2);
        double s1 = kernels::active().sum(a.data(), n);
        double q1 = kernels::active().sumsq(a.data(), n);
        CHECK(std::fabs(s0 - s1) < 1e-3);
        CHECK(std::fabs(q0 - q1) / std::max(1.0, q0) < 1e-5);
    }
}

TEST_CASE("backend selection by name") {
    BackendGuard guard;
    CHECK(kernels::set_backend("scalar"));
    CHECK(kernels::backend() == kernels::Backend::scalar);
    CHECK(kernels::set_backend("auto"));
    CHECK_FALSE(kernels::set_backend("mmx"));
}
