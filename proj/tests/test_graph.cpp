#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hvsr/dmol.hpp"
#include "hvsr/graph.hpp"
#include "hvsr/rng.hpp"
#include "hvsr/tensor.hpp"

using namespace hvsr;

namespace {

using BuildFn = std::function<GraphD::Var(GraphD&, const std::vector<GraphD::Var>&)>;

double eval_scalar(const std::vector<Tensor<double>>& leaves, const BuildFn& build) {
    GraphD g;
    std::vector<GraphD::Var> vars;
    for (const auto& t : leaves) vars.push_back(g.leaf(t, false));
    return g.scalar(build(g, vars));
}

// Central finite differences at float64, step 1e-5, against the tape's
// analytic gradients.
void gradcheck(std::vector<Tensor<double>> leaves, const BuildFn& build, double tol = 1e-4) {
    const double step = 1e-5;
    GraphD g;
    std::vector<GraphD::Var> vars;
    for (const auto& t : leaves) vars.push_back(g.leaf(t, true));
    GraphD::Var loss = build(g, vars);
    g.backward(loss);
    for (size_t li = 0; li < leaves.size(); ++li) {
        const auto& analytic = g.grad(vars[li]);
        for (int64_t i = 0; i < leaves[li].numel(); ++i) {
            auto perturbed = leaves;
            perturbed[li].v[static_cast<size_t>(i)] += step;
            double up = eval_scalar(perturbed, build);
            perturbed[li].v[static_cast<size_t>(i)] -= 2 * step;
            double dn = eval_scalar(perturbed, build);
            double fd = (up - dn) / (2 * step);
            double a = analytic[static_cast<size_t>(i)];
            double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
            CAPTURE(li);
            CAPTURE(i);
            CAPTURE(a);
            CAPTURE(fd);
            REQUIRE(rel < tol);
        }
    }
}

Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& x : t.v) x = lo + rng.uniform() * (hi - lo);
    return t;
}

}  // namespace

TEST_CASE("gradcheck: elementwise and shape ops") {
    Rng rng(42);
    auto a = random_tensor(rng, {1, 2, 3, 3});
    auto b = random_tensor(rng, {1, 2, 3, 3});
    gradcheck({a, b}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        auto x = g.mul(g.add(v[0], v[1]), g.sub(v[0], v[1]));
        return g.sum(g.scale(x, 1.7));
    });
    gradcheck({a}, [](GraphD& g, const std::vector<GraphD::Var>& v) { return g.sum(g.gelu(v[0])); });
    gradcheck({a}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.clamp(v[0], -0.5, 0.5)));
    });
    gradcheck({a, b}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.slice_ch(g.concat_ch(v[0], v[1]), 1, 3));
    });
    auto chw = random_tensor(rng, {2, 3, 3});
    gradcheck({chw}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.tile_batch(v[0], 3)));
    });
}

TEST_CASE("gradcheck: conv2d, pooling, upsampling") {
    Rng rng(43);
    auto x = random_tensor(rng, {2, 3, 4, 4});
    auto w3 = random_tensor(rng, {2, 3, 3, 3}, -0.5, 0.5);
    auto b3 = random_tensor(rng, {2});
    gradcheck({x, w3, b3}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.conv2d(v[0], v[1], v[2])));
    });
    auto w1 = random_tensor(rng, {4, 3, 1, 1}, -0.5, 0.5);
    auto b1 = random_tensor(rng, {4});
    gradcheck({x, w1, b1}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.conv2d(v[0], v[1], v[2])));
    });
    gradcheck({x}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.avg_pool(v[0], 2)));
    });
    gradcheck({x}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.upsample_nearest(v[0], 2)));
    });
}

TEST_CASE("gradcheck: gated fusion and reparameterization") {
    Rng rng(44);
    auto h = random_tensor(rng, {1, 3, 2, 2});
    auto gv = random_tensor(rng, {1, 3, 2, 2});
    auto alpha = random_tensor(rng, {1}, -0.7, 0.7);
    gradcheck({h, gv, alpha}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gelu(g.add_gated(v[0], v[1], v[2])));
    });

    auto mean = random_tensor(rng, {1, 2, 2, 2});
    auto logstd = random_tensor(rng, {1, 2, 2, 2}, -1.5, 0.5);
    Tensor<double> epsT({1, 2, 2, 2});
    for (auto& e : epsT.v) e = rng.normal();
    gradcheck({mean, logstd}, [epsT](GraphD& g, const std::vector<GraphD::Var>& v) {
        auto eps = g.leaf(epsT, false);
        return g.sum(g.gelu(g.reparam(v[0], v[1], eps, 0.8)));
    });
}

TEST_CASE("gaussian_kl closed form values") {
    GraphD g;
    // KL(N(1,1) || N(0,1)) = 0.5
    Tensor<double> qm({1}), qls({1}), pm({1}), pls({1});
    qm.v[0] = 1.0;
    auto kl = g.gaussian_kl(g.leaf(qm, false), g.leaf(qls, false), g.leaf(pm, false), g.leaf(pls, false));
    CHECK(g.val(kl)[0] == doctest::Approx(0.5).epsilon(1e-12));

    // KL(N(0,e) || N(0,1)) = e^2/2 - 1.5
    Tensor<double> qls2({1});
    qls2.v[0] = 1.0;
    auto kl2 = g.gaussian_kl(g.leaf(qm, false), g.leaf(qls2, false), g.leaf(pm, false), g.leaf(pls, false));
    double expected = std::exp(2.0) / 2.0 - 1.5 + 0.5;  // qm=1 adds (1-0)^2/2
    CHECK(g.val(kl2)[0] == doctest::Approx(expected).epsilon(1e-12));

    Tensor<double> zero({1});
    auto kl3 = g.gaussian_kl(g.leaf(zero, false), g.leaf(qls2, false), g.leaf(zero, false), g.leaf(pls, false));
    CHECK(g.val(kl3)[0] == doctest::Approx(std::exp(2.0) / 2.0 - 1.5).epsilon(1e-12));

    // KL(q || q) = 0
    auto kl4 = g.gaussian_kl(g.leaf(qm, false), g.leaf(qls2, false), g.leaf(qm, false), g.leaf(qls2, false));
    CHECK(g.val(kl4)[0] == 0.0);
}

TEST_CASE("gradcheck: gaussian_kl") {
    Rng rng(45);
    auto qm = random_tensor(rng, {1, 2, 2, 2});
    auto qls = random_tensor(rng, {1, 2, 2, 2}, -1.0, 0.7);
    auto pm = random_tensor(rng, {1, 2, 2, 2});
    auto pls = random_tensor(rng, {1, 2, 2, 2}, -1.0, 0.7);
    gradcheck({qm, qls, pm, pls}, [](GraphD& g, const std::vector<GraphD::Var>& v) {
        return g.sum(g.gaussian_kl(v[0], v[1], v[2], v[3]));
    });
}

TEST_CASE("gaussian_kl matches Monte-Carlo estimate within 3 standard errors") {
    Rng rng(404);
    for (int trial = 0; trial < 5; ++trial) {
        double qm = rng.uniform() * 2 - 1, qls = rng.uniform() * 1.2 - 0.8;
        double pm = rng.uniform() * 2 - 1, pls = rng.uniform() * 1.2 - 0.8;
        GraphD g;
        Tensor<double> a({1}, qm), b({1}, qls), c({1}, pm), d({1}, pls);
        double analytic = g.val(g.gaussian_kl(g.leaf(a, false), g.leaf(b, false), g.leaf(c, false),
                                              g.leaf(d, false)))[0];
        const int n = 100000;
        double qs = std::exp(qls), ps = std::exp(pls);
        double mean = 0, m2 = 0;
        for (int i = 1; i <= n; ++i) {
            double z = qm + qs * rng.normal();
            double lq = -0.5 * (z - qm) * (z - qm) / (qs * qs) - qls;
            double lp = -0.5 * (z - pm) * (z - pm) / (ps * ps) - pls;
            double x = lq - lp;
            double delta = x - mean;
            mean += delta / i;
            m2 += delta * (x - mean);
        }
        double se = std::sqrt(m2 / (n - 1.0) / n);
        CAPTURE(analytic);
        CAPTURE(mean);
        CHECK(std::fabs(analytic - mean) < 3.0 * se + 1e-12);
    }
}

TEST_CASE("kl non-negativity on random parameters") {
    Rng rng(47);
    GraphD g;
    auto t = [&](double lo, double hi) { return random_tensor(rng, {1, 4, 3, 3}, lo, hi); };
    auto kl = g.gaussian_kl(g.leaf(t(-2, 2), false), g.leaf(t(-2, 1), false), g.leaf(t(-2, 2), false),
                            g.leaf(t(-2, 1), false));
    for (double x : g.val(kl)) CHECK(x >= -1e-6);
}

TEST_CASE("dmol: bin probabilities over all 256 values sum to 1") {
    Rng rng(48);
    const int M = 3;
    for (int draw = 0; draw < 10; ++draw) {
        Tensor<double> params({1, 10 * M, 1, 1});
        for (int m = 0; m < M; ++m) {
            params.v[static_cast<size_t>(m)] = rng.uniform() * 4 - 2;                      // logits
            for (int c = 0; c < 3; ++c) {
                params.v[static_cast<size_t>(M + m * 3 + c)] = rng.uniform() * 2 - 1;      // means
                params.v[static_cast<size_t>(4 * M + m * 3 + c)] = rng.uniform() * 8 - 6;  // logscales
                params.v[static_cast<size_t>(7 * M + m * 3 + c)] = rng.uniform() * 2 - 1;  // coeffs
            }
        }
        uint8_t rgb[3] = {static_cast<uint8_t>(rng.below(256)), static_cast<uint8_t>(rng.below(256)),
                          static_cast<uint8_t>(rng.below(256))};
        dmol::PixelView<double> view{params.v.data(), 1, M};
        for (int c = 0; c < 3; ++c) {
            double total = 0.0;
            for (int v = 0; v < 256; ++v) total += std::exp(dmol::channel_logprob(view, rgb, c, v));
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("dmol: single component centered on the pixel") {
    // Oracle: the CDF difference of a logistic centered exactly on the bin,
    // evaluated directly.
    const int M = 1;
    Tensor<double> params({1, 10 * M, 1, 1});
    uint8_t rgb[3] = {77, 130, 200};
    for (int c = 0; c < 3; ++c) {
        params.v[static_cast<size_t>(M + c)] = dmol::to_normalized<double>(rgb[c]);
        params.v[static_cast<size_t>(4 * M + c)] = -7.0;
    }
    double h = 1.0 / 255.0, s = std::exp(-7.0);
    auto sigma = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double oracle = sigma(h / s) - sigma(-h / s);
    CHECK(oracle > 0.97);  // ~0.9733 for log-scale -7

    dmol::PixelView<double> view{params.v.data(), 1, M};
    for (int c = 0; c < 3; ++c) {
        double lp = dmol::channel_logprob(view, rgb, c, rgb[c]);
        CHECK(lp == doctest::Approx(std::log(oracle)).epsilon(1e-9));
    }
}

TEST_CASE("dmol: shifting means away from the image lowers the likelihood") {
    Rng rng(49);
    const int M = 2, H = 2, W = 2;
    Tensor<double> params({1, 10 * M, H, W});
    std::vector<uint8_t> img(static_cast<size_t>(H) * W * 3);
    for (auto& p : img) p = static_cast<uint8_t>(20 + rng.below(216));
    for (auto& x : params.v) x = rng.uniform() * 0.2 - 0.1;
    // center the means on the image
    const int64_t hw = H * W;
    for (int64_t pix = 0; pix < hw; ++pix)
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < 3; ++c)
                params.v[static_cast<size_t>((M + m * 3 + c) * hw + pix)] =
                    dmol::to_normalized<double>(img[static_cast<size_t>(pix) * 3 + c]);
    double base = dmol::image_logprob(img.data(), H, W, params.v.data(), M);
    auto shifted = params;
    for (int64_t pix = 0; pix < hw; ++pix)
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < 3; ++c) shifted.v[static_cast<size_t>((M + m * 3 + c) * hw + pix)] += 2.0 / 127.5;
    double worse = dmol::image_logprob(img.data(), H, W, shifted.v.data(), M);
    CHECK(worse < base);
}

TEST_CASE("gradcheck: dmol negative log-likelihood") {
    Rng rng(50);
    const int M = 2, H = 2, W = 2;
    std::vector<uint8_t> img(static_cast<size_t>(H) * W * 3);
    for (auto& p : img) p = static_cast<uint8_t>(rng.below(256));  // includes possible 0/255 edges
    Tensor<double> params({1, 10 * M, H, W});
    const int64_t hw = H * W;
    for (int m = 0; m < M; ++m)
        for (int64_t pix = 0; pix < hw; ++pix) {
            params.v[static_cast<size_t>(m * hw + pix)] = rng.uniform() * 2 - 1;
            for (int c = 0; c < 3; ++c) {
                // means near the observed value keep the CDF-difference branch
                // away from its switching threshold, where FD would be invalid
                params.v[static_cast<size_t>((M + m * 3 + c) * hw + pix)] =
                    dmol::to_normalized<double>(img[static_cast<size_t>(pix) * 3 + c]) + (rng.uniform() * 0.4 - 0.2);
                params.v[static_cast<size_t>((4 * M + m * 3 + c) * hw + pix)] = -2.5 + rng.uniform();
                params.v[static_cast<size_t>((7 * M + m * 3 + c) * hw + pix)] = rng.uniform() * 1.6 - 0.8;
            }
        }
    std::vector<const uint8_t*> imgs = {img.data()};
    gradcheck({params}, [imgs, H, W, M](GraphD& g, const std::vector<GraphD::Var>& v) {
        return dmol_nll(g, imgs, H, W, v[0], M);
    });
}

TEST_CASE("temperature zero reparameterization returns the mean exactly") {
    Rng rng(51);
    GraphF g;
    Tensor<float> mean({1, 2, 2, 2}), logstd({1, 2, 2, 2}), eps({1, 2, 2, 2});
    for (auto& x : mean.v) x = static_cast<float>(rng.uniform() * 4 - 2);
    for (auto& x : logstd.v) x = static_cast<float>(rng.uniform() - 0.5);
    for (auto& x : eps.v) x = static_cast<float>(rng.normal());
    auto z = g.reparam(g.leaf(mean, false), g.leaf(logstd, false), g.leaf(eps, false), 0.0f);
    for (size_t i = 0; i < mean.v.size(); ++i) CHECK(g.val(z)[i] == mean.v[i]);
}
