#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hvsr/model.hpp"

using namespace hvsr;
using testutil::tiny_model_cfg;

namespace {

// Independent double-precision recomputation of the ELBO pieces from
// captured distribution parameters: fresh KL formula, fresh mixture CDF
// evaluation, no shared code with the implementation path.
double oracle_kl_sum(const Tensor<float>& qm, const Tensor<float>& qls, const Tensor<float>& pm,
                     const Tensor<float>& pls) {
    double total = 0;
    for (int64_t i = 0; i < qm.numel(); ++i) {
        double mq = qm.v[static_cast<size_t>(i)], lq = qls.v[static_cast<size_t>(i)];
        double mp = pm.v[static_cast<size_t>(i)], lp = pls.v[static_cast<size_t>(i)];
        double sq = std::exp(lq), sp = std::exp(lp);
        total += lp - lq + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
    }
    return total;
}

double oracle_dmol_nll(const RgbImage& img, const Tensor<float>& obs, int n_mix) {
    int H = obs.shape[2], W = obs.shape[3];
    const int64_t hw = static_cast<int64_t>(H) * W;
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double total = 0;
    for (int64_t pix = 0; pix < hw; ++pix) {
        auto at = [&](int ch) { return static_cast<double>(obs.v[static_cast<size_t>(ch * hw + pix)]); };
        double xs[3];
        for (int c = 0; c < 3; ++c) xs[c] = img.pix[static_cast<size_t>(pix) * 3 + c] / 127.5 - 1.0;
        // softmax weights
        std::vector<double> w(static_cast<size_t>(n_mix));
        double mx = -1e30;
        for (int m = 0; m < n_mix; ++m) mx = std::max(mx, at(m));
        double sum = 0;
        for (int m = 0; m < n_mix; ++m) sum += (w[static_cast<size_t>(m)] = std::exp(at(m) - mx));
        double p_total = 0;
        for (int m = 0; m < n_mix; ++m) {
            double prob = w[static_cast<size_t>(m)] / sum;
            double mus[3];
            double k0 = std::tanh(at(7 * n_mix + m * 3 + 0));
            double k1 = std::tanh(at(7 * n_mix + m * 3 + 1));
            double k2 = std::tanh(at(7 * n_mix + m * 3 + 2));
            mus[0] = at(n_mix + m * 3 + 0);
            mus[1] = at(n_mix + m * 3 + 1) + k0 * xs[0];
            mus[2] = at(n_mix + m * 3 + 2) + k1 * xs[0] + k2 * xs[1];
            for (int c = 0; c < 3; ++c) {
                int v = img.pix[static_cast<size_t>(pix) * 3 + c];
                double s = std::exp(std::max(-7.0, at(4 * n_mix + m * 3 + c)));
                double hi = (v == 255) ? 1.0 : sigmoid((xs[c] + 1.0 / 255 - mus[c]) / s);
                double lo = (v == 0) ? 0.0 : sigmoid((xs[c] - 1.0 / 255 - mus[c]) / s);
                prob *= std::max(hi - lo, 1e-300);
            }
            p_total += prob;
        }
        total += std::log(p_total);
    }
    return -total;
}

}  // namespace

TEST_CASE("encoder determinism and batch decoupling") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 11);
    Rng rng(1);
    auto img = testutil::random_image(rng, 8, 8);
    auto x1 = pack_batch({img});
    auto a1 = model.encoder_forward(x1);
    auto a2 = model.encoder_forward(x1);
    REQUIRE(a1.size() == static_cast<size_t>(cfg.stochastic_depth()) + 1);
    for (size_t j = 0; j < a1.size(); ++j) CHECK(a1[j].v == a2[j].v);

    // two identical images in one batch produce identical activation slabs
    auto x2 = pack_batch({img, img});
    auto a3 = model.encoder_forward(x2);
    for (size_t j = 0; j < a3.size(); ++j) {
        int64_t half = a3[j].numel() / 2;
        for (int64_t i = 0; i < half; ++i)
            REQUIRE(a3[j].v[static_cast<size_t>(i)] == a3[j].v[static_cast<size_t>(half + i)]);
    }
    // activation resolutions match the layer schedule
    auto res = cfg.layer_resolutions();
    for (size_t j = 0; j < a1.size(); ++j) {
        CHECK(a1[j].shape[2] == res[j]);
        CHECK(a1[j].shape[3] == res[j]);
    }

    Tensor<float> bad({1, 3, 4, 4});
    CHECK_THROWS_AS(model.encoder_forward(bad), ArgumentError);
}

TEST_CASE("zeroed residual branches reduce the encoder to its stem") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 12);
    for (auto& [name, t] : model.params)
        if (name.rfind("enc.r", 0) == 0 && (name.ends_with(".c4.w") || name.ends_with(".c4.b")))
            std::fill(t.v.begin(), t.v.end(), 0.0f);
    Rng rng(2);
    auto img = testutil::random_image(rng, 8, 8);
    auto x = pack_batch({img});
    auto acts = model.encoder_forward(x);

    GraphF g;
    auto p = net::bind_params<float>(g, model.params, nullptr);
    auto stem = g.conv2d(g.leaf(x, false), p("enc.stem.w"), p("enc.stem.b"));
    // finest activation equals the stem output (residual branches are dead)
    const auto& fine = acts.back();
    REQUIRE(fine.v.size() == g.val(stem).size());
    for (size_t i = 0; i < fine.v.size(); ++i) REQUIRE(fine.v[i] == g.val(stem)[i]);
}

TEST_CASE("top-down block: temperature zero returns the prior mean") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 13);
    Tensor<float> h({1, cfg.width, 4, 4});
    Rng rng(3);
    for (auto& x : h.v) x = static_cast<float>(rng.normal());

    auto r0 = top_down_block(cfg, model.params, 1, h, nullptr, true, 0.0, /*seed=*/7);
    for (size_t i = 0; i < r0.z.v.size(); ++i) REQUIRE(r0.z.v[i] == r0.p.first.v[i]);

    auto r1 = top_down_block(cfg, model.params, 1, h, nullptr, true, 0.0, /*seed=*/99);
    CHECK(r0.h_next.v == r1.h_next.v);  // t=0 ignores the seed

    auto r2 = top_down_block(cfg, model.params, 1, h, nullptr, true, 0.7, 42);
    auto r3 = top_down_block(cfg, model.params, 1, h, nullptr, true, 0.7, 42);
    CHECK(r2.z.v == r3.z.v);
    CHECK(r2.h_next.v == r3.h_next.v);

    CHECK_THROWS_AS(top_down_block(cfg, model.params, 1, h, nullptr, false, 1.0, 1), ContractError);

    Tensor<float> act({1, cfg.width, 4, 4});
    for (auto& x : act.v) x = static_cast<float>(rng.normal());
    auto r4 = top_down_block(cfg, model.params, 1, h, &act, false, 1.0, 5);
    REQUIRE(r4.q.has_value());
    CHECK(r4.q->first.shape == Shape{1, cfg.z_channels, 4, 4});
}

TEST_CASE("elbo: non-negative KL terms, determinism, zero-KL hook") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 14);
    Rng rng(4);
    auto img = testutil::random_image(rng, 8, 8);

    Rng r1(100), r2(100);
    auto e1 = model.elbo({img}, r1);
    auto e2 = model.elbo({img}, r2);
    CHECK(e1.total == e2.total);
    CHECK(e1.nll == e2.nll);
    REQUIRE(e1.kl_per_layer.size() == static_cast<size_t>(cfg.stochastic_depth()) + 1);
    for (double k : e1.kl_per_layer) CHECK(k >= -1e-6);
    CHECK(e1.total == doctest::Approx(e1.nll + e1.kl_per_layer[0] + e1.kl_per_layer[1] + e1.kl_per_layer[2]));
    CHECK(e1.nats_per_dim == doctest::Approx(e1.total / (8 * 8 * 3)));

    // force q == p at every layer: zero the parameter heads of both stacks
    auto hooked = model;
    for (auto& [name, t] : hooked.params) {
        if (name.find(".post.c4.") != std::string::npos) std::fill(t.v.begin(), t.v.end(), 0.0f);
        if (name.find(".prior.c4.w") != std::string::npos) {
            // rows [0, 2z) of (2z+w, mid, 1, 1) hold the prior mean/logstd
            int mid = t.shape[1];
            std::fill(t.v.begin(), t.v.begin() + 2 * cfg.z_channels * mid, 0.0f);
        }
        if (name.find(".prior.c4.b") != std::string::npos)
            std::fill(t.v.begin(), t.v.begin() + 2 * cfg.z_channels, 0.0f);
    }
    Rng r3(100);
    auto e3 = hooked.elbo({img}, r3);
    for (double k : e3.kl_per_layer) CHECK(k == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(e3.total == doctest::Approx(e3.nll));
}

TEST_CASE("elbo matches an independent closed-form recomputation") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 15);
    Rng rng(5);
    auto img = testutil::random_image(rng, 8, 8);
    Rng er(200);
    net::DebugCapture<float> cap;
    auto e = model.elbo({img}, er, &cap);

    double kl_oracle = 0;
    for (size_t j = 0; j < cap.q_mean.size(); ++j) {
        double kj = oracle_kl_sum(cap.q_mean[j], cap.q_logstd[j], cap.p_mean[j], cap.p_logstd[j]);
        CHECK(e.kl_per_layer[j] == doctest::Approx(kj).epsilon(1e-4));
        kl_oracle += kj;
    }
    double nll_oracle = oracle_dmol_nll(img, cap.obs_params, cfg.mixture_components);
    CHECK(e.nll == doctest::Approx(nll_oracle).epsilon(1e-4));
    CHECK(e.total == doctest::Approx(nll_oracle + kl_oracle).epsilon(1e-4));
}

TEST_CASE("generate: determinism, shape contract, temperature variance") {
    auto cfg = tiny_model_cfg();
    auto model = VdvaeModel::init(cfg, 16);

    auto a = model.generate(2, 0.0, 1);
    auto b = model.generate(2, 0.0, 999);
    REQUIRE(a.size() == 2);
    CHECK(a[0] == b[0]);  // t = 0 is fully deterministic
    CHECK(a[1] == b[1]);

    auto c = model.generate(3, 0.8, 5);
    auto d = model.generate(3, 0.8, 5);
    for (int i = 0; i < 3; ++i) {
        CHECK(c[static_cast<size_t>(i)] == d[static_cast<size_t>(i)]);
        CHECK(c[static_cast<size_t>(i)].height == cfg.image_size);
        CHECK(c[static_cast<size_t>(i)].width == cfg.image_size);
    }

    auto pixel_variance = [](const std::vector<RgbImage>& imgs) {
        double var_sum = 0;
        size_t n = imgs[0].pix.size();
        for (size_t i = 0; i < n; ++i) {
            double mean = 0;
            for (const auto& im : imgs) mean += im.pix[i];
            mean /= static_cast<double>(imgs.size());
            double v = 0;
            for (const auto& im : imgs) v += (im.pix[i] - mean) * (im.pix[i] - mean);
            var_sum += v / static_cast<double>(imgs.size());
        }
        return var_sum;
    };
    auto low = model.generate(16, 0.1, 7);
    auto high = model.generate(16, 1.0, 7);
    CHECK(pixel_variance(high) > pixel_variance(low));

    CHECK_THROWS_AS(model.generate(0, 1.0, 1), ArgumentError);
    CHECK_THROWS_AS(model.generate(1, -0.5, 1), ArgumentError);
}

TEST_CASE("model config validation catches bad hierarchies") {
    auto cfg = tiny_model_cfg();
    cfg.dec_layers = {{4, 1}, {1, 1}, {8, 1}};  // not non-decreasing
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);

    cfg = tiny_model_cfg();
    cfg.dec_layers = {{1, 1}, {2, 1}, {8, 1}};  // no encoder activation at 2
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);

    cfg = tiny_model_cfg();
    cfg.dec_layers = {{1, 1}};  // K = 0
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);

    CHECK_NOTHROW(tiny_model_cfg().validate());
}
