#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hvsr/config.hpp"
#include "hvsr/dmol.hpp"
#include "hvsr/graph.hpp"
#include "hvsr/rng.hpp"
#include "hvsr/tensor.hpp"

namespace hvsr {

// Parameter construction and graph assembly for the hierarchical VAE and its
// LR-conditioned variant. Everything here is templated on the scalar type so
// gradient oracles can run the identical wiring at float64.

namespace net {

inline int mid_width(int width) { return std::max(width / 4, 8); }

enum class Init { zero, normal, normal_scaled };

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init;
};

// Bottleneck conv stack c1(1x1) -> c2(3x3) -> c3(3x3) -> c4(1x1) with
// pre-activation; c4 gets the depth-scaled initialization.
inline void add_stack_specs(std::vector<ParamSpec>& out, const std::string& prefix, int in_ch, int mid,
                            int out_ch) {
    out.push_back({prefix + ".c1.w", {mid, in_ch, 1, 1}, Init::normal});
    out.push_back({prefix + ".c1.b", {mid}, Init::zero});
    out.push_back({prefix + ".c2.w", {mid, mid, 3, 3}, Init::normal});
    out.push_back({prefix + ".c2.b", {mid}, Init::zero});
    out.push_back({prefix + ".c3.w", {mid, mid, 3, 3}, Init::normal});
    out.push_back({prefix + ".c3.b", {mid}, Init::zero});
    out.push_back({prefix + ".c4.w", {out_ch, mid, 1, 1}, Init::normal_scaled});
    out.push_back({prefix + ".c4.b", {out_ch}, Init::zero});
}

std::vector<ParamSpec> vdvae_param_specs(const ModelConfig& cfg);
std::vector<ParamSpec> sr_extra_param_specs(const SrModelConfig& cfg);

// Deterministic per-tensor initialization (independent of map ordering).
ParamMap<float> init_params(const std::vector<ParamSpec>& specs, uint64_t seed, int depth_scale_blocks);
int count_scaled_blocks(const ModelConfig& cfg);
int count_scaled_blocks_sr(const SrModelConfig& cfg);

ParamMap<float> init_vdvae_params(const ModelConfig& cfg, uint64_t seed);
ParamMap<float> init_sr_params(const SrModelConfig& cfg, uint64_t seed);

// Decoder layers with resolution <= LR size, mirrored as a bottom-up
// (fine -> coarse) block structure for the LR-encoder.
ResCounts lr_encoder_blocks(const SrModelConfig& cfg);

// ---------------------------------------------------------------------------

template <typename T>
struct BoundParams {
    std::map<std::string, typename Graph<T>::Var> vars;

    typename Graph<T>::Var operator()(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw NotFoundError("unbound parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return vars.count(name) != 0; }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ParamMap<T>& params, const std::set<std::string>* trainable) {
    BoundParams<T> bp;
    for (const auto& [name, tensor] : params)
        bp.vars[name] = g.leaf(tensor, trainable == nullptr || trainable->count(name) != 0);
    return bp;
}

template <typename T>
typename Graph<T>::Var build_stack(Graph<T>& g, const BoundParams<T>& p, const std::string& prefix,
                                   typename Graph<T>::Var x, bool residual) {
    auto a = g.gelu(x);
    a = g.conv2d(a, p(prefix + ".c1.w"), p(prefix + ".c1.b"));
    a = g.gelu(a);
    a = g.conv2d(a, p(prefix + ".c2.w"), p(prefix + ".c2.b"));
    a = g.gelu(a);
    a = g.conv2d(a, p(prefix + ".c3.w"), p(prefix + ".c3.b"));
    a = g.gelu(a);
    a = g.conv2d(a, p(prefix + ".c4.w"), p(prefix + ".c4.b"));
    return residual ? g.add(x, a) : a;
}

// Bottom-up path. Returns the feature map recorded after the last block of
// each resolution.
template <typename T>
std::map<int, typename Graph<T>::Var> build_encoder(Graph<T>& g, const BoundParams<T>& p, const ResCounts& blocks,
                                                    const std::string& prefix, typename Graph<T>::Var x) {
    std::map<int, typename Graph<T>::Var> acts;
    auto h = g.conv2d(x, p(prefix + ".stem.w"), p(prefix + ".stem.b"));
    for (size_t gi = 0; gi < blocks.size(); ++gi) {
        auto [res, count] = blocks[gi];
        for (int i = 0; i < count; ++i)
            h = build_stack(g, p, prefix + ".r" + std::to_string(res) + ".b" + std::to_string(i), h, true);
        acts[res] = h;
        if (gi + 1 < blocks.size()) h = g.avg_pool(h, res / blocks[gi + 1].first);
    }
    return acts;
}

// Per-block LR-encoder activations g_0..g_K', already projected to the
// backbone width by their per-layer heads.
template <typename T>
std::vector<typename Graph<T>::Var> build_lr_encoder(Graph<T>& g, const BoundParams<T>& p,
                                                     const SrModelConfig& cfg, typename Graph<T>::Var y) {
    ResCounts blocks = lr_encoder_blocks(cfg);
    auto layers = cfg.base.layer_resolutions();
    int kprime = cfg.cond_depth();

    // decoder layer indices grouped by resolution, ascending j
    std::map<int, std::vector<int>> by_res;
    for (int j = 0; j <= kprime; ++j) by_res[layers[static_cast<size_t>(j)]].push_back(j);

    std::vector<typename Graph<T>::Var> g_acts(static_cast<size_t>(kprime) + 1, -1);
    auto h = g.conv2d(y, p("lrenc.stem.w"), p("lrenc.stem.b"));
    for (size_t gi = 0; gi < blocks.size(); ++gi) {
        auto [res, count] = blocks[gi];
        std::vector<typename Graph<T>::Var> outs;
        for (int i = 0; i < count; ++i) {
            h = build_stack(g, p, "lrenc.r" + std::to_string(res) + ".b" + std::to_string(i), h, true);
            outs.push_back(h);
        }
        // deeper (more processed) block outputs feed earlier decoder layers
        if (auto itjs = by_res.find(res); itjs != by_res.end()) {
            const auto& js = itjs->second;
            for (size_t i = 0; i < js.size(); ++i) {
                int j = js[i];
                auto feat = outs[js.size() - 1 - i];
                std::string head = "lrenc.head" + std::to_string(j);
                g_acts[static_cast<size_t>(j)] = g.conv2d(feat, p(head + ".w"), p(head + ".b"));
            }
        }
        if (gi + 1 < blocks.size()) h = g.avg_pool(h, res / blocks[gi + 1].first);
    }
    return g_acts;
}

template <typename T>
struct DebugCapture {
    std::vector<Tensor<T>> h_before;  // block input before fusion
    std::vector<Tensor<T>> h_fused;   // block input after fusion (h-tilde)
    std::vector<Tensor<T>> q_mean, q_logstd, p_mean, p_logstd, z;
    Tensor<T> obs_params;
};

template <typename T>
struct DecodeOptions {
    bool sample_mode = false;
    T temperature = T(1);
    const std::map<int, typename Graph<T>::Var>* enc_acts = nullptr;  // required in train mode
    const std::vector<typename Graph<T>::Var>* lr_acts = nullptr;     // conditioning, optional
    ConditionMode condition_mode = ConditionMode::prior_and_posterior;
    Rng* rng = nullptr;
    DebugCapture<T>* capture = nullptr;
};

template <typename T>
struct DecodeResult {
    typename Graph<T>::Var obs_params = -1;              // (N, 10M, H, W)
    std::vector<typename Graph<T>::Var> kl_elems;        // train mode, per layer
    std::vector<typename Graph<T>::Var> z;
};

inline constexpr double kLogStdLo = -10.0;
inline constexpr double kLogStdHi = 2.0;

template <typename T>
typename Graph<T>::Var draw_eps(Graph<T>& g, Shape s, Rng& rng) {
    auto v = g.constant(s);
    auto& val = g.mutable_val(v);
    for (auto& x : val) x = static_cast<T>(rng.normal());
    return v;
}

template <typename T>
Tensor<T> tensor_of(const Graph<T>& g, typename Graph<T>::Var v) {
    Tensor<T> t(g.shape(v));
    t.v = g.val(v);
    return t;
}

// The shared top-down pass. In train mode z ~ q and KL terms are emitted;
// in sample mode z ~ p with the std scaled by temperature.
template <typename T>
DecodeResult<T> build_decoder(Graph<T>& g, const BoundParams<T>& p, const ModelConfig& cfg, int batch,
                              const DecodeOptions<T>& opt) {
    if (!opt.sample_mode && opt.enc_acts == nullptr)
        throw ContractError("train-mode decode requires encoder activations");
    if (opt.rng == nullptr) throw ContractError("decode requires an rng for the latent draws");

    const auto layers = cfg.layer_resolutions();
    const int K = static_cast<int>(layers.size()) - 1;
    const int zc = cfg.z_channels;
    const int w = cfg.width;
    const bool conditioned = opt.lr_acts != nullptr;
    const int kprime = conditioned ? static_cast<int>(opt.lr_acts->size()) - 1 : -1;

    DecodeResult<T> out;
    int res = layers[0];
    auto h = g.tile_batch(p("dec.bias" + std::to_string(res)), batch);
    for (int j = 0; j <= K; ++j) {
        int lres = layers[static_cast<size_t>(j)];
        if (lres != res) {
            h = g.upsample_nearest(h, lres / res);
            res = lres;
            h = g.add(h, g.tile_batch(p("dec.bias" + std::to_string(res)), batch));
        }
        std::string lp = "dec.l" + std::to_string(j);

        // h-tilde per the gated fusion cases
        auto fused = h;
        if (conditioned) {
            if (j == 0) {
                fused = (*opt.lr_acts)[0];
            } else if (j <= kprime) {
                fused = g.add_gated(h, (*opt.lr_acts)[static_cast<size_t>(j)],
                                    p("cond.gate" + std::to_string(j)));
            }
        }
        // posterior_only: for j >= 1 the generative path (prior branch and
        // carried state) stays on the unfused h; only q sees the activation.
        // The top block keeps g_0 as its input in both modes.
        bool posterior_only = conditioned && opt.condition_mode == ConditionMode::posterior_only;
        auto h_prior = (posterior_only && j >= 1) ? h : fused;
        auto h_post = fused;

        auto pr = build_stack(g, p, lp + ".prior", h_prior, false);
        auto p_mean = g.slice_ch(pr, 0, zc);
        auto p_logstd = g.clamp(g.slice_ch(pr, zc, 2 * zc), T(kLogStdLo), T(kLogStdHi));
        auto xpp = g.slice_ch(pr, 2 * zc, 2 * zc + w);
        if (j == 0) {
            bool conditional_top = conditioned && opt.condition_mode == ConditionMode::prior_and_posterior;
            if (conditional_top) {
                p_mean = g.conv2d((*opt.lr_acts)[0], p("cond.top.mean.w"), p("cond.top.mean.b"));
                p_logstd = g.clamp(g.conv2d((*opt.lr_acts)[0], p("cond.top.logstd.w"), p("cond.top.logstd.b")),
                                   T(kLogStdLo), T(kLogStdHi));
            } else {
                p_mean = g.constant({batch, zc, res, res});
                p_logstd = g.constant({batch, zc, res, res});
            }
        }

        auto eps = draw_eps(g, {batch, zc, res, res}, *opt.rng);
        typename Graph<T>::Var z, q_mean = -1, q_logstd = -1;
        if (opt.sample_mode) {
            z = g.reparam(p_mean, p_logstd, eps, opt.temperature);
        } else {
            auto it = opt.enc_acts->find(res);
            if (it == opt.enc_acts->end()) throw ContractError("missing encoder activation at this resolution");
            auto qr = build_stack(g, p, lp + ".post", g.concat_ch(h_post, it->second), false);
            q_mean = g.slice_ch(qr, 0, zc);
            q_logstd = g.clamp(g.slice_ch(qr, zc, 2 * zc), T(kLogStdLo), T(kLogStdHi));
            z = g.reparam(q_mean, q_logstd, eps, T(1));
            out.kl_elems.push_back(g.gaussian_kl(q_mean, q_logstd, p_mean, p_logstd));
        }
        out.z.push_back(z);

        if (opt.capture) {
            opt.capture->h_before.push_back(tensor_of(g, h));
            opt.capture->h_fused.push_back(tensor_of(g, fused));
            opt.capture->p_mean.push_back(tensor_of(g, p_mean));
            opt.capture->p_logstd.push_back(tensor_of(g, p_logstd));
            if (q_mean >= 0) {
                opt.capture->q_mean.push_back(tensor_of(g, q_mean));
                opt.capture->q_logstd.push_back(tensor_of(g, q_logstd));
            }
            opt.capture->z.push_back(tensor_of(g, z));
        }

        h = g.add(h_prior, xpp);
        h = g.add(h, g.conv2d(z, p(lp + ".zproj.w"), p(lp + ".zproj.b")));
        h = build_stack(g, p, lp + ".out", h, true);
    }
    out.obs_params = g.conv2d(h, p("dec.obs.w"), p("dec.obs.b"));
    if (opt.capture) opt.capture->obs_params = tensor_of(g, out.obs_params);
    return out;
}

}  // namespace net

}  // namespace hvsr
