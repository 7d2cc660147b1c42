#include "hvsr/net.hpp"

#include <algorithm>

namespace hvsr::net {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

std::vector<ParamSpec> vdvae_param_specs(const ModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    const int w = cfg.width;
    const int mid = mid_width(w);
    const int zc = cfg.z_channels;

    specs.push_back({"enc.stem.w", {w, 3, 3, 3}, Init::normal});
    specs.push_back({"enc.stem.b", {w}, Init::zero});
    for (const auto& [res, count] : cfg.enc_blocks)
        for (int i = 0; i < count; ++i)
            add_stack_specs(specs, "enc.r" + std::to_string(res) + ".b" + std::to_string(i), w, mid, w);

    std::set<int> dec_res;
    for (const auto& [res, count] : cfg.dec_layers) dec_res.insert(res);
    for (int res : dec_res) specs.push_back({"dec.bias" + std::to_string(res), {w, res, res}, Init::zero});

    const int K = cfg.stochastic_depth();
    for (int j = 0; j <= K; ++j) {
        std::string lp = "dec.l" + std::to_string(j);
        add_stack_specs(specs, lp + ".prior", w, mid, 2 * zc + w);
        add_stack_specs(specs, lp + ".post", 2 * w, mid, 2 * zc);
        specs.push_back({lp + ".zproj.w", {w, zc, 1, 1}, Init::normal_scaled});
        specs.push_back({lp + ".zproj.b", {w}, Init::zero});
        add_stack_specs(specs, lp + ".out", w, mid, w);
    }
    specs.push_back({"dec.obs.w", {10 * cfg.mixture_components, w, 1, 1}, Init::normal});
    specs.push_back({"dec.obs.b", {10 * cfg.mixture_components}, Init::zero});
    return specs;
}

ResCounts lr_encoder_blocks(const SrModelConfig& cfg) {
    // mirror the conditioned decoder layers, reordered bottom-up
    std::map<int, int> counts;
    auto layers = cfg.base.layer_resolutions();
    for (int j = 0; j <= cfg.cond_depth(); ++j) counts[layers[static_cast<size_t>(j)]] += 1;
    ResCounts rc;
    for (auto it = counts.rbegin(); it != counts.rend(); ++it) rc.emplace_back(it->first, it->second);
    // a zero-count group carries the stem output down to the first
    // conditioned resolution when nothing is conditioned at the LR size
    if (rc.front().first != cfg.lr_size()) rc.insert(rc.begin(), {cfg.lr_size(), 0});
    return rc;
}

std::vector<ParamSpec> sr_extra_param_specs(const SrModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    const int w = cfg.base.width;
    const int mid = mid_width(w);
    const int zc = cfg.base.z_channels;
    const int kprime = cfg.cond_depth();

    specs.push_back({"lrenc.stem.w", {w, 3, 3, 3}, Init::normal});
    specs.push_back({"lrenc.stem.b", {w}, Init::zero});
    for (const auto& [res, count] : lr_encoder_blocks(cfg))
        for (int i = 0; i < count; ++i)
            add_stack_specs(specs, "lrenc.r" + std::to_string(res) + ".b" + std::to_string(i), w, mid, w);
    for (int j = 0; j <= kprime; ++j) {
        specs.push_back({"lrenc.head" + std::to_string(j) + ".w", {w, w, 1, 1}, Init::normal});
        specs.push_back({"lrenc.head" + std::to_string(j) + ".b", {w}, Init::zero});
    }
    for (int j = 1; j <= kprime; ++j) specs.push_back({"cond.gate" + std::to_string(j), {1}, Init::zero});
    specs.push_back({"cond.top.mean.w", {zc, w, 1, 1}, Init::zero});
    specs.push_back({"cond.top.mean.b", {zc}, Init::zero});
    specs.push_back({"cond.top.logstd.w", {zc, w, 1, 1}, Init::zero});
    specs.push_back({"cond.top.logstd.b", {zc}, Init::zero});
    return specs;
}

int count_scaled_blocks(const ModelConfig& cfg) {
    int n = 0;
    for (const auto& [res, count] : cfg.enc_blocks) n += count;
    n += 3 * (cfg.stochastic_depth() + 1);  // prior, post, out stacks
    return n;
}

int count_scaled_blocks_sr(const SrModelConfig& cfg) {
    int n = count_scaled_blocks(cfg.base);
    for (const auto& [res, count] : lr_encoder_blocks(cfg)) n += count;
    return n;
}

ParamMap<float> init_params(const std::vector<ParamSpec>& specs, uint64_t seed, int depth_scale_blocks) {
    ParamMap<float> params;
    const float depth_scale = 1.0f / std::sqrt(static_cast<float>(std::max(1, depth_scale_blocks)));
    for (const auto& spec : specs) {
        Tensor<float> t(spec.shape);
        if (spec.init != Init::zero) {
            Rng rng(splitmix64(seed ^ fnv1a(spec.name)), fnv1a(spec.name) | 1u);
            // fan-in for (out, in, kh, kw) weights
            int64_t fan_in = 1;
            for (size_t d = 1; d < spec.shape.size(); ++d) fan_in *= spec.shape[d];
            float std = 1.0f / std::sqrt(static_cast<float>(std::max<int64_t>(1, fan_in)));
            if (spec.init == Init::normal_scaled) std *= depth_scale;
            for (auto& x : t.v) x = static_cast<float>(rng.normal()) * std;
        }
        params.emplace(spec.name, std::move(t));
    }
    return params;
}

ParamMap<float> init_vdvae_params(const ModelConfig& cfg, uint64_t seed) {
    return init_params(vdvae_param_specs(cfg), seed, count_scaled_blocks(cfg));
}

ParamMap<float> init_sr_params(const SrModelConfig& cfg, uint64_t seed) {
    auto specs = vdvae_param_specs(cfg.base);
    auto extra = sr_extra_param_specs(cfg);
    specs.insert(specs.end(), extra.begin(), extra.end());
    return init_params(specs, seed, count_scaled_blocks_sr(cfg));
}

}  // namespace hvsr::net
