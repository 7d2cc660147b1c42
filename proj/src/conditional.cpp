#include "hvsr/conditional.hpp"

#include "hvsr/checkpoint.hpp"
#include "hvsr/dmol.hpp"
#include "hvsr/kernels.hpp"

namespace hvsr {

namespace detail_ck {
void fill_params_from_checkpoint(ParamMap<float>& params, const Checkpoint& ck, const char* what);
}

SrModel SrModel::init(const SrModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    SrModel m;
    m.cfg = cfg;
    m.params = net::init_sr_params(cfg, seed);
    return m;
}

SrModel sr_from_checkpoint(const Checkpoint& ck) {
    if (!ck.sr) throw ImportError("checkpoint holds an unconditional model, not an SR one");
    SrModelConfig cfg{ck.model, ck.sr->first, ck.sr->second};
    SrModel m = SrModel::init(cfg, 0);
    detail_ck::fill_params_from_checkpoint(m.params, ck, "sr_from_checkpoint");
    return m;
}

std::vector<Tensor<float>> SrModel::lr_encoder_forward(const Tensor<float>& y) const {
    int lr = cfg.lr_size();
    if (y.shape.size() != 4 || y.shape[1] != 3 || y.shape[2] != lr || y.shape[3] != lr)
        throw ArgumentError("LR input must be (N,3," + std::to_string(lr) + "," + std::to_string(lr) +
                            "), got " + shape_str(y.shape));
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto yin = g.leaf(y, false);
    auto acts = net::build_lr_encoder(g, p, cfg, yin);
    std::vector<Tensor<float>> out;
    for (auto v : acts) out.push_back(net::tensor_of(g, v));
    return out;
}

ElboResult SrModel::conditional_elbo(const std::vector<RgbImage>& hr, const std::vector<RgbImage>& lr, Rng& rng,
                                     net::DebugCapture<float>* capture) const {
    if (hr.size() != lr.size()) throw ArgumentError("HR/LR batch size mismatch");
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto x = g.leaf(pack_batch(hr), false);
    auto y = g.leaf(pack_batch(lr), false);
    auto acts = net::build_encoder(g, p, cfg.base.enc_blocks, "enc", x);
    auto lr_acts = net::build_lr_encoder(g, p, cfg, y);

    net::DecodeOptions<float> opt;
    opt.sample_mode = false;
    opt.enc_acts = &acts;
    opt.lr_acts = &lr_acts;
    opt.condition_mode = cfg.condition_mode;
    opt.rng = &rng;
    opt.capture = capture;
    auto dec = net::build_decoder(g, p, cfg.base, static_cast<int>(hr.size()), opt);

    std::vector<const uint8_t*> imgs;
    for (const auto& im : hr) imgs.push_back(im.pix.data());
    auto nll = dmol_nll(g, imgs, cfg.base.image_size, cfg.base.image_size, dec.obs_params,
                        cfg.base.mixture_components);

    ElboResult r;
    r.nll = g.scalar(nll);
    r.total = r.nll;
    for (auto klel : dec.kl_elems) {
        double k = g.scalar(g.sum(klel));
        r.kl_per_layer.push_back(k);
        r.total += k;
    }
    r.nats_per_dim =
        r.total / (static_cast<double>(hr.size()) * cfg.base.image_size * cfg.base.image_size * 3);
    return r;
}

RgbImage SrModel::super_resolve(const RgbImage& lr, double temperature, uint64_t seed, bool sample_pixels) const {
    int lrs = cfg.lr_size();
    if (lr.height != lrs || lr.width != lrs)
        throw ArgumentError("super_resolve expects a " + std::to_string(lrs) + "x" + std::to_string(lrs) +
                            " input; larger images go through super_resolve_image");
    if (temperature < 0) throw ArgumentError("temperature must be >= 0");
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto y = g.leaf(pack_batch({lr}), false);
    auto lr_acts = net::build_lr_encoder(g, p, cfg, y);

    Rng rng(seed);
    net::DecodeOptions<float> opt;
    opt.sample_mode = true;
    opt.temperature = static_cast<float>(temperature);
    opt.lr_acts = &lr_acts;
    opt.condition_mode = cfg.condition_mode;
    opt.rng = &rng;
    auto dec = net::build_decoder(g, p, cfg.base, 1, opt);
    return decode_observation(net::tensor_of(g, dec.obs_params), cfg.base.mixture_components, sample_pixels,
                              rng)[0];
}

RgbImage SrModel::super_resolve_image(const RgbImage& lr, int patch_size, int overlap, double temperature,
                                      uint64_t seed, bool sample_pixels) const {
    if (patch_size != cfg.lr_size())
        throw ArgumentError("patch_size must match the model LR input size " + std::to_string(cfg.lr_size()));
    if (overlap < 0 || overlap >= patch_size) throw ArgumentError("overlap must be in [0, patch_size)");

    // Small inputs: reflect-pad up to one patch, crop the output back.
    if (lr.height < patch_size || lr.width < patch_size) {
        RgbImage padded = reflect_pad(lr, patch_size, patch_size);
        RgbImage sr = super_resolve_image(padded, patch_size, overlap, temperature, seed, sample_pixels);
        return crop(sr, 0, 0, lr.height * cfg.scale_factor, lr.width * cfg.scale_factor);
    }

    int stride = patch_size - overlap;
    PatchGrid grid = extract_patches(lr, patch_size, stride);
    PatchGrid out;
    out.patch_size = patch_size * cfg.scale_factor;
    out.stride = stride * cfg.scale_factor;
    out.rows = grid.rows;
    out.cols = grid.cols;
    out.src_height = lr.height * cfg.scale_factor;
    out.src_width = lr.width * cfg.scale_factor;
    for (int oy : grid.origins_y) out.origins_y.push_back(oy * cfg.scale_factor);
    for (int ox : grid.origins_x) out.origins_x.push_back(ox * cfg.scale_factor);
    out.patches.reserve(grid.patches.size());
    for (size_t i = 0; i < grid.patches.size(); ++i) {
        uint64_t patch_seed = splitmix64(seed ^ splitmix64(static_cast<uint64_t>(i) + 1));
        out.patches.push_back(super_resolve(grid.patches[i], temperature, patch_seed, sample_pixels));
    }
    return stitch_patches(out);
}

Tensor<float> fuse(const Tensor<float>& h, const std::vector<Tensor<float>>& g_acts,
                   const std::vector<float>& gates, int layer, int cond_depth) {
    if (layer < 0) throw ContractError("fuse: negative layer index");
    if (static_cast<int>(g_acts.size()) != cond_depth + 1) throw ContractError("fuse: g list size != K'+1");
    if (static_cast<int>(gates.size()) != cond_depth) throw ContractError("fuse: gate list size != K'");
    if (layer == 0) return g_acts[0];
    if (layer > cond_depth) return h;
    const Tensor<float>& g = g_acts[static_cast<size_t>(layer)];
    if (g.shape != h.shape) throw ContractError("fuse: shape mismatch at layer " + std::to_string(layer));
    Tensor<float> out(h.shape);
    kernels::active().fma_scalar(h.data(), g.data(), gates[static_cast<size_t>(layer - 1)], out.data(),
                                 h.numel());
    return out;
}

}  // namespace hvsr
