#include "hvsr/model.hpp"

#include "hvsr/checkpoint.hpp"
#include "hvsr/dmol.hpp"

namespace hvsr {

namespace detail_ck {

void fill_params_from_checkpoint(ParamMap<float>& params, const Checkpoint& ck, const char* what) {
    for (auto& [name, tensor] : params) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ImportError(std::string(what) + ": checkpoint missing tensor " + name);
        if (it->second.shape != tensor.shape)
            throw ImportError(std::string(what) + ": checkpoint shape mismatch for " + name);
        tensor = it->second;
    }
}

}  // namespace detail_ck

Tensor<float> pack_batch(const std::vector<RgbImage>& batch) {
    if (batch.empty()) throw ArgumentError("empty batch");
    int H = batch[0].height, W = batch[0].width;
    Tensor<float> x({static_cast<int>(batch.size()), 3, H, W});
    const int64_t chw = 3LL * H * W;
    for (size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].height != H || batch[n].width != W) throw ArgumentError("batch images differ in shape");
        auto t = normalize_chw(batch[n]);
        std::copy(t.v.begin(), t.v.end(), x.v.begin() + static_cast<int64_t>(n) * chw);
    }
    return x;
}

std::vector<RgbImage> decode_observation(const Tensor<float>& obs, int n_mix, bool sample_pixels, Rng& rng) {
    if (obs.shape.size() != 4 || obs.shape[1] != 10 * n_mix)
        throw ContractError("observation parameters have unexpected shape " + shape_str(obs.shape));
    int N = obs.shape[0], H = obs.shape[2], W = obs.shape[3];
    const int64_t slab = static_cast<int64_t>(10 * n_mix) * H * W;
    std::vector<RgbImage> out;
    out.reserve(static_cast<size_t>(N));
    Tensor<float> chw({3, H, W});
    for (int n = 0; n < N; ++n) {
        if (sample_pixels)
            dmol::sample_decode(obs.v.data() + n * slab, n_mix, H, W, rng, chw.v.data());
        else
            dmol::mean_decode(obs.v.data() + n * slab, n_mix, H, W, chw.v.data());
        out.push_back(denormalize_chw(chw));
    }
    return out;
}

VdvaeModel VdvaeModel::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    VdvaeModel m;
    m.cfg = cfg;
    m.params = net::init_vdvae_params(cfg, seed);
    return m;
}

VdvaeModel vdvae_from_checkpoint(const Checkpoint& ck) {
    if (ck.sr) throw ImportError("checkpoint holds an SR model, not an unconditional one");
    VdvaeModel m = VdvaeModel::init(ck.model, 0);
    detail_ck::fill_params_from_checkpoint(m.params, ck, "vdvae_from_checkpoint");
    return m;
}

std::vector<Tensor<float>> VdvaeModel::encoder_forward(const Tensor<float>& x) const {
    if (x.shape.size() != 4 || x.shape[1] != 3 || x.shape[2] != cfg.image_size || x.shape[3] != cfg.image_size)
        throw ArgumentError("encoder input must be (N,3," + std::to_string(cfg.image_size) + "," +
                            std::to_string(cfg.image_size) + "), got " + shape_str(x.shape));
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto xin = g.leaf(x, false);
    auto acts = net::build_encoder(g, p, cfg.enc_blocks, "enc", xin);
    std::vector<Tensor<float>> out;
    for (int res : cfg.layer_resolutions()) out.push_back(net::tensor_of(g, acts.at(res)));
    return out;
}

ElboResult VdvaeModel::elbo(const std::vector<RgbImage>& batch, Rng& rng,
                            net::DebugCapture<float>* capture) const {
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto x = g.leaf(pack_batch(batch), false);
    auto acts = net::build_encoder(g, p, cfg.enc_blocks, "enc", x);

    net::DecodeOptions<float> opt;
    opt.sample_mode = false;
    opt.enc_acts = &acts;
    opt.rng = &rng;
    opt.capture = capture;
    auto dec = net::build_decoder(g, p, cfg, static_cast<int>(batch.size()), opt);

    std::vector<const uint8_t*> imgs;
    for (const auto& im : batch) imgs.push_back(im.pix.data());
    auto nll = dmol_nll(g, imgs, cfg.image_size, cfg.image_size, dec.obs_params, cfg.mixture_components);

    ElboResult r;
    r.nll = g.scalar(nll);
    r.total = r.nll;
    for (auto klel : dec.kl_elems) {
        double k = g.scalar(g.sum(klel));
        r.kl_per_layer.push_back(k);
        r.total += k;
    }
    r.nats_per_dim = r.total / (static_cast<double>(batch.size()) * cfg.image_size * cfg.image_size * 3);
    return r;
}

std::vector<RgbImage> VdvaeModel::generate(int n, double temperature, uint64_t seed, bool sample_pixels) const {
    if (n < 1) throw ArgumentError("generate: n must be >= 1");
    if (temperature < 0) throw ArgumentError("generate: temperature must be >= 0");
    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    Rng rng(seed);
    net::DecodeOptions<float> opt;
    opt.sample_mode = true;
    opt.temperature = static_cast<float>(temperature);
    opt.rng = &rng;
    auto dec = net::build_decoder(g, p, cfg, n, opt);
    return decode_observation(net::tensor_of(g, dec.obs_params), cfg.mixture_components, sample_pixels, rng);
}

TopDownBlockResult top_down_block(const ModelConfig& cfg, const ParamMap<float>& params, int layer,
                                  const Tensor<float>& h, const Tensor<float>* enc_act, bool sample_mode,
                                  double temperature, uint64_t seed) {
    if (!sample_mode && enc_act == nullptr)
        throw ContractError("train-mode top-down block requires an encoder activation");
    auto layers = cfg.layer_resolutions();
    if (layer < 0 || layer > cfg.stochastic_depth()) throw ContractError("layer index out of range");
    int res = layers[static_cast<size_t>(layer)];
    int zc = cfg.z_channels;
    int w = cfg.width;

    GraphF g;
    auto p = net::bind_params<float>(g, params, nullptr);
    auto hv = g.leaf(h, false);
    std::string lp = "dec.l" + std::to_string(layer);

    auto pr = net::build_stack(g, p, lp + ".prior", hv, false);
    auto p_mean = g.slice_ch(pr, 0, zc);
    auto p_logstd = g.clamp(g.slice_ch(pr, zc, 2 * zc), static_cast<float>(net::kLogStdLo),
                            static_cast<float>(net::kLogStdHi));
    auto xpp = g.slice_ch(pr, 2 * zc, 2 * zc + w);
    if (layer == 0) {
        p_mean = g.constant({h.shape[0], zc, res, res});
        p_logstd = g.constant({h.shape[0], zc, res, res});
    }

    Rng rng(seed);
    auto eps = net::draw_eps(g, {h.shape[0], zc, res, res}, rng);
    GraphF::Var z, q_mean = -1, q_logstd = -1;
    if (sample_mode) {
        z = g.reparam(p_mean, p_logstd, eps, static_cast<float>(temperature));
    } else {
        auto act = g.leaf(*enc_act, false);
        auto qr = net::build_stack(g, p, lp + ".post", g.concat_ch(hv, act), false);
        q_mean = g.slice_ch(qr, 0, zc);
        q_logstd = g.clamp(g.slice_ch(qr, zc, 2 * zc), static_cast<float>(net::kLogStdLo),
                           static_cast<float>(net::kLogStdHi));
        z = g.reparam(q_mean, q_logstd, eps, 1.0f);
    }
    auto hn = g.add(hv, xpp);
    hn = g.add(hn, g.conv2d(z, p(lp + ".zproj.w"), p(lp + ".zproj.b")));
    hn = net::build_stack(g, p, lp + ".out", hn, true);

    TopDownBlockResult r;
    r.h_next = net::tensor_of(g, hn);
    r.z = net::tensor_of(g, z);
    r.p = {net::tensor_of(g, p_mean), net::tensor_of(g, p_logstd)};
    if (q_mean >= 0) r.q = {{net::tensor_of(g, q_mean), net::tensor_of(g, q_logstd)}};
    return r;
}

}  // namespace hvsr
