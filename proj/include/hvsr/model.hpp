#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvsr/config.hpp"
#include "hvsr/image.hpp"
#include "hvsr/net.hpp"

namespace hvsr {

struct ElboResult {
    double total = 0;             // summed nats: nll + sum of KLs
    double nll = 0;
    std::vector<double> kl_per_layer;
    double nats_per_dim = 0;      // total / (H*W*3*batch)
};

struct TopDownBlockResult {
    Tensor<float> h_next;
    Tensor<float> z;
    std::optional<std::pair<Tensor<float>, Tensor<float>>> q;  // mean, logstd (train mode)
    std::pair<Tensor<float>, Tensor<float>> p;
};

// The unconditional hierarchical VAE.
class VdvaeModel {
  public:
    ModelConfig cfg;
    ParamMap<float> params;

    static VdvaeModel init(const ModelConfig& cfg, uint64_t seed);

    // Bottom-up activations, one per stochastic layer z_0..z_K.
    std::vector<Tensor<float>> encoder_forward(const Tensor<float>& x_nchw) const;

    ElboResult elbo(const std::vector<RgbImage>& batch, Rng& rng,
                    net::DebugCapture<float>* capture = nullptr) const;

    std::vector<RgbImage> generate(int n, double temperature, uint64_t seed, bool sample_pixels = false) const;
};

// One top-down block evaluated in isolation (train mode consumes an encoder
// activation, sample mode draws from the prior at the given temperature).
TopDownBlockResult top_down_block(const ModelConfig& cfg, const ParamMap<float>& params, int layer,
                                  const Tensor<float>& h, const Tensor<float>* enc_act, bool sample_mode,
                                  double temperature, uint64_t seed);

// Images (N,3,H,W) packed for graph input.
Tensor<float> pack_batch(const std::vector<RgbImage>& batch);

struct Checkpoint;
// Rebuilds a model from a checkpoint, ignoring optimizer/EMA tensors.
VdvaeModel vdvae_from_checkpoint(const Checkpoint& ck);

// Decode observation parameters into images (mean decode or sampled).
std::vector<RgbImage> decode_observation(const Tensor<float>& obs_params, int n_mix, bool sample_pixels,
                                         Rng& rng);

}  // namespace hvsr
