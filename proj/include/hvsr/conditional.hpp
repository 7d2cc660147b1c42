#pragma once

#include <vector>

#include "hvsr/model.hpp"

namespace hvsr {

// LR-conditioned variant: LR-encoder activations fused into the top-down
// path through zero-initialized scalar gates, with a conditional top prior.
class SrModel {
  public:
    SrModelConfig cfg;
    ParamMap<float> params;

    static SrModel init(const SrModelConfig& cfg, uint64_t seed);

    // g_0..g_K', projected to the backbone width.
    std::vector<Tensor<float>> lr_encoder_forward(const Tensor<float>& y_nchw) const;

    ElboResult conditional_elbo(const std::vector<RgbImage>& hr, const std::vector<RgbImage>& lr, Rng& rng,
                                net::DebugCapture<float>* capture = nullptr) const;

    // Single-shot SR of one LR input whose size matches the model.
    RgbImage super_resolve(const RgbImage& lr, double temperature, uint64_t seed,
                           bool sample_pixels = false) const;

    // Arbitrary-size SR: patch extraction at stride patch_size - overlap,
    // per-patch SR with derived RNG streams, uniform-average stitching.
    RgbImage super_resolve_image(const RgbImage& lr, int patch_size, int overlap, double temperature,
                                 uint64_t seed, bool sample_pixels = false) const;
};

// The gated fusion cases: j==0 -> g_0; j in [1,K'] -> h + alpha_j*g_j;
// j > K' -> h. Pure function over tensors, shared arithmetic with the graph.
Tensor<float> fuse(const Tensor<float>& h, const std::vector<Tensor<float>>& g_acts,
                   const std::vector<float>& gates, int layer, int cond_depth);

struct Checkpoint;
SrModel sr_from_checkpoint(const Checkpoint& ck);

}  // namespace hvsr
