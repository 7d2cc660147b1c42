#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hvsr/checkpoint.hpp"
#include "hvsr/conditional.hpp"
#include "hvsr/model.hpp"

namespace hvsr {

struct Batch {
    std::vector<RgbImage> hr;
    std::vector<RgbImage> lr;  // empty for the unconditional model
};

struct LossBreakdown {
    double total = 0;  // true ELBO in summed nats
    double nll = 0;
    std::vector<double> kl_per_layer;
};

struct LossOptions {
    double kl_beta = 1.0;   // KL warm-up factor
    double free_bits = 0;   // per-layer KL floor in nats; 0 disables
};

// What the optimizer needs from a model; implemented by both the
// unconditional VDVAE and the SR variant.
class TrainableModel {
  public:
    virtual ~TrainableModel() = default;
    virtual ParamMap<float>& params() = 0;
    virtual const ParamMap<float>& params() const = 0;
    virtual int hr_size() const = 0;
    virtual int scale() const = 0;  // 1: no LR side
    virtual GraphF::Var build_loss(GraphF& g, const net::BoundParams<float>& p, const Batch& batch, Rng& rng,
                                   const LossOptions& opt, LossBreakdown* out) const = 0;
    virtual void write_meta(Checkpoint& ck) const = 0;
    virtual std::optional<RgbImage> preview(const Batch& batch, double temperature, uint64_t seed) const = 0;
};

class VdvaeTrainable : public TrainableModel {
  public:
    explicit VdvaeTrainable(VdvaeModel& m) : m_(m) {}
    ParamMap<float>& params() override { return m_.params; }
    const ParamMap<float>& params() const override { return m_.params; }
    int hr_size() const override { return m_.cfg.image_size; }
    int scale() const override { return 1; }
    GraphF::Var build_loss(GraphF& g, const net::BoundParams<float>& p, const Batch& batch, Rng& rng,
                           const LossOptions& opt, LossBreakdown* out) const override;
    void write_meta(Checkpoint& ck) const override;
    std::optional<RgbImage> preview(const Batch& batch, double temperature, uint64_t seed) const override;

  private:
    VdvaeModel& m_;
};

class SrTrainable : public TrainableModel {
  public:
    explicit SrTrainable(SrModel& m) : m_(m) {}
    ParamMap<float>& params() override { return m_.params; }
    const ParamMap<float>& params() const override { return m_.params; }
    int hr_size() const override { return m_.cfg.base.image_size; }
    int scale() const override { return m_.cfg.scale_factor; }
    GraphF::Var build_loss(GraphF& g, const net::BoundParams<float>& p, const Batch& batch, Rng& rng,
                           const LossOptions& opt, LossBreakdown* out) const override;
    void write_meta(Checkpoint& ck) const override;
    std::optional<RgbImage> preview(const Batch& batch, double temperature, uint64_t seed) const override;

  private:
    SrModel& m_;
};

// ---------------------------------------------------------------------------

std::set<std::string> apply_freeze_policy(const ParamMap<float>& params, FreezePolicy policy);

struct ImportManifest {
    std::vector<std::string> copied;
    std::vector<std::string> fresh;
};

// Copies encoder/decoder tensors by name from an unconditional checkpoint;
// LR-encoder, gates, and the conditional top prior stay freshly initialized.
ImportManifest import_pretrained(const std::string& checkpoint_dir, SrModel& model);

struct TrainState {
    int64_t step = 0;  // steps taken = applied + skipped
    int64_t applied = 0;
    int64_t skipped = 0;
    int64_t consecutive_skips = 0;
    int64_t nonfinite = 0;
    int64_t adam_t = 0;
    Rng rng;                       // batch + latent draws
    std::set<std::string> trainable;
    ParamMap<float> adam_m, adam_v;
    ParamMap<float> ema;           // populated when ema_decay > 0
    double loss_sum = 0;           // running statistics over finite losses
    int64_t loss_count = 0;

    static TrainState init(const TrainableModel& model, const TrainConfig& cfg);
};

struct StepOutcome {
    bool applied = false;
    bool nonfinite = false;
    double grad_norm = 0;
    LossBreakdown loss;
};

StepOutcome train_step(TrainState& st, TrainableModel& model, const Batch& batch, const TrainConfig& cfg);

void save_train_checkpoint(const std::string& dir, const TrainableModel& model, const TrainState& st);
// Restores parameters, moments, counters, and the RNG; trainable set comes
// from the config. Resuming reproduces the uninterrupted trajectory exactly.
void load_train_checkpoint(const std::string& dir, TrainableModel& model, TrainState& st,
                           const TrainConfig& cfg);

// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<std::string> paths;
    std::vector<RgbImage> images;

    static Dataset load_dir(const std::string& dir, int min_size);
    bool empty() const { return images.empty(); }
};

Batch sample_batch(const Dataset& ds, int batch_size, int hr_size, int scale, Rng& rng);

struct TrainResult {
    std::string final_checkpoint;
    double first_loss = 0;
    double last_loss = 0;
    int64_t applied = 0;
    int64_t skipped = 0;
};

// Full loop: run directory layout (config snapshot, metrics.csv, checkpoints,
// sample previews), periodic validation, checkpoint rotation.
TrainResult train(TrainableModel& model, const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& resume_from = "");

}  // namespace hvsr
