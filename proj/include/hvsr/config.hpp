#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hvsr {

// Flat key = value sections; the on-disk format for run configs and
// checkpoint manifests.
struct IniSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const;
    void set(const std::string& key, std::string value);
};

struct IniDoc {
    std::vector<IniSection> sections;

    IniSection* find(const std::string& name);
    const IniSection* find(const std::string& name) const;
    IniSection& get_or_add(const std::string& name);
};

IniDoc ini_parse(const std::string& text);
std::string ini_serialize(const IniDoc& doc);

std::string format_double(double v);  // lossless round-trip formatting
double parse_double(const std::string& s);

// ---------------------------------------------------------------------------

// Stochastic hierarchy description. Blocks/layers are written as
// "RESxCOUNT" lists, e.g. enc_blocks = 32x2,16x2,8x2,4x2,1x1.
using ResCounts = std::vector<std::pair<int, int>>;

std::string res_counts_to_string(const ResCounts& rc);
ResCounts res_counts_from_string(const std::string& s);

struct ModelConfig {
    int image_size = 32;
    int width = 32;
    int z_channels = 8;
    int mixture_components = 10;
    ResCounts enc_blocks;  // fine -> coarse
    ResCounts dec_layers;  // coarse -> fine, one stochastic layer per count

    bool operator==(const ModelConfig&) const = default;

    std::vector<int> layer_resolutions() const;  // resolution of z_0..z_K
    int stochastic_depth() const { return static_cast<int>(layer_resolutions().size()) - 1; }
    void validate() const;
};

enum class ConditionMode { prior_and_posterior, posterior_only };

std::string condition_mode_to_string(ConditionMode m);
ConditionMode condition_mode_from_string(const std::string& s);

struct SrModelConfig {
    ModelConfig base;
    int scale_factor = 4;
    ConditionMode condition_mode = ConditionMode::prior_and_posterior;

    bool operator==(const SrModelConfig&) const = default;

    int lr_size() const { return base.image_size / scale_factor; }
    // K': index of the last decoder layer whose resolution fits the LR input.
    int cond_depth() const;
    void validate() const;
};

enum class FreezePolicy { none, encoder_frozen };

std::string freeze_policy_to_string(FreezePolicy p);
FreezePolicy freeze_policy_from_string(const std::string& s);

struct TrainConfig {
    double learning_rate = 5e-4;
    int batch_size = 1;
    int max_steps = 100;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 200.0;
    double grad_skip_threshold = 400.0;
    FreezePolicy freeze_policy = FreezePolicy::none;
    double ema_decay = 0.0;  // 0 disables
    uint64_t seed = 1;
    int lr_warmup_steps = 0;
    int kl_warmup_steps = 0;
    double free_bits = 0.0;  // nats per layer; 0 disables
    int val_interval = 0;
    int sample_interval = 0;
    int checkpoint_interval = 0;

    bool operator==(const TrainConfig&) const = default;
    void validate() const;
};

struct EvalConfig {
    int shave = -1;  // -1: use the scale factor
    double temperature = 0.1;
    int patch_size = 0;  // 0: model LR input size
    int overlap = 0;
    uint64_t seed = 1;

    bool operator==(const EvalConfig&) const = default;
};

// Merged run configuration: everything a run needs, round-trippable through
// the ini format with unknown keys rejected.
struct RunConfig {
    ModelConfig model;
    int scale_factor = 4;
    ConditionMode condition_mode = ConditionMode::prior_and_posterior;
    TrainConfig train;
    EvalConfig eval;

    bool operator==(const RunConfig&) const = default;

    SrModelConfig sr_config() const { return SrModelConfig{model, scale_factor, condition_mode}; }
};

IniDoc run_config_to_ini(const RunConfig& cfg);
RunConfig run_config_from_ini(const IniDoc& doc);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// Per-module serialization shared with checkpoint manifests.
void model_config_to_ini(const ModelConfig& cfg, IniDoc& doc);
ModelConfig model_config_from_ini(const IniDoc& doc);
void sr_fields_to_ini(int scale_factor, ConditionMode mode, IniDoc& doc);
std::optional<std::pair<int, ConditionMode>> sr_fields_from_ini(const IniDoc& doc);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace hvsr
