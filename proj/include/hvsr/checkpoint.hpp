#pragma once

#include <optional>
#include <string>

#include "hvsr/config.hpp"
#include "hvsr/tensor.hpp"

namespace hvsr {

// On-disk checkpoint: a directory holding manifest.txt (format version,
// config, name -> shape/dtype/file index) plus one raw little-endian f32
// blob per named tensor. Round-trips bit-exactly.
struct Checkpoint {
    ModelConfig model;
    std::optional<std::pair<int, ConditionMode>> sr;  // scale_factor, condition_mode
    IniSection state{"state", {}};                    // optional scalar training state
    ParamMap<float> tensors;

    bool has_state() const { return !state.entries.empty(); }
};

void save_checkpoint(const std::string& dir, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace hvsr
