#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hvsr/config.hpp"
#include "hvsr/image.hpp"
#include "hvsr/rng.hpp"

namespace testutil {

inline hvsr::ModelConfig tiny_model_cfg() {
    hvsr::ModelConfig cfg;
    cfg.image_size = 8;
    cfg.width = 8;
    cfg.z_channels = 2;
    cfg.mixture_components = 2;
    cfg.enc_blocks = {{8, 1}, {4, 1}, {1, 1}};
    cfg.dec_layers = {{1, 1}, {4, 1}, {8, 1}};
    return cfg;
}

inline hvsr::SrModelConfig tiny_sr_cfg() {
    hvsr::SrModelConfig cfg;
    cfg.base.image_size = 16;
    cfg.base.width = 8;
    cfg.base.z_channels = 2;
    cfg.base.mixture_components = 2;
    cfg.base.enc_blocks = {{16, 1}, {8, 1}, {4, 1}, {1, 1}};
    cfg.base.dec_layers = {{1, 1}, {4, 2}, {8, 1}, {16, 1}};  // K=4, K'=2
    cfg.scale_factor = 4;
    return cfg;
}

inline hvsr::RgbImage random_image(hvsr::Rng& rng, int h, int w) {
    hvsr::RgbImage img(h, w);
    for (auto& p : img.pix) p = static_cast<uint8_t>(rng.below(256));
    return img;
}

// Smooth random images make better toy training data than white noise.
inline hvsr::RgbImage smooth_random_image(hvsr::Rng& rng, int h, int w) {
    int ch = std::max(2, h / 4), cw = std::max(2, w / 4);
    hvsr::RgbImage coarse = random_image(rng, ch, cw);
    hvsr::RgbImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = coarse.at(y * ch / h, x * cw / w, c);
    return out;
}

inline std::string make_dataset_dir(const std::string& name, int count, int size, uint64_t seed) {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    hvsr::Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        char fname[32];
        std::snprintf(fname, sizeof(fname), "img_%03d.png", i);
        hvsr::save_image(smooth_random_image(rng, size, size), (dir / fname).string());
    }
    return dir.string();
}

inline std::string fresh_dir(const std::string& name) {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace testutil
