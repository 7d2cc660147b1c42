#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvsr/tensor.hpp"

namespace hvsr {

// 8-bit RGB raster, HWC layout.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pix;  // height*width*3, row-major, R,G,B

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), pix(static_cast<size_t>(h) * w * 3, 0) {}

    uint8_t& at(int y, int x, int c) { return pix[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return pix[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const RgbImage& o) const = default;
};

// BT.601 studio-swing luma, values in [16, 235].
struct LumaPlane {
    int height = 0;
    int width = 0;
    std::vector<double> v;

    double at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
};

struct PatchGrid {
    int patch_size = 0;
    int stride = 0;
    int rows = 0;
    int cols = 0;
    std::vector<int> origins_y;  // per grid row
    std::vector<int> origins_x;  // per grid col
    std::vector<RgbImage> patches;  // row-major rows x cols
    int src_height = 0;
    int src_width = 0;
};

// PNG I/O (8-bit RGB; gray/palette/alpha inputs are expanded, alpha dropped).
RgbImage load_image(const std::string& path);
void save_image(const RgbImage& img, const std::string& path);

LumaPlane rgb_to_luma(const RgbImage& img);

// Catmull-Rom bicubic (a = -0.5). Downscale applies the antialias prefilter
// (kernel stretched by the factor); upscale uses the plain kernel.
RgbImage bicubic_downscale(const RgbImage& img, int factor);
RgbImage bicubic_upscale(const RgbImage& img, int factor);

PatchGrid extract_patches(const RgbImage& img, int patch_size, int stride);
RgbImage stitch_patches(const PatchGrid& grid);

// v -> v/127.5 - 1 into a (3,H,W) tensor, and the inverse with clipping and
// round-half-away-from-zero.
Tensor<float> normalize_chw(const RgbImage& img);
RgbImage denormalize_chw(const Tensor<float>& t);

uint8_t quantize_sample(double v);  // [0,255] clip + round half away from zero

RgbImage center_crop(const RgbImage& img, int target_h, int target_w);
RgbImage crop(const RgbImage& img, int y0, int x0, int h, int w);
// Largest centered crop whose sides are divisible by factor.
RgbImage center_crop_divisible(const RgbImage& img, int factor);
// Grow to at least (target_h, target_w) by mirroring edges.
RgbImage reflect_pad(const RgbImage& img, int target_h, int target_w);

}  // namespace hvsr
