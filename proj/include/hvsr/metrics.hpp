#pragma once

#include "hvsr/image.hpp"

namespace hvsr {

// PSNR on the BT.601 studio-swing Y channel after shaving `shave` pixels
// from every border. Identical interiors return +infinity (the report layer
// treats that as a sentinel, never a capped number).
double psnr_y(const RgbImage& reference, const RgbImage& candidate, int shave);
double psnr_luma(const LumaPlane& reference, const LumaPlane& candidate, int shave);

// Single-scale SSIM on the shaved Y planes: 11x11 Gaussian window with
// sigma 1.5, K1=0.01, K2=0.03, L=255, averaged over valid window positions.
double ssim_y(const RgbImage& reference, const RgbImage& candidate, int shave);
double ssim_luma(const LumaPlane& reference, const LumaPlane& candidate, int shave);

}  // namespace hvsr
