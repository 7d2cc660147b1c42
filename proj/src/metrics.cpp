#include "hvsr/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "hvsr/error.hpp"

namespace hvsr {

namespace {

void check_pair(int h0, int w0, int h1, int w1, int shave) {
    if (h0 != h1 || w0 != w1) throw ArgumentError("metric inputs must have identical shapes");
    if (shave < 0 || 2 * shave >= h0 || 2 * shave >= w0)
        throw ArgumentError("shave must be >= 0 and leave a non-empty interior");
}

}  // namespace

double psnr_luma(const LumaPlane& reference, const LumaPlane& candidate, int shave) {
    check_pair(reference.height, reference.width, candidate.height, candidate.width, shave);
    int h = reference.height - 2 * shave, w = reference.width - 2 * shave;
    double se = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double d = reference.at(r + shave, c + shave) - candidate.at(r + shave, c + shave);
            se += d * d;
        }
    double mse = se / (static_cast<double>(h) * w);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr_y(const RgbImage& reference, const RgbImage& candidate, int shave) {
    return psnr_luma(rgb_to_luma(reference), rgb_to_luma(candidate), shave);
}

double ssim_luma(const LumaPlane& reference, const LumaPlane& candidate, int shave) {
    check_pair(reference.height, reference.width, candidate.height, candidate.width, shave);
    constexpr int win = 11;
    int h = reference.height - 2 * shave, w = reference.width - 2 * shave;
    if (h < win || w < win) throw ArgumentError("image too small for the 11x11 SSIM window after shave");

    // normalized 11x11 Gaussian, sigma 1.5
    static const auto kernel = [] {
        std::array<double, win * win> k{};
        double sum = 0;
        for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
                double dy = i - (win - 1) / 2.0, dx = j - (win - 1) / 2.0;
                k[static_cast<size_t>(i * win + j)] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                sum += k[static_cast<size_t>(i * win + j)];
            }
        for (auto& v : k) v /= sum;
        return k;
    }();

    auto at = [&](const LumaPlane& p, int y, int x) { return p.at(y + shave, x + shave); };
    constexpr double C1 = (0.01 * 255) * (0.01 * 255);
    constexpr double C2 = (0.03 * 255) * (0.03 * 255);
    double total = 0;
    int64_t count = 0;
    for (int y0 = 0; y0 + win <= h; ++y0) {
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double wij = kernel[static_cast<size_t>(i * win + j)];
                    double xv = at(reference, y0 + i, x0 + j);
                    double yv = at(candidate, y0 + i, x0 + j);
                    mx += wij * xv;
                    my += wij * yv;
                    mxx += wij * xv * xv;
                    myy += wij * yv * yv;
                    mxy += wij * xv * yv;
                }
            double vx = mxx - mx * mx;
            double vy = myy - my * my;
            double cov = mxy - mx * my;
            total += ((2 * mx * my + C1) * (2 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double ssim_y(const RgbImage& reference, const RgbImage& candidate, int shave) {
    return ssim_luma(rgb_to_luma(reference), rgb_to_luma(candidate), shave);
}

}  // namespace hvsr
