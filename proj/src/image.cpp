#include "hvsr/image.hpp"

#include <algorithm>
#include <cmath>

#include "hvsr/error.hpp"

namespace hvsr {

namespace {

// Catmull-Rom cubic (a = -0.5).
double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

struct ResampleTaps {
    std::vector<int> first;       // first source index per output position
    std::vector<double> weights;  // taps per output position, flattened
    int taps = 0;
};

// scale > 1 downscales with the kernel stretched by `scale` (antialias);
// scale < 1 upscales with the plain kernel.
ResampleTaps plan_resample(int out_len, double scale) {
    ResampleTaps plan;
    double support = 2.0 * std::max(1.0, scale);
    plan.taps = static_cast<int>(std::ceil(2.0 * support)) + 1;
    plan.first.resize(static_cast<size_t>(out_len));
    plan.weights.assign(static_cast<size_t>(out_len) * plan.taps, 0.0);
    double kscale = std::max(1.0, scale);
    for (int i = 0; i < out_len; ++i) {
        double center = (i + 0.5) * scale - 0.5;
        int first = static_cast<int>(std::floor(center - support)) + 1;
        plan.first[static_cast<size_t>(i)] = first;
        double sum = 0.0;
        for (int t = 0; t < plan.taps; ++t) {
            double w = cubic_kernel((first + t - center) / kscale);
            plan.weights[static_cast<size_t>(i) * plan.taps + t] = w;
            sum += w;
        }
        for (int t = 0; t < plan.taps; ++t) plan.weights[static_cast<size_t>(i) * plan.taps + t] /= sum;
    }
    return plan;
}

// Whole-sample reflection (no edge repeat) for out-of-range source indices.
int mirror_index(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

// Separable resample on double planes; borders reflect.
std::vector<double> resample_axis(const std::vector<double>& src, int h, int w, int out_w,
                                  const ResampleTaps& plan) {
    std::vector<double> dst(static_cast<size_t>(h) * out_w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const double* wt = plan.weights.data() + static_cast<size_t>(x) * plan.taps;
            int first = plan.first[static_cast<size_t>(x)];
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = 0; t < plan.taps; ++t) {
                    int sx = mirror_index(first + t, w);
                    acc += wt[t] * src[(static_cast<size_t>(y) * w + sx) * 3 + c];
                }
                dst[(static_cast<size_t>(y) * out_w + x) * 3 + c] = acc;
            }
        }
    }
    return dst;
}

std::vector<double> transpose_plane(const std::vector<double>& src, int h, int w) {
    std::vector<double> dst(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                dst[(static_cast<size_t>(x) * h + y) * 3 + c] = src[(static_cast<size_t>(y) * w + x) * 3 + c];
    return dst;
}

RgbImage bicubic_resample(const RgbImage& img, int out_h, int out_w, double scale) {
    std::vector<double> plane(img.pix.begin(), img.pix.end());
    ResampleTaps px = plan_resample(out_w, scale);
    plane = resample_axis(plane, img.height, img.width, out_w, px);
    plane = transpose_plane(plane, img.height, out_w);
    ResampleTaps py = plan_resample(out_h, scale);
    plane = resample_axis(plane, out_w, img.height, out_h, py);
    plane = transpose_plane(plane, out_w, out_h);

    RgbImage out(out_h, out_w);
    for (size_t i = 0; i < out.pix.size(); ++i) out.pix[i] = quantize_sample(plane[i]);
    return out;
}

}  // namespace

uint8_t quantize_sample(double v) {
    double r = v < 0.0 ? std::ceil(v - 0.5) : std::floor(v + 0.5);  // half away from zero
    return static_cast<uint8_t>(std::clamp(r, 0.0, 255.0));
}

LumaPlane rgb_to_luma(const RgbImage& img) {
    LumaPlane out;
    out.height = img.height;
    out.width = img.width;
    out.v.resize(static_cast<size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            out.v[static_cast<size_t>(y) * img.width + x] = 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
        }
    return out;
}

RgbImage bicubic_downscale(const RgbImage& img, int factor) {
    if (factor < 2) throw ArgumentError("downscale factor must be >= 2");
    if (img.height % factor != 0 || img.width % factor != 0)
        throw ArgumentError("image dimensions must be divisible by the factor (center-crop first)");
    return bicubic_resample(img, img.height / factor, img.width / factor, static_cast<double>(factor));
}

RgbImage bicubic_upscale(const RgbImage& img, int factor) {
    if (factor < 2) throw ArgumentError("upscale factor must be >= 2");
    return bicubic_resample(img, img.height * factor, img.width * factor, 1.0 / factor);
}

PatchGrid extract_patches(const RgbImage& img, int patch_size, int stride) {
    if (patch_size < 1) throw ArgumentError("patch_size must be >= 1");
    if (stride < 1 || stride > patch_size) throw ArgumentError("stride must be in [1, patch_size]");
    if (patch_size > img.height || patch_size > img.width)
        throw ArgumentError("patch_size exceeds image dimensions");

    auto origins = [&](int dim) {
        std::vector<int> o;
        for (int p = 0; p + patch_size <= dim; p += stride) o.push_back(p);
        if (o.back() + patch_size < dim) o.push_back(dim - patch_size);  // right/bottom aligned
        return o;
    };

    PatchGrid grid;
    grid.patch_size = patch_size;
    grid.stride = stride;
    grid.src_height = img.height;
    grid.src_width = img.width;
    grid.origins_y = origins(img.height);
    grid.origins_x = origins(img.width);
    grid.rows = static_cast<int>(grid.origins_y.size());
    grid.cols = static_cast<int>(grid.origins_x.size());
    grid.patches.reserve(static_cast<size_t>(grid.rows) * grid.cols);
    for (int oy : grid.origins_y)
        for (int ox : grid.origins_x) grid.patches.push_back(crop(img, oy, ox, patch_size, patch_size));
    return grid;
}

RgbImage stitch_patches(const PatchGrid& grid) {
    if (grid.rows < 1 || grid.cols < 1 || grid.patches.size() != static_cast<size_t>(grid.rows) * grid.cols ||
        static_cast<int>(grid.origins_y.size()) != grid.rows || static_cast<int>(grid.origins_x.size()) != grid.cols)
        throw StructureError("patch grid geometry is inconsistent");
    const int P = grid.patch_size;
    for (const auto& p : grid.patches)
        if (p.height != P || p.width != P) throw StructureError("patch size mismatch in grid");
    for (int oy : grid.origins_y)
        if (oy < 0 || oy + P > grid.src_height) throw StructureError("patch origin out of bounds");
    for (int ox : grid.origins_x)
        if (ox < 0 || ox + P > grid.src_width) throw StructureError("patch origin out of bounds");

    std::vector<double> acc(static_cast<size_t>(grid.src_height) * grid.src_width * 3, 0.0);
    std::vector<int> cnt(static_cast<size_t>(grid.src_height) * grid.src_width, 0);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const RgbImage& p = grid.patches[static_cast<size_t>(r) * grid.cols + c];
            int oy = grid.origins_y[static_cast<size_t>(r)];
            int ox = grid.origins_x[static_cast<size_t>(c)];
            for (int y = 0; y < P; ++y)
                for (int x = 0; x < P; ++x) {
                    size_t di = static_cast<size_t>(oy + y) * grid.src_width + (ox + x);
                    for (int ch = 0; ch < 3; ++ch) acc[di * 3 + ch] += p.at(y, x, ch);
                    cnt[di] += 1;
                }
        }
    RgbImage out(grid.src_height, grid.src_width);
    for (size_t i = 0; i < cnt.size(); ++i) {
        if (cnt[i] == 0) throw StructureError("patch grid does not cover the source image");
        for (int ch = 0; ch < 3; ++ch) out.pix[i * 3 + ch] = quantize_sample(acc[i * 3 + ch] / cnt[i]);
    }
    return out;
}

Tensor<float> normalize_chw(const RgbImage& img) {
    Tensor<float> t({3, img.height, img.width});
    const int64_t hw = static_cast<int64_t>(img.height) * img.width;
    for (int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            t.v[static_cast<size_t>(c * hw + i)] = static_cast<float>(img.pix[static_cast<size_t>(i) * 3 + c]) / 127.5f - 1.0f;
    return t;
}

RgbImage denormalize_chw(const Tensor<float>& t) {
    if (t.shape.size() != 3 || t.shape[0] != 3) throw ArgumentError("denormalize expects a (3,H,W) tensor");
    RgbImage out(t.shape[1], t.shape[2]);
    const int64_t hw = static_cast<int64_t>(t.shape[1]) * t.shape[2];
    for (int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            out.pix[static_cast<size_t>(i) * 3 + c] =
                quantize_sample((static_cast<double>(t.v[static_cast<size_t>(c * hw + i)]) + 1.0) * 127.5);
    return out;
}

RgbImage crop(const RgbImage& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width) throw ArgumentError("crop out of bounds");
    RgbImage out(h, w);
    for (int y = 0; y < h; ++y)
        std::copy_n(img.pix.data() + (static_cast<size_t>(y0 + y) * img.width + x0) * 3, static_cast<size_t>(w) * 3,
                    out.pix.data() + static_cast<size_t>(y) * w * 3);
    return out;
}

RgbImage center_crop(const RgbImage& img, int target_h, int target_w) {
    return crop(img, (img.height - target_h) / 2, (img.width - target_w) / 2, target_h, target_w);
}

RgbImage center_crop_divisible(const RgbImage& img, int factor) {
    int h = (img.height / factor) * factor;
    int w = (img.width / factor) * factor;
    if (h < factor || w < factor) throw ArgumentError("image too small for factor");
    return center_crop(img, h, w);
}

RgbImage reflect_pad(const RgbImage& img, int target_h, int target_w) {
    if (target_h <= img.height && target_w <= img.width) return img;
    int h = std::max(target_h, img.height);
    int w = std::max(target_w, img.width);
    auto mirror = [](int i, int n) {
        // reflect without repeating the edge sample; degenerate n==1 pins to 0
        if (n == 1) return 0;
        int period = 2 * (n - 1);
        i = ((i % period) + period) % period;
        return i < n ? i : period - i;
    };
    RgbImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = mirror(y, img.height);
            int sx = mirror(x, img.width);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    return out;
}

}  // namespace hvsr
