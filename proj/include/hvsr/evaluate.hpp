#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hvsr/image.hpp"
#include "hvsr/metrics.hpp"

namespace hvsr {

struct MetricRow {
    std::string image_id;
    double psnr_y = 0;
    double ssim_y = 0;
    bool failed = false;
    // reserved for externally computed perceptual scores; NaN = absent
    double dists = std::numeric_limits<double>::quiet_NaN();
};

struct MetricReport {
    std::string dataset;
    std::vector<MetricRow> rows;  // ordered by image id
    double mean_psnr_y = 0;       // over finite, non-failed rows
    double mean_ssim_y = 0;       // over non-failed rows
    int inf_psnr_count = 0;
    int failed_count = 0;
    // protocol metadata
    int scale = 4;
    int shave = 4;
    double temperature = 0;
    uint64_t seed = 0;
    std::string color_convention = "ycbcr-bt601-studio-y";
    std::string lr_source;  // "bicubic" or the paired LR directory
    std::string notes;
};

// Produces the SR candidate for one LR image (model inference, a bicubic
// baseline, an identity stub in tests, ...).
using Resolver = std::function<RgbImage(const RgbImage& lr, double temperature, uint64_t seed)>;

struct EvalOptions {
    int scale = 4;
    int shave = -1;  // -1: defaults to scale
    double temperature = 0.1;
    uint64_t seed = 1;
    std::string lr_dir;  // empty: degrade HR by bicubic_downscale
    int threads = 0;     // 0: hardware choice
};

MetricReport evaluate_dataset(const Resolver& resolver, const std::string& dataset_dir, const EvalOptions& opt);

void write_report_csv(const MetricReport& report, const std::string& path);
std::string report_summary(const MetricReport& report);

struct SweepRow {
    double temperature = 0;
    double mean_psnr_y = 0;
    double mean_ssim_y = 0;
};

std::vector<SweepRow> temperature_sweep(const Resolver& resolver, const std::string& dataset_dir,
                                        const std::vector<double>& temps, const EvalOptions& opt);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
void render_sweep_plot(const std::vector<SweepRow>& rows, const std::string& png_path);

}  // namespace hvsr
