#include "hvsr/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "hvsr/config.hpp"
#include "hvsr/error.hpp"
#include "hvsr/rng.hpp"

namespace fs = std::filesystem;

namespace hvsr {

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ArgumentError("dataset directory not found: " + dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw ArgumentError("no PNG images found in " + dir);
    return paths;
}

std::string metric_str(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

MetricReport evaluate_dataset(const Resolver& resolver, const std::string& dataset_dir, const EvalOptions& opt) {
    auto paths = list_pngs(dataset_dir);
    MetricReport report;
    report.dataset = dataset_dir;
    report.scale = opt.scale;
    report.shave = opt.shave < 0 ? opt.scale : opt.shave;
    report.temperature = opt.temperature;
    report.seed = opt.seed;
    report.lr_source = opt.lr_dir.empty() ? "bicubic" : opt.lr_dir;
    report.rows.resize(paths.size());

    std::atomic<bool> cropped_any{false};
    auto eval_one = [&](size_t idx) {
        MetricRow& row = report.rows[idx];
        row.image_id = fs::path(paths[idx]).stem().string();
        try {
            RgbImage hr = load_image(paths[idx]);
            RgbImage ref = center_crop_divisible(hr, opt.scale);
            if (ref.height != hr.height || ref.width != hr.width) cropped_any = true;
            RgbImage lr;
            if (opt.lr_dir.empty()) {
                lr = bicubic_downscale(ref, opt.scale);
            } else {
                fs::path lp = fs::path(opt.lr_dir) / fs::path(paths[idx]).filename();
                lr = load_image(lp.string());
                if (lr.height * opt.scale != ref.height || lr.width * opt.scale != ref.width)
                    throw ArgumentError("paired LR image has wrong shape: " + lp.string());
            }
            RgbImage cand = resolver(lr, opt.temperature, Rng::derive(opt.seed, idx).next_u32());
            if (cand.height != ref.height || cand.width != ref.width)
                throw ArgumentError("resolver output shape mismatch for " + row.image_id);
            row.psnr_y = psnr_y(ref, cand, report.shave);
            row.ssim_y = ssim_y(ref, cand, report.shave);
        } catch (const std::exception&) {
            row.failed = true;
        }
    };

    unsigned nthreads = opt.threads > 0 ? static_cast<unsigned>(opt.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
    nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(paths.size()));
    if (nthreads <= 1) {
        for (size_t i = 0; i < paths.size(); ++i) eval_one(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < nthreads; ++t)
            pool.emplace_back([&, t] {
                for (size_t i = t; i < paths.size(); i += nthreads) eval_one(i);
            });
        for (auto& th : pool) th.join();
    }

    double psum = 0, ssum = 0;
    int pcount = 0, scount = 0;
    for (const auto& row : report.rows) {
        if (row.failed) {
            ++report.failed_count;
            continue;
        }
        if (std::isinf(row.psnr_y)) {
            ++report.inf_psnr_count;
        } else {
            psum += row.psnr_y;
            ++pcount;
        }
        ssum += row.ssim_y;
        ++scount;
    }
    report.mean_psnr_y = pcount ? psum / pcount : 0.0;
    report.mean_ssim_y = scount ? ssum / scount : 0.0;
    if (cropped_any)
        report.notes = "dims center-cropped to multiples of " + std::to_string(opt.scale) + " before degrading";
    return report;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write report: " + path);
    // the trailing dists column is reserved for externally computed scores
    bool any_dists = false;
    for (const auto& row : report.rows) any_dists = any_dists || !std::isnan(row.dists);
    out << "image_id,psnr_y,ssim_y,failed" << (any_dists ? ",dists" : "") << "\n";
    for (const auto& row : report.rows) {
        if (row.failed)
            out << row.image_id << ",,,1";
        else
            out << row.image_id << "," << metric_str(row.psnr_y) << "," << metric_str(row.ssim_y) << ",0";
        if (any_dists) out << "," << (std::isnan(row.dists) ? "" : metric_str(row.dists));
        out << "\n";
    }
}

std::string report_summary(const MetricReport& report) {
    std::ostringstream s;
    s << "[report]\n";
    s << "dataset = " << report.dataset << "\n";
    s << "images = " << report.rows.size() << "\n";
    s << "failed = " << report.failed_count << "\n";
    s << "mean_psnr_y = " << metric_str(report.mean_psnr_y) << "\n";
    s << "mean_ssim_y = " << metric_str(report.mean_ssim_y) << "\n";
    if (report.inf_psnr_count)
        s << "# " << report.inf_psnr_count
          << " image(s) with zero error (infinite PSNR) excluded from mean_psnr_y\n";
    s << "\n[protocol]\n";
    s << "scale = " << report.scale << "\n";
    s << "shave = " << report.shave << "\n";
    s << "temperature = " << format_double(report.temperature) << "\n";
    s << "seed = " << report.seed << "\n";
    s << "color_convention = " << report.color_convention << "\n";
    s << "lr_source = " << report.lr_source << "\n";
    if (!report.notes.empty()) s << "notes = " << report.notes << "\n";
    return s.str();
}

std::vector<SweepRow> temperature_sweep(const Resolver& resolver, const std::string& dataset_dir,
                                        const std::vector<double>& temps, const EvalOptions& opt) {
    if (temps.empty()) throw ArgumentError("temperature sweep needs at least one temperature");
    for (double t : temps)
        if (t < 0 || t > 1) throw ArgumentError("sweep temperatures must lie in [0, 1]");
    std::vector<SweepRow> rows;
    for (double t : temps) {
        EvalOptions o = opt;
        o.temperature = t;
        MetricReport r = evaluate_dataset(resolver, dataset_dir, o);
        rows.push_back({t, r.mean_psnr_y, r.mean_ssim_y});
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write sweep csv: " + path);
    out << "temperature,mean_psnr_y,mean_ssim_y\n";
    for (const auto& r : rows)
        out << format_double(r.temperature) << "," << metric_str(r.mean_psnr_y) << ","
            << metric_str(r.mean_ssim_y) << "\n";
}

// --------------------------- sweep plot ------------------------------------

namespace {

// 5x7 bitmap glyphs for the handful of characters the axis labels need.
struct Glyph {
    char ch;
    uint8_t rows[7];  // 5 low bits per row, MSB left
};

constexpr Glyph kGlyphs[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'t', {0x08, 0x08, 0x1E, 0x08, 0x08, 0x09, 0x06}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

void draw_text(RgbImage& img, int y, int x, const std::string& text, uint8_t r, uint8_t g, uint8_t b) {
    for (size_t ci = 0; ci < text.size(); ++ci) {
        const Glyph* glyph = nullptr;
        for (const auto& gl : kGlyphs)
            if (gl.ch == text[ci]) glyph = &gl;
        if (!glyph) continue;
        for (int gy = 0; gy < 7; ++gy)
            for (int gx = 0; gx < 5; ++gx)
                if (glyph->rows[gy] & (1 << (4 - gx))) {
                    int py = y + gy, px = x + static_cast<int>(ci) * 6 + gx;
                    if (py >= 0 && py < img.height && px >= 0 && px < img.width) {
                        img.at(py, px, 0) = r;
                        img.at(py, px, 1) = g;
                        img.at(py, px, 2) = b;
                    }
                }
    }
}

void draw_line(RgbImage& img, int y0, int x0, int y1, int x1, uint8_t r, uint8_t g, uint8_t b) {
    int dy = std::abs(y1 - y0), dx = std::abs(x1 - x0);
    int sy = y0 < y1 ? 1 : -1, sx = x0 < x1 ? 1 : -1;
    int err = (dx > dy ? dx : -dy) / 2;
    for (;;) {
        if (y0 >= 0 && y0 < img.height && x0 >= 0 && x0 < img.width) {
            img.at(y0, x0, 0) = r;
            img.at(y0, x0, 1) = g;
            img.at(y0, x0, 2) = b;
        }
        if (y0 == y1 && x0 == x1) break;
        int e2 = err;
        if (e2 > -dx) {
            err -= dy;
            x0 += sx;
        }
        if (e2 < dy) {
            err += dx;
            y0 += sy;
        }
    }
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

// One panel: polyline over temperature with min/max tick labels.
void draw_panel(RgbImage& img, int top, int height, const std::vector<SweepRow>& rows, bool psnr,
                const std::string& label) {
    const int left = 70, right = img.width - 20;
    const int bottom = top + height - 25;
    const int ptop = top + 15;
    draw_line(img, bottom, left, bottom, right, 0, 0, 0);
    draw_line(img, ptop, left, bottom, left, 0, 0, 0);
    draw_text(img, top + 2, left, label, 0, 0, 0);

    double ymin = 1e300, ymax = -1e300, xmin = 1e300, xmax = -1e300;
    for (const auto& r : rows) {
        double y = psnr ? r.mean_psnr_y : r.mean_ssim_y;
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        xmin = std::min(xmin, r.temperature);
        xmax = std::max(xmax, r.temperature);
    }
    if (ymax - ymin < 1e-9) {
        ymax += 0.5;
        ymin -= 0.5;
    }
    if (xmax - xmin < 1e-9) {
        xmax += 0.05;
        xmin -= 0.05;
    }
    auto px = [&](double t) { return left + static_cast<int>((t - xmin) / (xmax - xmin) * (right - left)); };
    auto py = [&](double v) { return bottom - static_cast<int>((v - ymin) / (ymax - ymin) * (bottom - ptop)); };

    draw_text(img, py(ymax) - 3, 8, fmt_tick(ymax), 0, 0, 0);
    draw_text(img, py(ymin) - 3, 8, fmt_tick(ymin), 0, 0, 0);
    draw_text(img, bottom + 6, px(xmin) - 10, "t=" + fmt_tick(xmin), 0, 0, 0);
    draw_text(img, bottom + 6, px(xmax) - 30, "t=" + fmt_tick(xmax), 0, 0, 0);

    uint8_t cr = psnr ? 200 : 30, cg = 30, cb = psnr ? 30 : 180;
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
        double a = psnr ? rows[i].mean_psnr_y : rows[i].mean_ssim_y;
        double b = psnr ? rows[i + 1].mean_psnr_y : rows[i + 1].mean_ssim_y;
        draw_line(img, py(a), px(rows[i].temperature), py(b), px(rows[i + 1].temperature), cr, cg, cb);
    }
    for (const auto& r : rows) {
        double v = psnr ? r.mean_psnr_y : r.mean_ssim_y;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int yy = py(v) + dy, xx = px(r.temperature) + dx;
                if (yy >= 0 && yy < img.height && xx >= 0 && xx < img.width) {
                    img.at(yy, xx, 0) = cr;
                    img.at(yy, xx, 1) = cg;
                    img.at(yy, xx, 2) = cb;
                }
            }
    }
}

}  // namespace

void render_sweep_plot(const std::vector<SweepRow>& rows, const std::string& png_path) {
    if (rows.empty()) throw ArgumentError("nothing to plot");
    RgbImage img(380, 560);
    std::fill(img.pix.begin(), img.pix.end(), 255);
    draw_panel(img, 0, 190, rows, true, "PSNR");
    draw_panel(img, 190, 190, rows, false, "SSIM");
    save_image(img, png_path);
}

}  // namespace hvsr
