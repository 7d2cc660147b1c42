#include <CLI11.hpp>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "hvsr/checkpoint.hpp"
#include "hvsr/conditional.hpp"
#include "hvsr/evaluate.hpp"
#include "hvsr/kernels.hpp"
#include "hvsr/train.hpp"

namespace fs = std::filesystem;
using namespace hvsr;

namespace {

// exit codes: 0 success, 1 runtime failure, 2 usage error
constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct CommonModelFlags {
    std::string config_path;
    std::optional<int> image_size, width, z_channels, mixture_components, scale;
    std::optional<std::string> enc_blocks, dec_layers, condition_mode;
    std::optional<int> steps, batch_size;
    std::optional<double> learning_rate;
    std::optional<uint64_t> seed;
    std::optional<double> grad_clip, grad_skip, ema_decay;
    std::optional<std::string> freeze;
    std::optional<int> val_interval, sample_interval, checkpoint_interval, kl_warmup, lr_warmup;
    std::optional<double> free_bits;

    void register_flags(CLI::App* cmd, bool with_sr) {
        cmd->add_option("--config", config_path, "run configuration file (flags override file values)");
        cmd->add_option("--image-size", image_size, "HR training crop size");
        cmd->add_option("--width", width, "backbone channel width");
        cmd->add_option("--z-channels", z_channels, "latent channels per stochastic layer");
        cmd->add_option("--mixture-components", mixture_components, "observation mixture components");
        cmd->add_option("--enc-blocks", enc_blocks, "encoder blocks, e.g. 32x2,16x2,8x2,4x2,1x1");
        cmd->add_option("--dec-layers", dec_layers, "decoder stochastic layers, e.g. 1x1,4x1,8x2,16x2,32x1");
        if (with_sr) {
            cmd->add_option("--scale", scale, "super-resolution factor");
            cmd->add_option("--condition-mode", condition_mode, "prior_and_posterior | posterior_only")
                ->check(CLI::IsMember({"prior_and_posterior", "posterior_only"}));
        }
        cmd->add_option("--steps", steps, "training steps");
        cmd->add_option("--batch-size", batch_size, "batch size");
        cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--grad-clip", grad_clip, "global gradient clip norm");
        cmd->add_option("--grad-skip", grad_skip, "skip steps whose gradient norm exceeds this");
        cmd->add_option("--ema-decay", ema_decay, "EMA decay for a shadow copy of the weights (0 = off)");
        cmd->add_option("--freeze-policy", freeze, "none | encoder_frozen")
            ->check(CLI::IsMember({"none", "encoder_frozen"}));
        cmd->add_option("--val-interval", val_interval, "validation ELBO every N steps (0 = off)");
        cmd->add_option("--sample-interval", sample_interval, "sample preview every N steps (0 = off)");
        cmd->add_option("--checkpoint-interval", checkpoint_interval, "checkpoint every N steps");
        cmd->add_option("--kl-warmup", kl_warmup, "KL warm-up steps (0 = off)");
        cmd->add_option("--lr-warmup", lr_warmup, "learning-rate warm-up steps (0 = off)");
        cmd->add_option("--free-bits", free_bits, "per-layer KL floor in nats (0 = off)");
    }

    RunConfig resolve(bool freeze_default_frozen) const {
        RunConfig rc;
        if (!config_path.empty()) rc = load_run_config(config_path);
        if (image_size) rc.model.image_size = *image_size;
        if (width) rc.model.width = *width;
        if (z_channels) rc.model.z_channels = *z_channels;
        if (mixture_components) rc.model.mixture_components = *mixture_components;
        if (enc_blocks) rc.model.enc_blocks = res_counts_from_string(*enc_blocks);
        if (dec_layers) rc.model.dec_layers = res_counts_from_string(*dec_layers);
        if (scale) rc.scale_factor = *scale;
        if (condition_mode) rc.condition_mode = condition_mode_from_string(*condition_mode);
        if (steps) rc.train.max_steps = *steps;
        if (batch_size) rc.train.batch_size = *batch_size;
        if (learning_rate) rc.train.learning_rate = *learning_rate;
        if (seed) rc.train.seed = *seed;
        if (grad_clip) rc.train.grad_clip_norm = *grad_clip;
        if (grad_skip) rc.train.grad_skip_threshold = *grad_skip;
        if (ema_decay) rc.train.ema_decay = *ema_decay;
        if (freeze)
            rc.train.freeze_policy = freeze_policy_from_string(*freeze);
        else if (freeze_default_frozen)
            rc.train.freeze_policy = FreezePolicy::encoder_frozen;
        if (val_interval) rc.train.val_interval = *val_interval;
        if (sample_interval) rc.train.sample_interval = *sample_interval;
        if (checkpoint_interval) rc.train.checkpoint_interval = *checkpoint_interval;
        if (kl_warmup) rc.train.kl_warmup_steps = *kl_warmup;
        if (lr_warmup) rc.train.lr_warmup_steps = *lr_warmup;
        if (free_bits) rc.train.free_bits = *free_bits;
        if (rc.model.enc_blocks.empty() || rc.model.dec_layers.empty())
            throw ArgumentError("model structure missing: provide --config or --enc-blocks/--dec-layers");
        return rc;
    }
};

SrModel load_sr_model(const std::string& path) { return sr_from_checkpoint(load_checkpoint(path)); }

Resolver model_resolver(const SrModel& model, int patch_size, int overlap, bool sample_pixels) {
    int P = patch_size > 0 ? patch_size : model.cfg.lr_size();
    return [&model, P, overlap, sample_pixels](const RgbImage& lr, double t, uint64_t seed) {
        return model.super_resolve_image(lr, P, overlap, t, seed, sample_pixels);
    };
}

int cmd_train_base(const CommonModelFlags& flags, const std::string& data_dir, const std::string& run_dir,
                   const std::string& resume) {
    RunConfig rc = flags.resolve(false);
    rc.model.validate();
    auto model = VdvaeModel::init(rc.model, splitmix64(rc.train.seed));
    VdvaeTrainable trainable(model);
    TrainResult result = train(trainable, rc, data_dir, run_dir, resume);
    std::printf("trained %" PRId64 " applied / %" PRId64 " skipped steps; first loss %.2f, last loss %.2f\n",
                result.applied, result.skipped, result.first_loss, result.last_loss);
    std::printf("checkpoint: %s\n", result.final_checkpoint.c_str());
    return kOk;
}

int cmd_train_sr(const CommonModelFlags& flags, const std::string& data_dir, const std::string& run_dir,
                 const std::string& pretrained, const std::string& resume) {
    RunConfig rc = flags.resolve(!pretrained.empty());
    SrModelConfig cfg = rc.sr_config();
    cfg.validate();
    auto model = SrModel::init(cfg, splitmix64(rc.train.seed));
    if (!pretrained.empty()) {
        ImportManifest manifest = import_pretrained(pretrained, model);
        std::printf("imported %zu pretrained tensors; %zu fresh (LR-encoder, gates, top prior)\n",
                    manifest.copied.size(), manifest.fresh.size());
    } else {
        std::fprintf(stderr, "warning: no --pretrained checkpoint; training the SR model from scratch\n");
    }
    SrTrainable trainable(model);
    TrainResult result = train(trainable, rc, data_dir, run_dir, resume);
    std::printf("trained %" PRId64 " applied / %" PRId64 " skipped steps; first loss %.2f, last loss %.2f\n",
                result.applied, result.skipped, result.first_loss, result.last_loss);
    std::printf("checkpoint: %s\n", result.final_checkpoint.c_str());
    return kOk;
}

int cmd_super_resolve(const std::string& model_path, const std::string& input, const std::string& output,
                      double temperature, int patch_size, int overlap, uint64_t seed, bool sample_pixels) {
    SrModel model = load_sr_model(model_path);
    RgbImage lr = load_image(input);
    int P = patch_size > 0 ? patch_size : model.cfg.lr_size();
    auto t0 = std::chrono::steady_clock::now();
    RgbImage sr = model.super_resolve_image(lr, P, overlap, temperature, seed, sample_pixels);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    save_image(sr, output);
    std::printf("%dx%d -> %dx%d (scale %d, patch %d, overlap %d, t=%g) in %lld ms\n", lr.width, lr.height,
                sr.width, sr.height, model.cfg.scale_factor, P, overlap, temperature,
                static_cast<long long>(ms.count()));
    return kOk;
}

int cmd_evaluate(const std::string& model_path, bool bicubic_baseline, const std::string& dataset,
                 const std::string& out_dir, double temperature, int shave, uint64_t seed,
                 const std::string& lr_dir, int patch_size, int overlap, int threads) {
    EvalOptions opt;
    opt.temperature = temperature;
    opt.shave = shave;
    opt.seed = seed;
    opt.lr_dir = lr_dir;
    opt.threads = threads;

    std::optional<SrModel> model;
    Resolver resolver;
    if (bicubic_baseline) {
        opt.scale = 4;
        resolver = [](const RgbImage& lr, double, uint64_t) { return bicubic_upscale(lr, 4); };
    } else {
        model.emplace(load_sr_model(model_path));
        opt.scale = model->cfg.scale_factor;
        resolver = model_resolver(*model, patch_size, overlap, false);
    }
    MetricReport report = evaluate_dataset(resolver, dataset, opt);
    fs::create_directories(out_dir);
    write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    write_text_file((fs::path(out_dir) / "summary.txt").string(), report_summary(report));
    std::printf("%s", report_summary(report).c_str());
    return report.failed_count > 0 ? kRuntime : kOk;
}

int cmd_sweep(const std::string& model_path, const std::string& dataset, const std::string& out_dir,
              const std::vector<double>& temps, uint64_t seed, int patch_size, int overlap, int threads) {
    SrModel model = load_sr_model(model_path);
    EvalOptions opt;
    opt.scale = model.cfg.scale_factor;
    opt.seed = seed;
    opt.threads = threads;
    auto rows = temperature_sweep(model_resolver(model, patch_size, overlap, false), dataset, temps, opt);
    fs::create_directories(out_dir);
    write_sweep_csv(rows, (fs::path(out_dir) / "sweep.csv").string());
    render_sweep_plot(rows, (fs::path(out_dir) / "sweep.png").string());
    for (const auto& r : rows)
        std::printf("t=%.3f  psnr_y=%.4f  ssim_y=%.4f\n", r.temperature, r.mean_psnr_y, r.mean_ssim_y);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical VAE super-resolution: training, inference, evaluation"};
    app.require_subcommand(1);
    std::string kernels_backend = "auto";
    app.add_option("--kernels", kernels_backend, "compute backend: auto | scalar | avx2")
        ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

    // train-base
    auto* tb = app.add_subcommand("train-base", "train an unconditional model on HR crops");
    CommonModelFlags tb_flags;
    std::string tb_data, tb_run, tb_resume;
    tb->add_option("--data", tb_data, "directory of training PNGs")->required();
    tb->add_option("--run-dir", tb_run, "output run directory")->required();
    tb->add_option("--resume", tb_resume, "checkpoint directory to resume from");
    tb_flags.register_flags(tb, false);

    // train-sr
    auto* ts = app.add_subcommand("train-sr", "train the LR-conditioned SR model");
    CommonModelFlags ts_flags;
    std::string ts_data, ts_run, ts_pre, ts_resume;
    ts->add_option("--data", ts_data, "directory of HR training PNGs (LR pairs are generated)")->required();
    ts->add_option("--run-dir", ts_run, "output run directory")->required();
    ts->add_option("--pretrained", ts_pre, "unconditional checkpoint to import (enables encoder freeze)");
    ts->add_option("--resume", ts_resume, "checkpoint directory to resume from");
    ts_flags.register_flags(ts, true);

    // super-resolve
    auto* sr = app.add_subcommand("super-resolve", "upscale one image with a trained model");
    std::string sr_model, sr_in, sr_out;
    double sr_temp = 0.1;
    int sr_patch = 0, sr_overlap = 0;
    uint64_t sr_seed = 1;
    bool sr_sample = false;
    sr->add_option("--model", sr_model, "SR checkpoint directory")->required();
    sr->add_option("--input", sr_in, "input LR PNG")->required();
    sr->add_option("--output", sr_out, "output PNG path")->required();
    sr->add_option("--temperature", sr_temp, "prior sampling temperature in [0,1]");
    sr->add_option("--patch-size", sr_patch, "LR patch size (default: model LR input size)");
    sr->add_option("--overlap", sr_overlap, "LR patch overlap in pixels");
    sr->add_option("--seed", sr_seed, "sampling seed");
    sr->add_flag("--sample-pixels", sr_sample, "sample the observation model instead of mean decoding");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "PSNR/SSIM (Y channel) over a dataset");
    std::string ev_model, ev_data, ev_out = "eval_out", ev_lrdir;
    double ev_temp = 0.1;
    int ev_shave = -1, ev_patch = 0, ev_overlap = 0, ev_threads = 0;
    uint64_t ev_seed = 1;
    bool ev_bicubic = false;
    ev->add_option("--model", ev_model, "SR checkpoint directory");
    ev->add_flag("--bicubic-baseline", ev_bicubic, "evaluate the bicubic upscaling baseline instead");
    ev->add_option("--dataset", ev_data, "directory of HR PNGs")->required();
    ev->add_option("--out", ev_out, "output directory for report.csv / summary.txt");
    ev->add_option("--temperature", ev_temp, "sampling temperature");
    ev->add_option("--shave", ev_shave, "border shave in pixels (default: scale factor)");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--lr-dataset", ev_lrdir, "paired LR directory (default: bicubic degradation)");
    ev->add_option("--patch-size", ev_patch, "LR patch size (default: model LR input size)");
    ev->add_option("--overlap", ev_overlap, "LR patch overlap");
    ev->add_option("--threads", ev_threads, "evaluation threads (0 = auto)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "evaluate across sampling temperatures");
    std::string sw_model, sw_data, sw_out = "sweep_out";
    std::vector<double> sw_temps;
    uint64_t sw_seed = 1;
    int sw_patch = 0, sw_overlap = 0, sw_threads = 0;
    sw->add_option("--model", sw_model, "SR checkpoint directory")->required();
    sw->add_option("--dataset", sw_data, "directory of HR PNGs")->required();
    sw->add_option("--temps", sw_temps, "temperatures, e.g. --temps 0.1,0.5,1.0")->required()->delimiter(',');
    sw->add_option("--out", sw_out, "output directory for sweep.csv / sweep.png");
    sw->add_option("--seed", sw_seed, "evaluation seed");
    sw->add_option("--patch-size", sw_patch, "LR patch size");
    sw->add_option("--overlap", sw_overlap, "LR patch overlap");
    sw->add_option("--threads", sw_threads, "evaluation threads (0 = auto)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        kernels::set_backend(kernels_backend);
        if (tb->parsed()) return cmd_train_base(tb_flags, tb_data, tb_run, tb_resume);
        if (ts->parsed()) return cmd_train_sr(ts_flags, ts_data, ts_run, ts_pre, ts_resume);
        if (sr->parsed())
            return cmd_super_resolve(sr_model, sr_in, sr_out, sr_temp, sr_patch, sr_overlap, sr_seed, sr_sample);
        if (ev->parsed()) {
            if (!ev_bicubic && ev_model.empty()) {
                std::fprintf(stderr, "usage error: evaluate needs --model or --bicubic-baseline\n");
                return kUsage;
            }
            return cmd_evaluate(ev_model, ev_bicubic, ev_data, ev_out, ev_temp, ev_shave, ev_seed, ev_lrdir,
                                ev_patch, ev_overlap, ev_threads);
        }
        if (sw->parsed()) return cmd_sweep(sw_model, sw_data, sw_out, sw_temps, sw_seed, sw_patch, sw_overlap,
                                           sw_threads);
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const NotFoundError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kOk;
}
