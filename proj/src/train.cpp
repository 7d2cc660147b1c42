#include "hvsr/train.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hvsr/dmol.hpp"
#include "hvsr/kernels.hpp"

namespace fs = std::filesystem;

namespace hvsr {

namespace {

// Sum the per-layer KL nodes into the loss with warm-up scaling and the
// optional free-bits floor. Layers under the floor contribute a constant
// (no gradient), which is the usual way to stop over-regularizing them.
GraphF::Var assemble_loss(GraphF& g, GraphF::Var nll, const std::vector<GraphF::Var>& kl_elems,
                          const LossOptions& opt, LossBreakdown* out) {
    auto loss = nll;
    if (out) {
        out->nll = g.scalar(nll);
        out->total = out->nll;
    }
    for (auto klel : kl_elems) {
        auto kl_sum = g.sum(klel);
        double v = g.scalar(kl_sum);
        if (out) {
            out->kl_per_layer.push_back(v);
            out->total += v;
        }
        GraphF::Var term = kl_sum;
        if (opt.free_bits > 0 && v < opt.free_bits) {
            Tensor<float> c({1}, static_cast<float>(v));
            term = g.leaf(c, false);
        }
        if (opt.kl_beta != 1.0) term = g.scale(term, static_cast<float>(opt.kl_beta));
        loss = g.add(loss, term);
    }
    return loss;
}

std::string hex_of_double(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, bits);
    return buf;
}

double double_of_hex(const std::string& s) {
    uint64_t bits = std::stoull(s, nullptr, 16);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

int64_t state_i64(const IniSection& s, const char* key) {
    const std::string* v = s.find(key);
    if (!v) throw FormatError(std::string("checkpoint state missing key: ") + key);
    return std::stoll(*v);
}

uint64_t state_u64(const IniSection& s, const char* key) {
    const std::string* v = s.find(key);
    if (!v) throw FormatError(std::string("checkpoint state missing key: ") + key);
    return std::stoull(*v);
}

}  // namespace

GraphF::Var VdvaeTrainable::build_loss(GraphF& g, const net::BoundParams<float>& p, const Batch& batch, Rng& rng,
                                       const LossOptions& opt, LossBreakdown* out) const {
    auto x = g.leaf(pack_batch(batch.hr), false);
    auto acts = net::build_encoder(g, p, m_.cfg.enc_blocks, "enc", x);
    net::DecodeOptions<float> dopt;
    dopt.sample_mode = false;
    dopt.enc_acts = &acts;
    dopt.rng = &rng;
    auto dec = net::build_decoder(g, p, m_.cfg, static_cast<int>(batch.hr.size()), dopt);
    std::vector<const uint8_t*> imgs;
    for (const auto& im : batch.hr) imgs.push_back(im.pix.data());
    auto nll = dmol_nll(g, imgs, m_.cfg.image_size, m_.cfg.image_size, dec.obs_params, m_.cfg.mixture_components);
    return assemble_loss(g, nll, dec.kl_elems, opt, out);
}

void VdvaeTrainable::write_meta(Checkpoint& ck) const { ck.model = m_.cfg; }

std::optional<RgbImage> VdvaeTrainable::preview(const Batch&, double temperature, uint64_t seed) const {
    return m_.generate(1, temperature, seed)[0];
}

GraphF::Var SrTrainable::build_loss(GraphF& g, const net::BoundParams<float>& p, const Batch& batch, Rng& rng,
                                    const LossOptions& opt, LossBreakdown* out) const {
    if (batch.lr.size() != batch.hr.size()) throw ContractError("SR batch needs paired LR images");
    auto x = g.leaf(pack_batch(batch.hr), false);
    auto y = g.leaf(pack_batch(batch.lr), false);
    auto acts = net::build_encoder(g, p, m_.cfg.base.enc_blocks, "enc", x);
    auto lr_acts = net::build_lr_encoder(g, p, m_.cfg, y);
    net::DecodeOptions<float> dopt;
    dopt.sample_mode = false;
    dopt.enc_acts = &acts;
    dopt.lr_acts = &lr_acts;
    dopt.condition_mode = m_.cfg.condition_mode;
    dopt.rng = &rng;
    auto dec = net::build_decoder(g, p, m_.cfg.base, static_cast<int>(batch.hr.size()), dopt);
    std::vector<const uint8_t*> imgs;
    for (const auto& im : batch.hr) imgs.push_back(im.pix.data());
    auto nll = dmol_nll(g, imgs, m_.cfg.base.image_size, m_.cfg.base.image_size, dec.obs_params,
                        m_.cfg.base.mixture_components);
    return assemble_loss(g, nll, dec.kl_elems, opt, out);
}

void SrTrainable::write_meta(Checkpoint& ck) const {
    ck.model = m_.cfg.base;
    ck.sr = {{m_.cfg.scale_factor, m_.cfg.condition_mode}};
}

std::optional<RgbImage> SrTrainable::preview(const Batch& batch, double temperature, uint64_t seed) const {
    if (batch.lr.empty()) return std::nullopt;
    return m_.super_resolve(batch.lr[0], temperature, seed);
}

// ---------------------------------------------------------------------------

std::set<std::string> apply_freeze_policy(const ParamMap<float>& params, FreezePolicy policy) {
    std::set<std::string> trainable;
    for (const auto& [name, t] : params) {
        if (policy == FreezePolicy::encoder_frozen && name.rfind("enc.", 0) == 0) continue;
        trainable.insert(name);
    }
    return trainable;
}

ImportManifest import_pretrained(const std::string& checkpoint_dir, SrModel& model) {
    Checkpoint ck = load_checkpoint(checkpoint_dir);
    if (ck.sr) throw ImportError("expected an unconditional checkpoint, got an SR checkpoint");
    if (!(ck.model == model.cfg.base))
        throw ImportError("pretrained model configuration does not match the SR base configuration");

    ImportManifest manifest;
    std::vector<std::string> offenders;
    std::set<std::string> consumed;
    for (auto& [name, tensor] : model.params) {
        bool fresh_side = name.rfind("lrenc.", 0) == 0 || name.rfind("cond.", 0) == 0;
        if (fresh_side) {
            manifest.fresh.push_back(name);
            continue;
        }
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) {
            offenders.push_back(name + " (missing from checkpoint)");
            continue;
        }
        if (it->second.shape != tensor.shape) {
            offenders.push_back(name + " (shape " + shape_str(it->second.shape) + " vs expected " +
                                shape_str(tensor.shape) + ")");
            continue;
        }
        tensor = it->second;
        consumed.insert(name);
        manifest.copied.push_back(name);
    }
    for (const auto& [name, tensor] : ck.tensors) {
        // optimizer moments and EMA shadows are training state, not weights
        if (name.rfind("opt.", 0) == 0 || name.rfind("ema.", 0) == 0) continue;
        if (!consumed.count(name)) offenders.push_back(name + " (unused pretrained tensor)");
    }
    if (!offenders.empty()) {
        std::string msg = "import failed for " + std::to_string(offenders.size()) + " tensor(s):";
        for (const auto& o : offenders) msg += "\n  " + o;
        throw ImportError(msg);
    }
    return manifest;
}

TrainState TrainState::init(const TrainableModel& model, const TrainConfig& cfg) {
    TrainState st;
    st.rng = Rng(cfg.seed);
    st.trainable = apply_freeze_policy(model.params(), cfg.freeze_policy);
    for (const auto& name : st.trainable) {
        const Tensor<float>& p = find_param(model.params(), name);
        st.adam_m.emplace(name, Tensor<float>(p.shape));
        st.adam_v.emplace(name, Tensor<float>(p.shape));
    }
    if (cfg.ema_decay > 0) st.ema = model.params();
    return st;
}

StepOutcome train_step(TrainState& st, TrainableModel& model, const Batch& batch, const TrainConfig& cfg) {
    StepOutcome out;
    GraphF g;
    auto p = net::bind_params<float>(g, model.params(), &st.trainable);

    LossOptions lopt;
    lopt.free_bits = cfg.free_bits;
    if (cfg.kl_warmup_steps > 0)
        lopt.kl_beta = std::min(1.0, static_cast<double>(st.step + 1) / cfg.kl_warmup_steps);

    GraphF::Var loss_var = -1;
    bool finite = true;
    try {
        loss_var = model.build_loss(g, p, batch, st.rng, lopt, &out.loss);
    } catch (const NumericError&) {
        // non-finite parameters surfaced inside the loss graph count as a
        // non-finite step, same as a NaN loss value
        out.loss.total = std::numeric_limits<double>::quiet_NaN();
        finite = false;
    }

    st.step += 1;
    finite = finite && std::isfinite(out.loss.total) && std::isfinite(out.loss.nll);
    double norm = 0;
    if (finite) {
        g.backward(loss_var);
        double sq = 0;
        for (const auto& name : st.trainable) {
            const auto& grad = g.grad(p(name));
            sq += kernels::active().sumsq(grad.data(), static_cast<int64_t>(grad.size()));
        }
        norm = std::sqrt(sq);
        out.grad_norm = norm;
        finite = std::isfinite(norm);
    }

    if (!finite) {
        out.nonfinite = true;
        st.nonfinite += 1;
        st.skipped += 1;
        st.consecutive_skips += 1;
    } else if (norm > cfg.grad_skip_threshold) {
        st.skipped += 1;
        st.consecutive_skips += 1;
    } else {
        double clip_scale = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;
        st.adam_t += 1;
        double lr = cfg.learning_rate;
        if (cfg.lr_warmup_steps > 0)
            lr *= std::min(1.0, static_cast<double>(st.adam_t) / cfg.lr_warmup_steps);
        double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.adam_t));
        double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.adam_t));
        for (const auto& name : st.trainable) {
            const auto& grad = g.grad(p(name));
            auto& m = find_param(st.adam_m, name).v;
            auto& v = find_param(st.adam_v, name).v;
            auto& w = find_param(model.params(), name).v;
            const float b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
            for (size_t i = 0; i < w.size(); ++i) {
                float gi = grad[i] * static_cast<float>(clip_scale);
                m[i] = b1 * m[i] + (1.0f - b1) * gi;
                v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
            }
        }
        if (cfg.ema_decay > 0) {
            for (auto& [name, shadow] : st.ema) {
                const auto& w = find_param(model.params(), name).v;
                const float d = static_cast<float>(cfg.ema_decay);
                for (size_t i = 0; i < w.size(); ++i)
                    shadow.v[i] = d * shadow.v[i] + (1.0f - d) * w[i];
            }
        }
        st.applied += 1;
        st.consecutive_skips = 0;
        out.applied = true;
    }

    if (finite) {
        st.loss_sum += out.loss.total;
        st.loss_count += 1;
    }
    if (st.consecutive_skips > 10)
        throw NumericError("aborting: " + std::to_string(st.consecutive_skips) +
                           " consecutive skipped steps, last at step " + std::to_string(st.step) +
                           " (grad_norm=" + std::to_string(norm) + ")");
    return out;
}

void save_train_checkpoint(const std::string& dir, const TrainableModel& model, const TrainState& st) {
    Checkpoint ck;
    model.write_meta(ck);
    ck.tensors = model.params();
    for (const auto& [name, t] : st.adam_m) ck.tensors.emplace("opt.m." + name, t);
    for (const auto& [name, t] : st.adam_v) ck.tensors.emplace("opt.v." + name, t);
    for (const auto& [name, t] : st.ema) ck.tensors.emplace("ema." + name, t);
    ck.state.set("step", std::to_string(st.step));
    ck.state.set("applied", std::to_string(st.applied));
    ck.state.set("skipped", std::to_string(st.skipped));
    ck.state.set("consecutive_skips", std::to_string(st.consecutive_skips));
    ck.state.set("nonfinite", std::to_string(st.nonfinite));
    ck.state.set("adam_t", std::to_string(st.adam_t));
    ck.state.set("rng_state", std::to_string(st.rng.state()));
    ck.state.set("rng_inc", std::to_string(st.rng.inc()));
    ck.state.set("loss_sum", hex_of_double(st.loss_sum));
    ck.state.set("loss_count", std::to_string(st.loss_count));
    save_checkpoint(dir, ck);
}

void load_train_checkpoint(const std::string& dir, TrainableModel& model, TrainState& st,
                           const TrainConfig& cfg) {
    Checkpoint ck = load_checkpoint(dir);
    if (!ck.has_state()) throw FormatError("checkpoint has no training state: " + dir);
    st = TrainState();
    st.trainable = apply_freeze_policy(model.params(), cfg.freeze_policy);
    for (auto& [name, tensor] : model.params()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ImportError("checkpoint missing tensor: " + name);
        if (it->second.shape != tensor.shape) throw ImportError("checkpoint shape mismatch for " + name);
        tensor = it->second;
    }
    for (const auto& name : st.trainable) {
        auto m = ck.tensors.find("opt.m." + name);
        auto v = ck.tensors.find("opt.v." + name);
        if (m == ck.tensors.end() || v == ck.tensors.end())
            throw ImportError("checkpoint missing optimizer moments for " + name);
        st.adam_m.emplace(name, m->second);
        st.adam_v.emplace(name, v->second);
    }
    if (cfg.ema_decay > 0) {
        for (const auto& [name, tensor] : model.params()) {
            auto e = ck.tensors.find("ema." + name);
            if (e == ck.tensors.end()) throw ImportError("checkpoint missing EMA shadow for " + name);
            st.ema.emplace(name, e->second);
        }
    }
    st.step = state_i64(ck.state, "step");
    st.applied = state_i64(ck.state, "applied");
    st.skipped = state_i64(ck.state, "skipped");
    st.consecutive_skips = state_i64(ck.state, "consecutive_skips");
    st.nonfinite = state_i64(ck.state, "nonfinite");
    st.adam_t = state_i64(ck.state, "adam_t");
    st.rng.restore(state_u64(ck.state, "rng_state"), state_u64(ck.state, "rng_inc"));
    const std::string* ls = ck.state.find("loss_sum");
    if (!ls) throw FormatError("checkpoint state missing loss_sum");
    st.loss_sum = double_of_hex(*ls);
    st.loss_count = state_i64(ck.state, "loss_count");
}

// ---------------------------------------------------------------------------

Dataset Dataset::load_dir(const std::string& dir, int min_size) {
    if (!fs::is_directory(dir)) throw ArgumentError("dataset directory not found: " + dir);
    Dataset ds;
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        RgbImage img = load_image(p);
        if (img.height < min_size || img.width < min_size)
            throw ArgumentError("dataset image smaller than " + std::to_string(min_size) + "px: " + p);
        ds.paths.push_back(p);
        ds.images.push_back(std::move(img));
    }
    if (ds.empty()) throw ArgumentError("no PNG images found in " + dir);
    return ds;
}

Batch sample_batch(const Dataset& ds, int batch_size, int hr_size, int scale, Rng& rng) {
    Batch b;
    for (int i = 0; i < batch_size; ++i) {
        const RgbImage& src = ds.images[rng.below(static_cast<uint32_t>(ds.images.size()))];
        int y0 = static_cast<int>(rng.below(static_cast<uint32_t>(src.height - hr_size + 1)));
        int x0 = static_cast<int>(rng.below(static_cast<uint32_t>(src.width - hr_size + 1)));
        RgbImage hr = crop(src, y0, x0, hr_size, hr_size);
        if (scale > 1) b.lr.push_back(bicubic_downscale(hr, scale));
        b.hr.push_back(std::move(hr));
    }
    return b;
}

TrainResult train(TrainableModel& model, const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& resume_from) {
    cfg.train.validate();
    Dataset ds = Dataset::load_dir(data_dir, model.hr_size());

    fs::create_directories(fs::path(run_dir) / "checkpoints");
    fs::create_directories(fs::path(run_dir) / "samples");
    save_run_config(cfg, (fs::path(run_dir) / "config.ini").string());

    TrainState st = TrainState::init(model, cfg.train);
    if (!resume_from.empty()) load_train_checkpoint(resume_from, model, st, cfg.train);

    auto open_log = [&](const char* name, const char* header) {
        fs::path p = fs::path(run_dir) / name;
        bool fresh = resume_from.empty() || !fs::exists(p) || fs::file_size(p) == 0;
        std::ofstream out(p.string(), fresh ? std::ios::trunc : std::ios::app);
        if (fresh) out << header << "\n";
        return out;
    };
    std::ofstream metrics = open_log("metrics.csv", "step,loss,nll,kl_total,grad_norm,skipped");
    std::ofstream val_log = open_log("val.csv", "step,val_loss,val_nll,val_kl_total");

    TrainResult result;
    result.first_loss = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> kept_checkpoints;

    while (st.step < cfg.train.max_steps) {
        Batch batch = sample_batch(ds, cfg.train.batch_size, model.hr_size(), model.scale(), st.rng);
        StepOutcome oc = train_step(st, model, batch, cfg.train);

        double kl_total = oc.loss.total - oc.loss.nll;
        metrics << st.step << "," << format_double(oc.loss.total) << "," << format_double(oc.loss.nll) << ","
                << format_double(kl_total) << "," << format_double(oc.grad_norm) << "," << (oc.applied ? 0 : 1)
                << "\n";
        if (std::isnan(result.first_loss) && std::isfinite(oc.loss.total)) result.first_loss = oc.loss.total;
        if (std::isfinite(oc.loss.total)) result.last_loss = oc.loss.total;

        if (cfg.train.val_interval > 0 && st.step % cfg.train.val_interval == 0) {
            Rng vr = Rng::derive(cfg.train.seed, 0x5A11D000ULL + static_cast<uint64_t>(st.step));
            int nval = static_cast<int>(std::min<size_t>(4, ds.images.size()));
            Batch vb;
            for (int i = 0; i < nval; ++i) {
                RgbImage hr = center_crop(ds.images[static_cast<size_t>(i)], model.hr_size(), model.hr_size());
                if (model.scale() > 1) vb.lr.push_back(bicubic_downscale(hr, model.scale()));
                vb.hr.push_back(std::move(hr));
            }
            GraphF g;
            auto p = net::bind_params<float>(g, model.params(), nullptr);
            LossBreakdown bd;
            LossOptions lopt;
            model.build_loss(g, p, vb, vr, lopt, &bd);
            val_log << st.step << "," << format_double(bd.total) << "," << format_double(bd.nll) << ","
                    << format_double(bd.total - bd.nll) << "\n";
            val_log.flush();
        }
        if (cfg.train.sample_interval > 0 && st.step % cfg.train.sample_interval == 0) {
            Rng pr = Rng::derive(cfg.train.seed, 0x5A3B1E00ULL + static_cast<uint64_t>(st.step));
            Batch pb = sample_batch(ds, 1, model.hr_size(), model.scale(), pr);
            auto img = model.preview(pb, cfg.eval.temperature, splitmix64(cfg.train.seed ^ st.step));
            if (img) {
                char name[64];
                std::snprintf(name, sizeof(name), "step_%06" PRId64 ".png", st.step);
                save_image(*img, (fs::path(run_dir) / "samples" / name).string());
            }
        }
        bool last = st.step >= cfg.train.max_steps;
        if (last || (cfg.train.checkpoint_interval > 0 && st.step % cfg.train.checkpoint_interval == 0)) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%06" PRId64, st.step);
            std::string ckdir = (fs::path(run_dir) / "checkpoints" / name).string();
            save_train_checkpoint(ckdir, model, st);
            kept_checkpoints.push_back(ckdir);
            while (kept_checkpoints.size() > 2) {  // rotation: keep the last two
                fs::remove_all(kept_checkpoints.front());
                kept_checkpoints.erase(kept_checkpoints.begin());
            }
            result.final_checkpoint = ckdir;
        }
    }
    metrics.flush();
    result.applied = st.applied;
    result.skipped = st.skipped;
    return result;
}

}  // namespace hvsr
