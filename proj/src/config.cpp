#include "hvsr/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hvsr/error.hpp"

namespace hvsr {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& s, const char* what) {
    try {
        size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw FormatError(std::string("invalid integer for ") + what + ": '" + s + "'");
    }
}

uint64_t parse_u64(const std::string& s, const char* what) {
    try {
        size_t pos = 0;
        unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("invalid unsigned integer for ") + what + ": '" + s + "'");
    }
}

}  // namespace

const std::string* IniSection::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

void IniSection::set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries)
        if (k == key) {
            v = std::move(value);
            return;
        }
    entries.emplace_back(key, std::move(value));
}

IniSection* IniDoc::find(const std::string& name) {
    for (auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

const IniSection* IniDoc::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

IniSection& IniDoc::get_or_add(const std::string& name) {
    if (auto* s = find(name)) return *s;
    sections.push_back(IniSection{name, {}});
    return sections.back();
}

IniDoc ini_parse(const std::string& text) {
    IniDoc doc;
    IniSection* current = nullptr;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw FormatError("malformed section header at line " + std::to_string(lineno));
            doc.sections.push_back(IniSection{trim(t.substr(1, t.size() - 2)), {}});
            current = &doc.sections.back();
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("expected key = value at line " + std::to_string(lineno));
        if (!current) throw FormatError("key outside of a section at line " + std::to_string(lineno));
        current->entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return doc;
}

std::string ini_serialize(const IniDoc& doc) {
    std::string out;
    for (size_t i = 0; i < doc.sections.size(); ++i) {
        if (i) out += "\n";
        out += "[" + doc.sections[i].name + "]\n";
        for (const auto& [k, v] : doc.sections[i].entries) out += k + " = " + v + "\n";
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("invalid number: '" + s + "'");
    }
}

std::string res_counts_to_string(const ResCounts& rc) {
    std::string out;
    for (size_t i = 0; i < rc.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(rc[i].first) + "x" + std::to_string(rc[i].second);
    }
    return out;
}

ResCounts res_counts_from_string(const std::string& s) {
    ResCounts rc;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        size_t x = item.find('x');
        if (x == std::string::npos) throw FormatError("expected RESxCOUNT, got '" + item + "'");
        rc.emplace_back(parse_int(item.substr(0, x), "resolution"), parse_int(item.substr(x + 1), "count"));
    }
    if (rc.empty()) throw FormatError("empty resolution list");
    return rc;
}

std::vector<int> ModelConfig::layer_resolutions() const {
    std::vector<int> out;
    for (const auto& [res, count] : dec_layers)
        for (int i = 0; i < count; ++i) out.push_back(res);
    return out;
}

void ModelConfig::validate() const {
    if (image_size < 4) throw ArgumentError("image_size must be >= 4");
    if (width < 4) throw ArgumentError("width must be >= 4");
    if (z_channels < 1) throw ArgumentError("z_channels must be >= 1");
    if (mixture_components < 1) throw ArgumentError("mixture_components must be >= 1");
    if (enc_blocks.empty() || dec_layers.empty()) throw ArgumentError("encoder/decoder structure is empty");
    if (enc_blocks.front().first != image_size)
        throw ArgumentError("first encoder resolution must equal image_size");
    for (size_t i = 1; i < enc_blocks.size(); ++i) {
        if (enc_blocks[i].first >= enc_blocks[i - 1].first)
            throw ArgumentError("encoder resolutions must be strictly decreasing");
        if (enc_blocks[i - 1].first % enc_blocks[i].first != 0)
            throw ArgumentError("adjacent encoder resolutions must divide");
    }
    for (const auto& [res, count] : enc_blocks) {
        if (count < 1) throw ArgumentError("encoder block count must be >= 1");
        if (image_size % res != 0) throw ArgumentError("encoder resolution must divide image_size");
    }
    auto layers = layer_resolutions();
    if (layers.size() < 2) throw ArgumentError("need at least two stochastic layers (K >= 1)");
    for (size_t i = 1; i < layers.size(); ++i) {
        if (layers[i] < layers[i - 1]) throw ArgumentError("decoder resolutions must be non-decreasing");
        if (layers[i] % layers[i - 1] != 0 && layers[i] != layers[i - 1])
            throw ArgumentError("adjacent decoder resolutions must divide");
    }
    if (dec_layers.back().first != image_size)
        throw ArgumentError("final decoder resolution must equal image_size");
    std::set<int> enc_res;
    for (const auto& [res, count] : enc_blocks) enc_res.insert(res);
    for (int r : layers)
        if (!enc_res.count(r))
            throw ArgumentError("decoder layer resolution " + std::to_string(r) + " has no encoder activation");
}

std::string condition_mode_to_string(ConditionMode m) {
    return m == ConditionMode::prior_and_posterior ? "prior_and_posterior" : "posterior_only";
}

ConditionMode condition_mode_from_string(const std::string& s) {
    if (s == "prior_and_posterior") return ConditionMode::prior_and_posterior;
    if (s == "posterior_only") return ConditionMode::posterior_only;
    throw FormatError("unknown condition_mode: '" + s + "'");
}

int SrModelConfig::cond_depth() const {
    auto layers = base.layer_resolutions();
    int k = -1;
    for (size_t j = 0; j < layers.size(); ++j)
        if (layers[j] <= lr_size()) k = static_cast<int>(j);
    return k;
}

void SrModelConfig::validate() const {
    base.validate();
    if (scale_factor < 2) throw ArgumentError("scale_factor must be >= 2");
    if (base.image_size % scale_factor != 0) throw ArgumentError("scale_factor must divide image_size");
    int kp = cond_depth();
    if (kp < 0) throw ArgumentError("no decoder layer fits the LR resolution; nothing to condition");
    if (kp >= base.stochastic_depth())
        throw ArgumentError("conditioned depth K' must be strictly less than K");
    auto layers = base.layer_resolutions();
    for (int j = 0; j <= kp; ++j)
        if (lr_size() % layers[static_cast<size_t>(j)] != 0)
            throw ArgumentError("conditioned layer resolution must divide the LR size");
}

std::string freeze_policy_to_string(FreezePolicy p) {
    return p == FreezePolicy::none ? "none" : "encoder_frozen";
}

FreezePolicy freeze_policy_from_string(const std::string& s) {
    if (s == "none") return FreezePolicy::none;
    if (s == "encoder_frozen") return FreezePolicy::encoder_frozen;
    throw FormatError("unknown freeze_policy: '" + s + "'");
}

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw ArgumentError("learning_rate must be > 0");
    if (max_steps < 1) throw ArgumentError("max_steps must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (grad_clip_norm <= 0 || grad_skip_threshold <= 0) throw ArgumentError("gradient thresholds must be > 0");
    if (ema_decay < 0 || ema_decay >= 1) throw ArgumentError("ema_decay must be in [0, 1)");
}

// ---------------------------------------------------------------------------

void model_config_to_ini(const ModelConfig& cfg, IniDoc& doc) {
    IniSection& s = doc.get_or_add("model");
    s.set("image_size", std::to_string(cfg.image_size));
    s.set("width", std::to_string(cfg.width));
    s.set("z_channels", std::to_string(cfg.z_channels));
    s.set("mixture_components", std::to_string(cfg.mixture_components));
    s.set("enc_blocks", res_counts_to_string(cfg.enc_blocks));
    s.set("dec_layers", res_counts_to_string(cfg.dec_layers));
}

namespace {

template <typename Fn>
void for_each_known_key(const IniSection& s, const std::set<std::string>& known, Fn&& fn) {
    for (const auto& [k, v] : s.entries) {
        if (!known.count(k)) throw FormatError("unknown key '" + k + "' in section [" + s.name + "]");
        fn(k, v);
    }
}

}  // namespace

ModelConfig model_config_from_ini(const IniDoc& doc) {
    const IniSection* s = doc.find("model");
    if (!s) throw FormatError("missing [model] section");
    ModelConfig cfg;
    static const std::set<std::string> known = {"image_size", "width",      "z_channels",
                                                "mixture_components", "enc_blocks", "dec_layers"};
    for_each_known_key(*s, known, [&](const std::string& k, const std::string& v) {
        if (k == "image_size") cfg.image_size = parse_int(v, k.c_str());
        else if (k == "width") cfg.width = parse_int(v, k.c_str());
        else if (k == "z_channels") cfg.z_channels = parse_int(v, k.c_str());
        else if (k == "mixture_components") cfg.mixture_components = parse_int(v, k.c_str());
        else if (k == "enc_blocks") cfg.enc_blocks = res_counts_from_string(v);
        else if (k == "dec_layers") cfg.dec_layers = res_counts_from_string(v);
    });
    return cfg;
}

void sr_fields_to_ini(int scale_factor, ConditionMode mode, IniDoc& doc) {
    IniSection& s = doc.get_or_add("sr");
    s.set("scale_factor", std::to_string(scale_factor));
    s.set("condition_mode", condition_mode_to_string(mode));
}

std::optional<std::pair<int, ConditionMode>> sr_fields_from_ini(const IniDoc& doc) {
    const IniSection* s = doc.find("sr");
    if (!s) return std::nullopt;
    int scale = 4;
    ConditionMode mode = ConditionMode::prior_and_posterior;
    static const std::set<std::string> known = {"scale_factor", "condition_mode"};
    for_each_known_key(*s, known, [&](const std::string& k, const std::string& v) {
        if (k == "scale_factor") scale = parse_int(v, k.c_str());
        else mode = condition_mode_from_string(v);
    });
    return std::make_pair(scale, mode);
}

IniDoc run_config_to_ini(const RunConfig& cfg) {
    IniDoc doc;
    model_config_to_ini(cfg.model, doc);
    sr_fields_to_ini(cfg.scale_factor, cfg.condition_mode, doc);

    IniSection& t = doc.get_or_add("train");
    t.set("learning_rate", format_double(cfg.train.learning_rate));
    t.set("batch_size", std::to_string(cfg.train.batch_size));
    t.set("max_steps", std::to_string(cfg.train.max_steps));
    t.set("adam_beta1", format_double(cfg.train.adam_beta1));
    t.set("adam_beta2", format_double(cfg.train.adam_beta2));
    t.set("adam_eps", format_double(cfg.train.adam_eps));
    t.set("grad_clip_norm", format_double(cfg.train.grad_clip_norm));
    t.set("grad_skip_threshold", format_double(cfg.train.grad_skip_threshold));
    t.set("freeze_policy", freeze_policy_to_string(cfg.train.freeze_policy));
    t.set("ema_decay", format_double(cfg.train.ema_decay));
    t.set("seed", std::to_string(cfg.train.seed));
    t.set("lr_warmup_steps", std::to_string(cfg.train.lr_warmup_steps));
    t.set("kl_warmup_steps", std::to_string(cfg.train.kl_warmup_steps));
    t.set("free_bits", format_double(cfg.train.free_bits));
    t.set("val_interval", std::to_string(cfg.train.val_interval));
    t.set("sample_interval", std::to_string(cfg.train.sample_interval));
    t.set("checkpoint_interval", std::to_string(cfg.train.checkpoint_interval));

    IniSection& e = doc.get_or_add("eval");
    e.set("shave", std::to_string(cfg.eval.shave));
    e.set("temperature", format_double(cfg.eval.temperature));
    e.set("patch_size", std::to_string(cfg.eval.patch_size));
    e.set("overlap", std::to_string(cfg.eval.overlap));
    e.set("seed", std::to_string(cfg.eval.seed));
    return doc;
}

RunConfig run_config_from_ini(const IniDoc& doc) {
    RunConfig cfg;
    for (const auto& s : doc.sections)
        if (s.name != "model" && s.name != "sr" && s.name != "train" && s.name != "eval")
            throw FormatError("unknown section [" + s.name + "]");
    cfg.model = model_config_from_ini(doc);
    if (auto sr = sr_fields_from_ini(doc)) {
        cfg.scale_factor = sr->first;
        cfg.condition_mode = sr->second;
    }
    if (const IniSection* t = doc.find("train")) {
        static const std::set<std::string> known = {
            "learning_rate",  "batch_size",     "max_steps",       "adam_beta1",      "adam_beta2",
            "adam_eps",       "grad_clip_norm", "grad_skip_threshold", "freeze_policy", "ema_decay",
            "seed",           "lr_warmup_steps", "kl_warmup_steps", "free_bits",      "val_interval",
            "sample_interval", "checkpoint_interval"};
        for_each_known_key(*t, known, [&](const std::string& k, const std::string& v) {
            auto& tc = cfg.train;
            if (k == "learning_rate") tc.learning_rate = parse_double(v);
            else if (k == "batch_size") tc.batch_size = parse_int(v, k.c_str());
            else if (k == "max_steps") tc.max_steps = parse_int(v, k.c_str());
            else if (k == "adam_beta1") tc.adam_beta1 = parse_double(v);
            else if (k == "adam_beta2") tc.adam_beta2 = parse_double(v);
            else if (k == "adam_eps") tc.adam_eps = parse_double(v);
            else if (k == "grad_clip_norm") tc.grad_clip_norm = parse_double(v);
            else if (k == "grad_skip_threshold") tc.grad_skip_threshold = parse_double(v);
            else if (k == "freeze_policy") tc.freeze_policy = freeze_policy_from_string(v);
            else if (k == "ema_decay") tc.ema_decay = parse_double(v);
            else if (k == "seed") tc.seed = parse_u64(v, k.c_str());
            else if (k == "lr_warmup_steps") tc.lr_warmup_steps = parse_int(v, k.c_str());
            else if (k == "kl_warmup_steps") tc.kl_warmup_steps = parse_int(v, k.c_str());
            else if (k == "free_bits") tc.free_bits = parse_double(v);
            else if (k == "val_interval") tc.val_interval = parse_int(v, k.c_str());
            else if (k == "sample_interval") tc.sample_interval = parse_int(v, k.c_str());
            else if (k == "checkpoint_interval") tc.checkpoint_interval = parse_int(v, k.c_str());
        });
    }
    if (const IniSection* e = doc.find("eval")) {
        static const std::set<std::string> known = {"shave", "temperature", "patch_size", "overlap", "seed"};
        for_each_known_key(*e, known, [&](const std::string& k, const std::string& v) {
            auto& ec = cfg.eval;
            if (k == "shave") ec.shave = parse_int(v, k.c_str());
            else if (k == "temperature") ec.temperature = parse_double(v);
            else if (k == "patch_size") ec.patch_size = parse_int(v, k.c_str());
            else if (k == "overlap") ec.overlap = parse_int(v, k.c_str());
            else if (k == "seed") ec.seed = parse_u64(v, k.c_str());
        });
    }
    return cfg;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write file: " + path);
    out << text;
    if (!out) throw FormatError("write failed: " + path);
}

RunConfig load_run_config(const std::string& path) { return run_config_from_ini(ini_parse(read_text_file(path))); }

void save_run_config(const RunConfig& cfg, const std::string& path) {
    write_text_file(path, ini_serialize(run_config_to_ini(cfg)));
}

}  // namespace hvsr
