#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/eval.hpp"
#include "tae/nets.hpp"
#include "tae/train.hpp"
#include "tae/xform.hpp"

namespace tae {

// ---------------------------------------------------------------------------
// Run configuration: a flat, typed key-value file with [sections] named
// after the modules they configure. Unknown sections or keys are errors.
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string source = "synth";  // synth | cifar10 | idx
    std::string path;              // cifar10 batch / idx images
    std::string labels_path;       // idx labels
    std::string test_path;         // held-out images
    std::string test_labels_path;
    int synth_n = 5000;
    int synth_test_n = 1000;
    int synth_size = 32;
    int synth_classes = 3;

    void validate() const {
        if (source != "synth" && source != "cifar10" && source != "idx")
            throw ConfigError("data: unknown source '" + source + "'");
        if (source == "synth") {
            if (synth_n < 1 || synth_test_n < 0) throw ConfigError("data: synth sizes must be positive");
        } else if (path.empty()) {
            throw ConfigError("data: source '" + source + "' needs a path");
        }
    }
};

struct EvalConfig {
    std::vector<int> knn_k = {3, 5, 10, 15, 20};
    int n_samples = 5;
    ProbeHead probe_head = ProbeHead::Linear;
    int probe_hidden = 64;
    int probe_epochs = 40;
    int probe_batch = 64;
    double probe_lr = 0.1;
    double probe_momentum = 0.9;
    double probe_weight_decay = 1e-4;
    std::vector<int> per_class = {10, 50};
    int few_label_reps = 3;

    ProbeConfig probe() const {
        ProbeConfig p;
        p.head = probe_head;
        p.hidden = probe_hidden;
        p.epochs = probe_epochs;
        p.batch_size = probe_batch;
        p.lr = probe_lr;
        p.momentum = probe_momentum;
        p.weight_decay = probe_weight_decay;
        return p;
    }
};

struct RunConfig {
    DataConfig data;

    // [nets] knobs; input channels/size and head dimensions are derived
    // from the data and transformation sections when the model is built
    int width1 = 32;
    int width2 = 64;
    int decoder_hidden = 0;
    int classifier_hidden = 64;
    double logvar_lo = -10.0;
    double logvar_hi = 4.0;

    TrainConfig train;           // includes the [xform] specs
    int labeled_per_class = 0;   // 0 = every label stays visible (SAT split)
    bool standardize = false;    // per-channel standardization before training
    EvalConfig eval;

    NetConfig net_for(int in_channels, int image_size, int class_count) const {
        NetConfig n;
        n.in_channels = in_channels;
        n.image_size = image_size;
        n.width1 = width1;
        n.width2 = width2;
        n.decoder_hidden = decoder_hidden;
        n.classifier_hidden = classifier_hidden;
        n.classes = class_count;
        n.logvar_lo = logvar_lo;
        n.logvar_hi = logvar_hi;
        if (train.transform == TransformKind::Categorical) {
            n.categorical_decoder = true;
            n.categories = static_cast<int>(train.categorical.items.size());
        } else {
            n.categorical_decoder = false;
            n.target_dim = static_cast<int>(target_dim(train.transform));
        }
        return n;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

struct ConfigLine {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

inline std::vector<ConfigLine> tokenize_config(const std::string& text) {
    std::vector<ConfigLine> out;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("config line " + std::to_string(line) + ": unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty section name");
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line) + ": expected key = value, got '" + s + "'");
        if (section.empty()) throw ConfigError("config line " + std::to_string(line) + ": key before any [section]");
        ConfigLine cl;
        cl.section = section;
        cl.key = trim(s.substr(0, eq));
        cl.value = trim(s.substr(eq + 1));
        cl.line = line;
        if (cl.key.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty key");
        out.push_back(std::move(cl));
    }
    return out;
}

inline std::string where(const ConfigLine& cl) {
    return "[" + cl.section + "] " + cl.key + " (line " + std::to_string(cl.line) + ")";
}

inline double parse_double(const ConfigLine& cl) {
    try {
        size_t used = 0;
        const double v = std::stod(cl.value, &used);
        if (used != cl.value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where(cl) + ": '" + cl.value + "' is not a number");
    }
}

inline long long parse_int(const ConfigLine& cl) {
    try {
        size_t used = 0;
        const long long v = std::stoll(cl.value, &used);
        if (used != cl.value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where(cl) + ": '" + cl.value + "' is not an integer");
    }
}

inline bool parse_bool(const ConfigLine& cl) {
    if (cl.value == "true") return true;
    if (cl.value == "false") return false;
    throw ConfigError(where(cl) + ": expected true or false, got '" + cl.value + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

inline std::vector<int> parse_int_list(const ConfigLine& cl) {
    std::vector<int> out;
    for (const std::string& p : split_list(cl.value)) {
        ConfigLine item = cl;
        item.value = p;
        out.push_back(static_cast<int>(parse_int(item)));
    }
    return out;
}

inline Interval parse_interval(const ConfigLine& cl) {
    const std::vector<std::string> parts = split_list(cl.value);
    if (parts.size() != 2) throw ConfigError(where(cl) + ": expected 'lo,hi', got '" + cl.value + "'");
    ConfigLine lo = cl, hi = cl;
    lo.value = parts[0];
    hi.value = parts[1];
    return {parse_double(lo), parse_double(hi)};
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig rc;
    for (const detail::ConfigLine& cl : detail::tokenize_config(text)) {
        auto unknown = [&]() -> ConfigError {
            return ConfigError("unknown key '" + cl.key + "' in [" + cl.section + "] (line " + std::to_string(cl.line) + ")");
        };
        if (cl.section == "data") {
            if (cl.key == "source") rc.data.source = cl.value;
            else if (cl.key == "path") rc.data.path = cl.value;
            else if (cl.key == "labels_path") rc.data.labels_path = cl.value;
            else if (cl.key == "test_path") rc.data.test_path = cl.value;
            else if (cl.key == "test_labels_path") rc.data.test_labels_path = cl.value;
            else if (cl.key == "synth_n") rc.data.synth_n = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "synth_test_n") rc.data.synth_test_n = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "synth_size") rc.data.synth_size = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "synth_classes") rc.data.synth_classes = static_cast<int>(detail::parse_int(cl));
            else throw unknown();
        } else if (cl.section == "nets") {
            if (cl.key == "width1") rc.width1 = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "width2") rc.width2 = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "decoder_hidden") rc.decoder_hidden = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "classifier_hidden") rc.classifier_hidden = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "logvar_lo") rc.logvar_lo = detail::parse_double(cl);
            else if (cl.key == "logvar_hi") rc.logvar_hi = detail::parse_double(cl);
            else throw unknown();
        } else if (cl.section == "xform") {
            if (cl.key == "kind") {
                if (cl.value == "affine") rc.train.transform = TransformKind::Affine;
                else if (cl.value == "projective") rc.train.transform = TransformKind::Projective;
                else if (cl.value == "categorical") rc.train.transform = TransformKind::Categorical;
                else throw ConfigError(detail::where(cl) + ": unknown kind '" + cl.value + "'");
            } else if (cl.key == "rot") rc.train.affine.rot_range = detail::parse_interval(cl);
            else if (cl.key == "trans") rc.train.affine.trans_range = detail::parse_interval(cl);
            else if (cl.key == "scale") rc.train.affine.scale_range = detail::parse_interval(cl);
            else if (cl.key == "shear") rc.train.affine.shear_range = detail::parse_interval(cl);
            else if (cl.key == "corner") rc.train.projective.corner_range = detail::parse_interval(cl);
            else if (cl.key == "pre_scale") rc.train.projective.pre_scale_range = detail::parse_interval(cl);
            else if (cl.key == "pre_rot") rc.train.projective.pre_rot_set = detail::parse_int_list(cl);
            else if (cl.key == "categorical_angles") {
                CategoricalSpec spec;
                for (int deg : detail::parse_int_list(cl)) spec.items.push_back(Homography::rotation_deg(deg));
                rc.train.categorical = spec;
            } else throw unknown();
        } else if (cl.section == "train") {
            if (cl.key == "mode") rc.train.mode = mode_from_string(cl.value);
            else if (cl.key == "batch_size") rc.train.batch_size = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "labeled_per_batch") rc.train.labeled_per_batch = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "epochs") rc.train.epochs = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "steps_per_epoch") rc.train.steps_per_epoch = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "lr_base") rc.train.lr.base = detail::parse_double(cl);
            else if (cl.key == "lr_bump_epoch") rc.train.lr.bump_epoch = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "lr_bump_value") rc.train.lr.bump_value = detail::parse_double(cl);
            else if (cl.key == "lr_step_epochs") rc.train.lr.step_epochs = detail::parse_int_list(cl);
            else if (cl.key == "lr_step_factor") rc.train.lr.step_factor = detail::parse_double(cl);
            else if (cl.key == "lr_decay_start") rc.train.lr.decay_start = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "lr_decay_end") rc.train.lr.decay_end = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "lr_final") rc.train.lr.final_value = detail::parse_double(cl);
            else if (cl.key == "momentum") rc.train.momentum = detail::parse_double(cl);
            else if (cl.key == "weight_decay") rc.train.weight_decay = detail::parse_double(cl);
            else if (cl.key == "lambda") rc.train.lambda = detail::parse_double(cl);
            else if (cl.key == "entmin_weight") rc.train.entmin_weight = detail::parse_double(cl);
            else if (cl.key == "supervised_only") rc.train.supervised_only = detail::parse_bool(cl);
            else if (cl.key == "hflip") rc.train.hflip = detail::parse_bool(cl);
            else if (cl.key == "rand_translate") rc.train.rand_translate = detail::parse_double(cl);
            else if (cl.key == "labeled_per_class") rc.labeled_per_class = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "standardize") rc.standardize = detail::parse_bool(cl);
            else if (cl.key == "seed") rc.train.seed = static_cast<std::uint64_t>(detail::parse_int(cl));
            else if (cl.key == "checkpoint_interval") rc.train.checkpoint_interval = static_cast<int>(detail::parse_int(cl));
            else throw unknown();
        } else if (cl.section == "eval") {
            if (cl.key == "knn_k") rc.eval.knn_k = detail::parse_int_list(cl);
            else if (cl.key == "n_samples") rc.eval.n_samples = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "probe_head") rc.eval.probe_head = probe_head_from_string(cl.value);
            else if (cl.key == "probe_hidden") rc.eval.probe_hidden = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "probe_epochs") rc.eval.probe_epochs = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "probe_batch") rc.eval.probe_batch = static_cast<int>(detail::parse_int(cl));
            else if (cl.key == "probe_lr") rc.eval.probe_lr = detail::parse_double(cl);
            else if (cl.key == "probe_momentum") rc.eval.probe_momentum = detail::parse_double(cl);
            else if (cl.key == "probe_weight_decay") rc.eval.probe_weight_decay = detail::parse_double(cl);
            else if (cl.key == "per_class") rc.eval.per_class = detail::parse_int_list(cl);
            else if (cl.key == "few_label_reps") rc.eval.few_label_reps = static_cast<int>(detail::parse_int(cl));
            else throw unknown();
        } else {
            throw ConfigError("unknown section [" + cl.section + "] (line " + std::to_string(cl.line) + ")");
        }
    }
    rc.data.validate();
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str());
}

// Paper-scale preset: the published training recipe, far beyond desk scale.
// Overrides the [train] schedule/batch knobs for the configured mode.
inline void apply_paper_scale(RunConfig& rc) {
    TrainConfig& t = rc.train;
    t.batch_size = 512;
    t.momentum = 0.9;
    t.weight_decay = 5e-4;
    rc.width1 = 32;
    rc.width2 = 64;
    if (t.mode == Mode::AET) {
        t.epochs = 1500;
        t.lr = LrSchedule{};
        t.lr.base = 0.1;
        t.lr.step_epochs = {240, 480, 640, 800, 1000};
        t.lr.step_factor = 5.0;
    } else {
        t.epochs = 4500;
        t.lr = LrSchedule{};
        t.lr.base = 1e-3;
        t.lr.bump_epoch = 50;
        t.lr.bump_value = 5e-3;
        t.lr.decay_start = 3000;
        t.lr.decay_end = 4500;
        t.lr.final_value = 1e-5;
        if (t.mode == Mode::SAT) {
            t.batch_size = 500;
            t.labeled_per_batch = 40;
        }
    }
}

// Canonical dump of the effective configuration: fixed key order, %.17g
// numbers. The manifest snapshots this text and hashes it.
inline std::string dump_config(const RunConfig& rc) {
    std::ostringstream os;
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    auto ints = [](const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    os << "[data]\n";
    os << "source = " << rc.data.source << "\n";
    if (!rc.data.path.empty()) os << "path = " << rc.data.path << "\n";
    if (!rc.data.labels_path.empty()) os << "labels_path = " << rc.data.labels_path << "\n";
    if (!rc.data.test_path.empty()) os << "test_path = " << rc.data.test_path << "\n";
    if (!rc.data.test_labels_path.empty()) os << "test_labels_path = " << rc.data.test_labels_path << "\n";
    os << "synth_n = " << rc.data.synth_n << "\n";
    os << "synth_test_n = " << rc.data.synth_test_n << "\n";
    os << "synth_size = " << rc.data.synth_size << "\n";
    os << "synth_classes = " << rc.data.synth_classes << "\n";

    os << "\n[nets]\n";
    os << "width1 = " << rc.width1 << "\n";
    os << "width2 = " << rc.width2 << "\n";
    os << "decoder_hidden = " << rc.decoder_hidden << "\n";
    os << "classifier_hidden = " << rc.classifier_hidden << "\n";
    os << "logvar_lo = " << num(rc.logvar_lo) << "\n";
    os << "logvar_hi = " << num(rc.logvar_hi) << "\n";

    os << "\n[xform]\n";
    os << "kind = " << kind_name(rc.train.transform) << "\n";
    const AffineSpec& a = rc.train.affine;
    os << "rot = " << num(a.rot_range.lo) << "," << num(a.rot_range.hi) << "\n";
    os << "trans = " << num(a.trans_range.lo) << "," << num(a.trans_range.hi) << "\n";
    os << "scale = " << num(a.scale_range.lo) << "," << num(a.scale_range.hi) << "\n";
    os << "shear = " << num(a.shear_range.lo) << "," << num(a.shear_range.hi) << "\n";
    const ProjectiveSpec& pj = rc.train.projective;
    os << "corner = " << num(pj.corner_range.lo) << "," << num(pj.corner_range.hi) << "\n";
    os << "pre_scale = " << num(pj.pre_scale_range.lo) << "," << num(pj.pre_scale_range.hi) << "\n";
    os << "pre_rot = " << ints(pj.pre_rot_set) << "\n";

    os << "\n[train]\n";
    os << "mode = " << mode_name(rc.train.mode) << "\n";
    os << "batch_size = " << rc.train.batch_size << "\n";
    os << "labeled_per_batch = " << rc.train.labeled_per_batch << "\n";
    os << "labeled_per_class = " << rc.labeled_per_class << "\n";
    os << "epochs = " << rc.train.epochs << "\n";
    os << "steps_per_epoch = " << rc.train.steps_per_epoch << "\n";
    os << "lr_base = " << num(rc.train.lr.base) << "\n";
    os << "lr_bump_epoch = " << rc.train.lr.bump_epoch << "\n";
    os << "lr_bump_value = " << num(rc.train.lr.bump_value) << "\n";
    os << "lr_step_epochs = " << ints(rc.train.lr.step_epochs) << "\n";
    os << "lr_step_factor = " << num(rc.train.lr.step_factor) << "\n";
    os << "lr_decay_start = " << rc.train.lr.decay_start << "\n";
    os << "lr_decay_end = " << rc.train.lr.decay_end << "\n";
    os << "lr_final = " << num(rc.train.lr.final_value) << "\n";
    os << "momentum = " << num(rc.train.momentum) << "\n";
    os << "weight_decay = " << num(rc.train.weight_decay) << "\n";
    os << "lambda = " << num(rc.train.lambda) << "\n";
    os << "entmin_weight = " << num(rc.train.entmin_weight) << "\n";
    os << "supervised_only = " << (rc.train.supervised_only ? "true" : "false") << "\n";
    os << "hflip = " << (rc.train.hflip ? "true" : "false") << "\n";
    os << "rand_translate = " << num(rc.train.rand_translate) << "\n";
    os << "standardize = " << (rc.standardize ? "true" : "false") << "\n";
    os << "seed = " << rc.train.seed << "\n";
    os << "checkpoint_interval = " << rc.train.checkpoint_interval << "\n";

    os << "\n[eval]\n";
    os << "knn_k = " << ints(rc.eval.knn_k) << "\n";
    os << "n_samples = " << rc.eval.n_samples << "\n";
    os << "probe_head = " << (rc.eval.probe_head == ProbeHead::Linear ? "linear" : "nonlinear") << "\n";
    os << "probe_hidden = " << rc.eval.probe_hidden << "\n";
    os << "probe_epochs = " << rc.eval.probe_epochs << "\n";
    os << "probe_batch = " << rc.eval.probe_batch << "\n";
    os << "probe_lr = " << num(rc.eval.probe_lr) << "\n";
    os << "probe_momentum = " << num(rc.eval.probe_momentum) << "\n";
    os << "probe_weight_decay = " << num(rc.eval.probe_weight_decay) << "\n";
    os << "per_class = " << ints(rc.eval.per_class) << "\n";
    os << "few_label_reps = " << rc.eval.few_label_reps << "\n";
    return os.str();
}

inline std::uint64_t config_hash(const RunConfig& rc) { return fnv1a(dump_config(rc)); }

}  // namespace tae
