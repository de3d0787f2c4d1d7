#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/diffcore.hpp"
#include "tae/rng.hpp"
#include "tae/tensor.hpp"
#include "tae/warp.hpp"

namespace tae {

enum class Mode { AET, AVT, SAT };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::AET: return "aet";
        case Mode::AVT: return "avt";
        case Mode::SAT: return "sat";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "aet") return Mode::AET;
    if (s == "avt") return Mode::AVT;
    if (s == "sat") return Mode::SAT;
    throw ConfigError("unknown mode '" + s + "' (expected aet, avt or sat)");
}

// Network dimensions. The trunk is two blocks of two 3x3 conv layers each,
// with 2x2 average pooling after each block; the representation is the
// globally averaged trunk output, so rep_dim() == width2.
struct NetConfig {
    int in_channels = 3;
    int image_size = 32;
    int width1 = 32;
    int width2 = 64;
    int target_dim = 6;             // Gaussian decoder output size
    bool categorical_decoder = false;
    int categories = 4;             // categorical decoder classes
    int decoder_hidden = 0;         // 0 = linear decoder head
    int classifier_hidden = 64;
    int classes = 10;               // label classes for the classifier head
    double logvar_lo = -10.0;
    double logvar_hi = 4.0;

    int rep_dim() const { return width2; }

    void validate() const {
        if (in_channels < 1 || image_size < 4 || width1 < 1 || width2 < 1)
            throw ConfigError("nets: channels/size/widths must be positive");
        if (image_size % 4 != 0) throw ConfigError("nets: image_size must be divisible by 4 (two 2x2 pools)");
        if (categorical_decoder ? categories < 2 : target_dim < 1)
            throw ConfigError("nets: decoder output dimension must be positive");
        if (decoder_hidden < 0 || classifier_hidden < 1 || classes < 2)
            throw ConfigError("nets: head widths/classes out of range");
        if (!(logvar_lo < logvar_hi)) throw ConfigError("nets: logvar clamp interval is empty");
    }
};

// All learnable tensors, keyed by name. Both Siamese branches read the same
// map, which is what makes them weight-shared.
using ParamMap = std::map<std::string, Tensor>;

struct ModelState {
    NetConfig config;
    Mode mode = Mode::AVT;
    ParamMap params;
};

inline ParamMap init_params(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamMap p;
    // fan-in scaled uniform for weights, zero biases except the encoder
    // log-variance bias, which starts at -4 so training begins
    // near-deterministic
    auto conv = [&](const std::string& name, int cout, int cin, int k) {
        const double s = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
        p[name + ".w"] = Tensor::uniform({cout, cin, k, k}, rng, -s, s);
        p[name + ".b"] = Tensor::zeros({cout});
    };
    auto dense = [&](const std::string& name, int din, int dout) {
        const double s = 1.0 / std::sqrt(static_cast<double>(din));
        p[name + ".w"] = Tensor::uniform({din, dout}, rng, -s, s);
        p[name + ".b"] = Tensor::zeros({dout});
    };

    conv("enc.b1c1", cfg.width1, cfg.in_channels, 3);
    conv("enc.b1c2", cfg.width1, cfg.width1, 3);
    conv("enc.b2c1", cfg.width2, cfg.width1, 3);
    conv("enc.b2c2", cfg.width2, cfg.width2, 3);
    conv("enc.logvar", cfg.width2, cfg.width2, 1);
    p["enc.logvar.b"] = Tensor::full({cfg.width2}, -4.0);

    int din = 2 * cfg.rep_dim();
    if (cfg.decoder_hidden > 0) {
        dense("dec.hidden", din, cfg.decoder_hidden);
        din = cfg.decoder_hidden;
    }
    if (cfg.categorical_decoder) {
        dense("dec.logits", din, cfg.categories);
    } else {
        dense("dec.mean", din, cfg.target_dim);
        dense("dec.logvar", din, cfg.target_dim);
    }

    dense("cls.hidden", cfg.rep_dim(), cfg.classifier_hidden);
    dense("cls.out", cfg.classifier_hidden, cfg.classes);
    return p;
}

// Parameters a given mode actually optimizes. AET is deterministic: the
// encoder and decoder log-variance heads stay untouched (updating them would
// only let weight decay erode unused tensors). The classifier belongs to SAT
// alone.
inline std::vector<std::string> trainable_param_names(const NetConfig& cfg, Mode mode) {
    std::vector<std::string> names = {"enc.b1c1", "enc.b1c2", "enc.b2c1", "enc.b2c2"};
    if (mode != Mode::AET) names.push_back("enc.logvar");
    if (cfg.decoder_hidden > 0) names.push_back("dec.hidden");
    if (cfg.categorical_decoder) {
        names.push_back("dec.logits");
    } else {
        names.push_back("dec.mean");
        if (mode != Mode::AET) names.push_back("dec.logvar");
    }
    if (mode == Mode::SAT) {
        names.push_back("cls.hidden");
        names.push_back("cls.out");
    }
    std::vector<std::string> out;
    for (const std::string& n : names) {
        out.push_back(n + ".w");
        out.push_back(n + ".b");
    }
    return out;
}

// Parameter tensors bound onto a tape for one forward/backward pass.
struct BoundParams {
    std::map<std::string, Value> values;

    Value at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw ContractError("unbound parameter '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return values.count(name) != 0; }
};

// trainable=false binds everything as constants (evaluation); otherwise the
// mode decides which tensors carry gradients.
inline BoundParams bind_params(Tape& tape, const ModelState& state, bool trainable) {
    std::vector<std::string> grad_names;
    if (trainable) grad_names = trainable_param_names(state.config, state.mode);
    auto wants_grad = [&](const std::string& n) {
        for (const std::string& g : grad_names)
            if (g == n) return true;
        return false;
    };
    BoundParams bp;
    for (const auto& [name, tensor] : state.params) bp.values[name] = tape.input(tensor, wants_grad(name));
    return bp;
}

inline Value dense_layer(Tape& tape, const BoundParams& p, const std::string& name, Value x) {
    Value y = tape.matmul(x, p.at(name + ".w"));
    return tape.add(y, tape.broadcast(p.at(name + ".b"), tape.val(y).shape));
}

// One Siamese branch: mean, log-variance and the reparameterized sample
// z = mean + exp(logvar/2) ∘ eps. Batched over [n, rep_dim].
struct ProbRepBatch {
    Value mean;
    Value logvar;
    Value sample;
    Tensor eps;  // the exact noise used, so the sample is reconstructible
};

// eps may be supplied (tests, eps=0 tricks) or drawn from rng. The same
// BoundParams serves both branches — call encode twice for x and t(x).
inline ProbRepBatch encode(Tape& tape, const BoundParams& p, const NetConfig& cfg, const ImageTensor& imgs,
                           const Tensor* eps_in = nullptr, Rng* rng = nullptr) {
    if (imgs.channels() != cfg.in_channels || imgs.height() != cfg.image_size || imgs.width() != cfg.image_size)
        throw ShapeError("encode: image batch " + shape_str(imgs.data.shape) + " does not match configured input [N," +
                         std::to_string(cfg.in_channels) + "," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "]");
    const int n = imgs.count();

    Value x = tape.input(imgs.data, false);
    auto block = [&](Value h, const std::string& c1, const std::string& c2) {
        h = tape.relu(tape.conv2d(h, p.at(c1 + ".w"), p.at(c1 + ".b"), 1, 1));
        h = tape.relu(tape.conv2d(h, p.at(c2 + ".w"), p.at(c2 + ".b"), 1, 1));
        return tape.avgpool2d(h, 2);
    };
    Value trunk = block(block(x, "enc.b1c1", "enc.b1c2"), "enc.b2c1", "enc.b2c2");

    const int s = cfg.image_size / 4;  // trunk spatial extent
    Value mean = tape.reshape(tape.avgpool2d(trunk, s), {n, cfg.width2});

    Value lv = tape.conv2d(trunk, p.at("enc.logvar.w"), p.at("enc.logvar.b"), 1, 0);
    Value logvar = tape.clamp(tape.reshape(tape.avgpool2d(lv, s), {n, cfg.width2}), cfg.logvar_lo, cfg.logvar_hi);

    Tensor eps;
    if (eps_in != nullptr) {
        if (eps_in->shape != Shape{n, cfg.rep_dim()})
            throw ShapeError("encode: eps shape " + shape_str(eps_in->shape) + " does not match [" + std::to_string(n) +
                             "," + std::to_string(cfg.rep_dim()) + "]");
        eps = *eps_in;
    } else {
        if (rng == nullptr) throw ContractError("encode: need either eps or a generator");
        eps = Tensor::normal({n, cfg.rep_dim()}, *rng);
    }
    Value epsv = tape.input(eps, false);
    Value sample = tape.add(mean, tape.mul(tape.exp(tape.scale(logvar, 0.5)), epsv));
    return ProbRepBatch{mean, logvar, sample, std::move(eps)};
}

// Transformation decoder head over the ordered concatenation (z̃, z) —
// original-image representation first.
struct DecoderOut {
    Value d;        // Gaussian mean [n, target_dim] or logits [n, categories]
    Value logvar;   // Gaussian mode only; clamped
    bool categorical = false;
};

inline DecoderOut decode_transformation(Tape& tape, const BoundParams& p, const NetConfig& cfg, Value z, Value z_tilde) {
    const Tensor& tz = tape.val(z);
    const Tensor& tzt = tape.val(z_tilde);
    if (tz.ndim() != 2 || tz.dim(1) != cfg.rep_dim() || tzt.shape != tz.shape)
        throw ShapeError("decode_transformation: expected two [n," + std::to_string(cfg.rep_dim()) + "] inputs, got " +
                         shape_str(tz.shape) + " and " + shape_str(tzt.shape));
    Value h = tape.concat(z_tilde, z, 1);
    if (cfg.decoder_hidden > 0) h = tape.relu(dense_layer(tape, p, "dec.hidden", h));

    DecoderOut out;
    if (cfg.categorical_decoder) {
        if (!p.has("dec.logits.w")) throw ConfigError("decode_transformation: state lacks a categorical head");
        out.d = dense_layer(tape, p, "dec.logits", h);
        out.categorical = true;
    } else {
        if (!p.has("dec.mean.w")) throw ConfigError("decode_transformation: state lacks a Gaussian head");
        out.d = dense_layer(tape, p, "dec.mean", h);
        out.logvar = tape.clamp(dense_layer(tape, p, "dec.logvar", h), cfg.logvar_lo, cfg.logvar_hi);
    }
    return out;
}

// Label head on the original-image representation: log q(y|z̃), [n, classes].
inline Value classify(Tape& tape, const BoundParams& p, const NetConfig& cfg, Value z_tilde) {
    const Tensor& t = tape.val(z_tilde);
    if (t.ndim() != 2 || t.dim(1) != cfg.rep_dim())
        throw ShapeError("classify: expected [n," + std::to_string(cfg.rep_dim()) + "], got " + shape_str(t.shape));
    Value h = tape.relu(dense_layer(tape, p, "cls.hidden", z_tilde));
    return tape.log_softmax(dense_layer(tape, p, "cls.out", h));
}

// Downstream representation: the average of n_samples reparameterized draws
// (deterministic modes use the mean directly). Since sample = mean + c∘eps is
// affine in eps, averaging the noise first is exact and needs one forward.
inline Tensor downstream_rep(const ModelState& state, const ImageTensor& imgs, int n_samples, Rng& rng) {
    if (n_samples < 1) throw ContractError("downstream_rep: n_samples must be >= 1");
    Tape tape;
    BoundParams p = bind_params(tape, state, false);
    ProbRepBatch rep = encode(tape, p, state.config, imgs, nullptr, &rng);

    Tensor out = tape.val(rep.mean);
    if (state.mode == Mode::AET) return out;

    const Tensor& logvar = tape.val(rep.logvar);
    const size_t len = out.data.size();
    std::vector<double> eps_avg(rep.eps.data.begin(), rep.eps.data.end());  // draw 1 came from encode
    for (int s = 1; s < n_samples; ++s)
        for (size_t i = 0; i < len; ++i) eps_avg[i] += rng.normal();
    for (size_t i = 0; i < len; ++i)
        out.data[i] += std::exp(0.5 * logvar.data[i]) * (eps_avg[i] / static_cast<double>(n_samples));
    return out;
}

}  // namespace tae
