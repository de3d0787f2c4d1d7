#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/data.hpp"
#include "tae/nets.hpp"
#include "tae/objectives.hpp"
#include "tae/rng.hpp"
#include "tae/warp.hpp"
#include "tae/xform.hpp"

namespace tae {

// Piecewise learning-rate schedule: a base rate, an optional warm bump (the
// rate jumps to bump_value at bump_epoch), step drops (divide by step_factor
// at each listed epoch), and an optional linear decay segment that carries
// the schedule's value at decay_start down to final_value by decay_end.
struct LrSchedule {
    double base = 0.0;
    int bump_epoch = -1;
    double bump_value = 0.0;
    std::vector<int> step_epochs;
    double step_factor = 1.0;
    int decay_start = -1;
    int decay_end = -1;
    double final_value = 0.0;

    void validate() const {
        if (!(base > 0.0)) throw ConfigError("lr schedule: base rate must be positive");
        if (bump_epoch >= 0 && !(bump_value > 0.0)) throw ConfigError("lr schedule: bump value must be positive");
        if (!(step_factor >= 1.0)) throw ConfigError("lr schedule: step factor must be >= 1");
        if (decay_start >= 0) {
            if (decay_end <= decay_start) throw ConfigError("lr schedule: decay segment must end after it starts");
            if (final_value < 0.0) throw ConfigError("lr schedule: final value must be nonnegative");
        }
    }

    double at(int epoch) const {
        if (epoch < 0) throw ContractError("lr schedule: negative epoch");
        validate();
        auto stepped = [&](int e) {
            double lr = base;
            if (bump_epoch >= 0 && e >= bump_epoch) lr = bump_value;
            for (int s : step_epochs)
                if (e >= s) lr /= step_factor;
            return lr;
        };
        if (decay_start >= 0 && epoch >= decay_start) {
            if (epoch >= decay_end) return final_value;
            const double start = stepped(decay_start);
            const double t = static_cast<double>(epoch - decay_start) / static_cast<double>(decay_end - decay_start);
            return start + (final_value - start) * t;
        }
        return stepped(epoch);
    }
};

struct TrainConfig {
    Mode mode = Mode::AVT;
    int batch_size = 128;
    int labeled_per_batch = 0;  // SAT: how many batch rows keep their labels
    int epochs = 20;
    int steps_per_epoch = 0;  // 0 = ceil(dataset / batch_size)
    LrSchedule lr;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lambda = 1.0;         // weight of the label term
    double entmin_weight = 0.0;  // entropy-minimization regularizer, off by default
    bool supervised_only = false;  // SAT baseline: label term only, labeled rows only
    bool hflip = false;            // input augmentation: random horizontal flips
    double rand_translate = 0.0;   // input augmentation: ± this fraction of size, integer pixels

    TransformKind transform = TransformKind::Affine;
    AffineSpec affine;
    ProjectiveSpec projective;
    CategoricalSpec categorical = CategoricalSpec::right_angle_rotations();

    std::uint64_t seed = 1;
    int checkpoint_interval = 0;  // epochs between checkpoints; 0 = final only

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
        if (labeled_per_batch < 0 || labeled_per_batch > batch_size)
            throw ConfigError("train: labeled_per_batch must lie in [0, batch_size]");
        if (epochs < 0 || steps_per_epoch < 0) throw ConfigError("train: epochs/steps must be nonnegative");
        lr.validate();
        if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("train: rates must be nonnegative");
        if (lambda < 0.0) throw ConfigError("train: lambda must be nonnegative");
        if (entmin_weight < 0.0) throw ConfigError("train: entmin weight must be nonnegative");
        if (supervised_only && mode != Mode::SAT) throw ConfigError("train: supervised_only requires sat mode");
        if (rand_translate < 0.0 || rand_translate > 0.5) throw ConfigError("train: rand_translate outside [0, 0.5]");
        switch (transform) {
            case TransformKind::Affine: affine.validate(); break;
            case TransformKind::Projective: projective.validate(); break;
            case TransformKind::Categorical: categorical.validate(); break;
        }
    }
};

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

struct Batch {
    ImageTensor originals;    // [B,C,H,W]
    ImageTensor transformed;  // [B,C,H,W], warp of each original by its own t
    std::vector<TransformParams> transforms;
    std::vector<int> labels;  // -1 on unlabeled rows; empty when mode ignores labels

    // stacked standardized regression targets [B, k] (Gaussian decoder)
    Tensor targets() const {
        const int b = static_cast<int>(transforms.size());
        const int k = static_cast<int>(transforms.front().target.size());
        Tensor t({b, k});
        for (int i = 0; i < b; ++i)
            std::copy_n(transforms[static_cast<size_t>(i)].target.data(), k, t.data.data() + static_cast<size_t>(i) * k);
        return t;
    }

    // categorical targets: the sampled item indices
    std::vector<int> target_indices() const {
        std::vector<int> idx;
        idx.reserve(transforms.size());
        for (const TransformParams& t : transforms) {
            if (t.kind != TransformKind::Categorical)
                throw ContractError("target_indices: batch holds non-categorical transformations");
            idx.push_back(static_cast<int>(std::get<CategoricalRaw>(t.raw).index));
        }
        return idx;
    }
};

namespace detail {

inline TransformParams sample_transform(const TrainConfig& cfg, Rng& rng) {
    switch (cfg.transform) {
        case TransformKind::Affine: return sample_affine(rng, cfg.affine);
        case TransformKind::Projective: return sample_projective(rng, cfg.projective);
        case TransformKind::Categorical: return sample_categorical(rng, cfg.categorical);
    }
    throw ContractError("sample_transform: unhandled kind");
}

// random horizontal flip / integer-pixel translation of a [1,C,H,W] image
inline void augment_in_place(ImageTensor& img, const TrainConfig& cfg, Rng& rng) {
    const int c = img.channels(), h = img.height(), w = img.width();
    if (cfg.hflip && rng.uniform01() < 0.5) {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y) {
                double* row = img.data.data.data() + (static_cast<size_t>(ci) * h + y) * w;
                std::reverse(row, row + w);
            }
    }
    if (cfg.rand_translate > 0.0) {
        const int max_px = static_cast<int>(std::lround(cfg.rand_translate * w));
        if (max_px > 0) {
            const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_px + 1))) - max_px;
            const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_px + 1))) - max_px;
            if (dx != 0 || dy != 0) {
                Tensor shifted({1, c, h, w});
                for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y) {
                        const int sy = y - dy;
                        if (sy < 0 || sy >= h) continue;
                        for (int x = 0; x < w; ++x) {
                            const int sx = x - dx;
                            if (sx < 0 || sx >= w) continue;
                            shifted.at({0, ci, y, x}) = img.data.at({0, ci, sy, sx});
                        }
                    }
                img.data = std::move(shifted);
            }
        }
    }
}

}  // namespace detail

// Draws batch_size examples (uniformly, with replacement), samples one
// transformation per example and warps it. SAT batches put the labeled rows
// first: labeled_per_batch rows drawn from the labeled pool keep their
// labels, the rest come from the unlabeled pool (falling back to the labeled
// pool when no unlabeled examples exist — their labels still read -1 so the
// label term only sees the designated rows).
inline Batch build_batch(const Dataset& ds, const TrainConfig& cfg, Rng& rng) {
    if (ds.size() == 0) throw InputError("build_batch: empty dataset");
    const bool sat = cfg.mode == Mode::SAT;

    std::vector<int> labeled_pool, unlabeled_pool;
    if (sat) {
        if (!ds.has_labels()) throw InputError("build_batch: sat mode needs a labeled dataset");
        for (int i = 0; i < ds.size(); ++i)
            (ds.labels[static_cast<size_t>(i)] >= 0 ? labeled_pool : unlabeled_pool).push_back(i);
        if (labeled_pool.empty()) throw InputError("build_batch: sat mode needs at least one labeled example");
    }

    const int b = cfg.batch_size;
    const int labeled_rows = sat ? (cfg.supervised_only ? b : std::min(cfg.labeled_per_batch, b)) : 0;

    const int c = ds.images.channels(), h = ds.images.height(), w = ds.images.width();
    Batch batch;
    batch.originals.data = Tensor({b, c, h, w});
    batch.originals.value_range = ds.images.value_range;
    batch.transformed.data = Tensor({b, c, h, w});
    batch.transforms.reserve(static_cast<size_t>(b));
    if (sat) batch.labels.assign(static_cast<size_t>(b), -1);

    const size_t plane = static_cast<size_t>(c) * h * w;
    double out_lo = 0.0, out_hi = 0.0;
    for (int row = 0; row < b; ++row) {
        int index;
        if (sat && row < labeled_rows) {
            index = labeled_pool[static_cast<size_t>(rng.below(labeled_pool.size()))];
            batch.labels[static_cast<size_t>(row)] = ds.labels[static_cast<size_t>(index)];
        } else if (sat && !unlabeled_pool.empty()) {
            index = unlabeled_pool[static_cast<size_t>(rng.below(unlabeled_pool.size()))];
        } else if (sat) {
            index = labeled_pool[static_cast<size_t>(rng.below(labeled_pool.size()))];
        } else {
            index = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.size())));
        }

        ImageTensor original = ds.image(index);
        detail::augment_in_place(original, cfg, rng);
        TransformParams t = detail::sample_transform(cfg, rng);
        ImageTensor warped = warp_image(original, t.h, h, w);

        std::copy_n(original.data.data.data(), plane, batch.originals.data.data.data() + static_cast<size_t>(row) * plane);
        std::copy_n(warped.data.data.data(), plane, batch.transformed.data.data.data() + static_cast<size_t>(row) * plane);
        out_lo = std::min(out_lo, warped.value_range.lo);
        out_hi = std::max(out_hi, warped.value_range.hi);
        batch.transforms.push_back(std::move(t));
    }
    batch.transformed.value_range = {out_lo, out_hi};
    return batch;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::map<std::string, Tensor> buffers;
    std::int64_t step = 0;
};

// classic momentum SGD with weight decay folded into the buffer:
// buffer ← momentum·buffer + grad + wd·param; param ← param − lr·buffer
inline void sgd_step(ParamMap& params, const std::map<std::string, const Tensor*>& grads, OptimizerState& opt,
                     double lr, double momentum, double weight_decay) {
    for (const auto& [name, grad] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) throw ContractError("sgd_step: unknown parameter '" + name + "'");
        Tensor& param = pit->second;
        if (grad->shape != param.shape)
            throw ContractError("sgd_step: gradient shape " + shape_str(grad->shape) + " does not match parameter '" +
                                name + "' " + shape_str(param.shape));
        Tensor& buf = opt.buffers.try_emplace(name, Tensor(param.shape)).first->second;
        for (size_t i = 0; i < param.data.size(); ++i) {
            buf.data[i] = momentum * buf.data[i] + grad->data[i] + weight_decay * param.data[i];
            param.data[i] -= lr * buf.data[i];
        }
    }
    ++opt.step;
}

// ---------------------------------------------------------------------------
// the epoch loop
// ---------------------------------------------------------------------------

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

using MetricsSink = std::function<void(const StepRecord&)>;
using CheckpointSink = std::function<void(const ModelState&, int epoch)>;

// One objective evaluation: forward both branches, combine the mode's terms.
// Exposed separately so tests can gradcheck exactly what training optimizes.
inline ObjectiveTerms batch_objective(Tape& tape, const BoundParams& bp, const NetConfig& net, const TrainConfig& cfg,
                                      const Batch& batch, Rng& noise) {
    ObjectiveTerms terms;
    const bool categorical = net.categorical_decoder;

    if (cfg.mode == Mode::SAT && cfg.supervised_only) {
        // label term alone; the transformation machinery stays cold
        ProbRepBatch original = encode(tape, bp, net, batch.originals, nullptr, &noise);
        Value logprobs = classify(tape, bp, net, original.sample);
        terms = semisup_objective(tape, tape.scale(tape.sum(logprobs), 0.0), logprobs, batch.labels, cfg.lambda,
                                  cfg.entmin_weight);
        return terms;
    }

    ProbRepBatch original = encode(tape, bp, net, batch.originals, nullptr, &noise);
    ProbRepBatch transformed = encode(tape, bp, net, batch.transformed, nullptr, &noise);

    Value transformation;
    if (cfg.mode == Mode::AET) {
        // deterministic branch: representations are the means
        DecoderOut dec = decode_transformation(tape, bp, net, transformed.mean, original.mean);
        transformation = categorical ? avt_objective(tape, dec, batch.target_indices())
                                     : aet_loss(tape, dec.d, tape.constant(batch.targets()));
    } else {
        DecoderOut dec = decode_transformation(tape, bp, net, transformed.sample, original.sample);
        transformation = categorical ? avt_objective(tape, dec, batch.target_indices())
                                     : avt_objective(tape, dec, tape.constant(batch.targets()));
    }

    if (cfg.mode == Mode::SAT) {
        Value logprobs = classify(tape, bp, net, original.sample);
        terms = semisup_objective(tape, transformation, logprobs, batch.labels, cfg.lambda, cfg.entmin_weight);
    } else {
        terms.transformation = transformation;
        terms.total = transformation;
        terms.lambda = cfg.lambda;
    }
    return terms;
}

// Full training loop. Deterministic for a fixed seed: batches, noise and
// initialization all derive from cfg.seed, and every step is sequential.
inline ModelState run(const NetConfig& net, const TrainConfig& cfg, const Dataset& ds, const MetricsSink& metrics = {},
                      const CheckpointSink& checkpoint = {}) {
    net.validate();
    cfg.validate();
    ds.validate();
    if (ds.size() == 0) throw InputError("run: empty dataset");

    Rng root(cfg.seed);
    Rng init_rng = root.stream("init");
    Rng data_rng = root.stream("data");
    Rng noise_rng = root.stream("noise");

    ModelState state;
    state.config = net;
    state.mode = cfg.mode;
    state.params = init_params(net, init_rng);

    const std::vector<std::string> trainables = trainable_param_names(net, cfg.mode);
    OptimizerState opt;

    const int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (ds.size() + cfg.batch_size - 1) / cfg.batch_size;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr.at(epoch);
        for (int s = 0; s < steps; ++s) {
            Batch batch = build_batch(ds, cfg, data_rng);

            Tape tape;
            BoundParams bp = bind_params(tape, state, true);
            ObjectiveTerms terms = batch_objective(tape, bp, net, cfg, batch, noise_rng);

            const double total = tape.val(terms.total).data[0];
            if (!std::isfinite(total))
                throw NumericError("run: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(opt.step) + "; aborting");

            tape.backward(terms.total);

            std::map<std::string, const Tensor*> grads;
            for (const std::string& name : trainables) grads.emplace(name, &tape.grad(bp.at(name)));
            sgd_step(state.params, grads, opt, lr, cfg.momentum, cfg.weight_decay);

            if (metrics) metrics(StepRecord{opt.step - 1, epoch, lr, terms.breakdown(tape)});
        }
        for (const auto& [name, tensor] : state.params)
            if (!tensor.all_finite())
                throw NumericError("run: parameter '" + name + "' went non-finite after epoch " + std::to_string(epoch));
        if (checkpoint && cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
            epoch + 1 < cfg.epochs)
            checkpoint(state, epoch + 1);
    }
    if (checkpoint) checkpoint(state, cfg.epochs);
    return state;
}

}  // namespace tae
