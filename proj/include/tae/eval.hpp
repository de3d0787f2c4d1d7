#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/data.hpp"
#include "tae/nets.hpp"
#include "tae/objectives.hpp"
#include "tae/rng.hpp"
#include "tae/tensor.hpp"
#include "tae/train.hpp"

namespace tae {

// Frozen representations of a dataset, ready for KNN / probes.
struct FeatureBank {
    Tensor features;  // [N, D]
    std::vector<int> labels;
    std::string source;  // checkpoint id the features came from

    int count() const { return features.ndim() == 2 ? features.dim(0) : 0; }
    int dim() const { return features.ndim() == 2 ? features.dim(1) : 0; }

    void validate() const {
        if (features.ndim() != 2 || features.dim(0) < 1)
            throw InputError("feature bank: expected nonempty [N,D] features, got " + shape_str(features.shape));
        if (!features.all_finite()) throw InputError("feature bank: non-finite feature values");
        if (labels.size() != static_cast<size_t>(features.dim(0)))
            throw InputError("feature bank: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(features.dim(0)) + " rows");
    }
};

namespace detail {

inline std::uint64_t image_content_hash(const double* data, size_t len) {
    return fnv1a(std::string_view(reinterpret_cast<const char*>(data), len * sizeof(double)));
}

}  // namespace detail

// Representations for a whole dataset. Each image's noise derives from its
// own content (hashed) plus the caller's generator, so the result is
// deterministic given the seed and permutation-equivariant: reordering the
// dataset reorders the rows, nothing else.
inline FeatureBank extract_features(const ModelState& state, const Dataset& ds, int n_samples, Rng& rng,
                                    const std::string& source = "") {
    if (n_samples < 1) throw ContractError("extract_features: n_samples must be >= 1");
    ds.validate();
    if (ds.size() == 0) throw InputError("extract_features: empty dataset");
    const std::uint64_t base = rng.next_u64();

    const int n = ds.size();
    const int d = state.config.rep_dim();
    const int c = ds.images.channels(), h = ds.images.height(), w = ds.images.width();
    const size_t plane = static_cast<size_t>(c) * h * w;

    FeatureBank bank;
    bank.features = Tensor({n, d});
    bank.labels = ds.has_labels() ? ds.labels : std::vector<int>(static_cast<size_t>(n), -1);
    bank.source = source;

    const int chunk = 64;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        ImageTensor block;
        block.data = Tensor({m, c, h, w});
        block.value_range = ds.images.value_range;
        std::copy_n(ds.images.data.data.data() + static_cast<size_t>(start) * plane, static_cast<size_t>(m) * plane,
                    block.data.data.data());

        Tape tape;
        BoundParams bp = bind_params(tape, state, false);
        Tensor zero_eps({m, d});
        ProbRepBatch rep = encode(tape, bp, state.config, block, &zero_eps, nullptr);
        const Tensor& mean = tape.val(rep.mean);
        const Tensor& logvar = tape.val(rep.logvar);

        for (int i = 0; i < m; ++i) {
            double* dst = bank.features.data.data() + static_cast<size_t>(start + i) * d;
            const double* mu = mean.data.data() + static_cast<size_t>(i) * d;
            std::copy_n(mu, d, dst);
            if (state.mode == Mode::AET) continue;
            // sample = mean + exp(logvar/2)∘eps is affine in eps, so the
            // n_samples average reduces to one forward and averaged noise
            const double* img = block.data.data.data() + static_cast<size_t>(i) * plane;
            Rng noise(base ^ detail::image_content_hash(img, plane));
            const double* lv = logvar.data.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                double eps_sum = 0.0;
                for (int s = 0; s < n_samples; ++s) eps_sum += noise.normal();
                dst[j] += std::exp(0.5 * lv[j]) * (eps_sum / static_cast<double>(n_samples));
            }
        }
    }
    bank.validate();
    return bank;
}

// Euclidean K-nearest-neighbor vote. Ties among classes are broken by the
// smaller summed distance of the tied class's neighbors, then by the lower
// label index.
inline std::vector<int> knn_classify(const FeatureBank& bank, const Tensor& queries, int k) {
    bank.validate();
    if (queries.ndim() != 2 || queries.dim(1) != bank.dim())
        throw ShapeError("knn_classify: queries " + shape_str(queries.shape) + " vs bank features " +
                         shape_str(bank.features.shape));
    if (k < 1) throw ContractError("knn_classify: K must be >= 1");
    if (k > bank.count()) throw ContractError("knn_classify: K = " + std::to_string(k) + " exceeds bank size " +
                                              std::to_string(bank.count()));
    for (int y : bank.labels)
        if (y < 0) throw InputError("knn_classify: bank has unlabeled rows");

    const int n = bank.count(), d = bank.dim(), m = queries.dim(0);
    std::vector<int> out(static_cast<size_t>(m));
    std::vector<std::pair<double, int>> dist(static_cast<size_t>(n));
    for (int q = 0; q < m; ++q) {
        const double* qv = queries.data.data() + static_cast<size_t>(q) * d;
        for (int i = 0; i < n; ++i) {
            const double* bv = bank.features.data.data() + static_cast<size_t>(i) * d;
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = qv[j] - bv[j];
                s += diff * diff;
            }
            dist[static_cast<size_t>(i)] = {std::sqrt(s), i};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

        // vote over the K nearest; per class, count and summed distance
        std::vector<int> votes;
        std::vector<double> sums;
        for (int i = 0; i < k; ++i) {
            const int label = bank.labels[static_cast<size_t>(dist[static_cast<size_t>(i)].second)];
            if (label >= static_cast<int>(votes.size())) {
                votes.resize(static_cast<size_t>(label) + 1, 0);
                sums.resize(static_cast<size_t>(label) + 1, 0.0);
            }
            ++votes[static_cast<size_t>(label)];
            sums[static_cast<size_t>(label)] += dist[static_cast<size_t>(i)].first;
        }
        int best = -1;
        for (int cls = 0; cls < static_cast<int>(votes.size()); ++cls) {
            if (votes[static_cast<size_t>(cls)] == 0) continue;
            if (best < 0 || votes[static_cast<size_t>(cls)] > votes[static_cast<size_t>(best)] ||
                (votes[static_cast<size_t>(cls)] == votes[static_cast<size_t>(best)] &&
                 sums[static_cast<size_t>(cls)] < sums[static_cast<size_t>(best)]))
                best = cls;
        }
        out[static_cast<size_t>(q)] = best;
    }
    return out;
}

inline double knn_error(const FeatureBank& bank, const FeatureBank& test, int k) {
    std::vector<int> pred = knn_classify(bank, test.features, k);
    int wrong = 0;
    for (size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != test.labels[i];
    return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// probes: small classifier heads trained on frozen features with the same
// SGD machinery as the main loop
// ---------------------------------------------------------------------------

enum class ProbeHead { Linear, Nonlinear };

inline ProbeHead probe_head_from_string(const std::string& s) {
    if (s == "linear") return ProbeHead::Linear;
    if (s == "nonlinear") return ProbeHead::Nonlinear;
    throw ConfigError("unknown probe head '" + s + "' (expected linear or nonlinear)");
}

struct ProbeConfig {
    ProbeHead head = ProbeHead::Linear;
    int hidden = 64;  // width of the two hidden layers (nonlinear head)
    int epochs = 40;
    int batch_size = 64;
    double lr = 0.1;
    std::vector<int> lr_drop_epochs = {25, 35};
    double lr_drop_factor = 5.0;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
};

// Trains a probe on bank_train and reports the error rate on bank_test.
// Features are standardized with the training bank's statistics; the
// encoder is untouched by construction (only probe tensors exist here).
inline double probe_train(const FeatureBank& bank_train, const FeatureBank& bank_test, int class_count,
                          const ProbeConfig& cfg) {
    bank_train.validate();
    bank_test.validate();
    if (bank_train.dim() != bank_test.dim())
        throw ShapeError("probe_train: feature dims differ, " + shape_str(bank_train.features.shape) + " vs " +
                         shape_str(bank_test.features.shape));
    if (class_count < 2) throw InputError("probe_train: need at least two classes");
    for (int y : bank_train.labels)
        if (y < 0 || y >= class_count) throw InputError("probe_train: degenerate bank (unlabeled or out-of-range rows)");

    const int n = bank_train.count(), d = bank_train.dim();

    // standardize with train statistics
    std::vector<double> mu(static_cast<size_t>(d), 0.0), sigma(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += bank_train.features.data[static_cast<size_t>(i) * d + j];
    for (double& v : mu) v /= static_cast<double>(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            const double c = bank_train.features.data[static_cast<size_t>(i) * d + j] - mu[static_cast<size_t>(j)];
            sigma[static_cast<size_t>(j)] += c * c;
        }
    for (double& v : sigma) v = std::max(1e-8, std::sqrt(v / static_cast<double>(n)));
    auto standardized = [&](const FeatureBank& b) {
        Tensor t = b.features;
        const int rows = b.count();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d; ++j) {
                double& v = t.data[static_cast<size_t>(i) * d + j];
                v = (v - mu[static_cast<size_t>(j)]) / sigma[static_cast<size_t>(j)];
            }
        return t;
    };
    const Tensor xtrain = standardized(bank_train);
    const Tensor xtest = standardized(bank_test);

    Rng rng(cfg.seed);
    ParamMap params;
    auto dense_init = [&](const std::string& name, int din, int dout) {
        const double s = 1.0 / std::sqrt(static_cast<double>(din));
        params[name + ".w"] = Tensor::uniform({din, dout}, rng, -s, s);
        params[name + ".b"] = Tensor::zeros({dout});
    };
    if (cfg.head == ProbeHead::Linear) {
        dense_init("p0", d, class_count);
    } else {
        dense_init("p0", d, cfg.hidden);
        dense_init("p1", cfg.hidden, cfg.hidden);
        dense_init("p2", cfg.hidden, class_count);
    }

    auto forward = [&](Tape& tape, BoundParams& bp, Value x) {
        if (cfg.head == ProbeHead::Linear) return dense_layer(tape, bp, "p0", x);
        Value h = tape.relu(dense_layer(tape, bp, "p0", x));
        h = tape.relu(dense_layer(tape, bp, "p1", h));
        return dense_layer(tape, bp, "p2", h);
    };

    OptimizerState opt;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.lr;
        for (int e : cfg.lr_drop_epochs)
            if (epoch >= e) lr /= cfg.lr_drop_factor;
        rng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int m = std::min(cfg.batch_size, n - start);
            Tensor xb({m, d});
            std::vector<int> yb(static_cast<size_t>(m));
            for (int i = 0; i < m; ++i) {
                const int src = order[static_cast<size_t>(start + i)];
                std::copy_n(xtrain.data.data() + static_cast<size_t>(src) * d, d, xb.data.data() + static_cast<size_t>(i) * d);
                yb[static_cast<size_t>(i)] = bank_train.labels[static_cast<size_t>(src)];
            }

            Tape tape;
            BoundParams bp;
            for (const auto& [name, tensor] : params) bp.values[name] = tape.input(tensor, true);
            Value logits = forward(tape, bp, tape.constant(std::move(xb)));
            Value loss = cross_entropy(tape, tape.log_softmax(logits), yb);
            tape.backward(loss);

            std::map<std::string, const Tensor*> grads;
            for (const auto& [name, value] : bp.values) grads.emplace(name, &tape.grad(value));
            sgd_step(params, grads, opt, lr, cfg.momentum, cfg.weight_decay);
        }
    }

    // test error
    Tape tape;
    BoundParams bp;
    for (const auto& [name, tensor] : params) bp.values[name] = tape.input(tensor, false);
    Value logits = forward(tape, bp, tape.constant(xtest));
    const Tensor& out = tape.val(logits);
    int wrong = 0;
    for (int i = 0; i < bank_test.count(); ++i) {
        const double* row = out.data.data() + static_cast<size_t>(i) * class_count;
        int arg = 0;
        for (int j = 1; j < class_count; ++j)
            if (row[j] > row[arg]) arg = j;
        wrong += arg != bank_test.labels[static_cast<size_t>(i)];
    }
    return static_cast<double>(wrong) / static_cast<double>(bank_test.count());
}

// ---------------------------------------------------------------------------
// few-label protocol
// ---------------------------------------------------------------------------

struct FewLabelRow {
    int per_class = 0;
    int repetition = 0;
    double error = 0.0;
};

// For each requested count, repeatedly subsample a stratified labeled subset
// of the train bank and train a probe on it; errors are reported per
// repetition (callers aggregate).
inline std::vector<FewLabelRow> few_label_protocol(const FeatureBank& bank_train, const FeatureBank& bank_test,
                                                   int class_count, const std::vector<int>& samples_per_class,
                                                   int repetitions, const ProbeConfig& probe, Rng& rng) {
    bank_train.validate();
    if (repetitions < 1) throw ContractError("few_label_protocol: repetitions must be >= 1");

    std::vector<std::vector<int>> by_class(static_cast<size_t>(class_count));
    for (int i = 0; i < bank_train.count(); ++i) {
        const int y = bank_train.labels[static_cast<size_t>(i)];
        if (y < 0 || y >= class_count) throw InputError("few_label_protocol: bank labels outside [0,class_count)");
        by_class[static_cast<size_t>(y)].push_back(i);
    }

    std::vector<FewLabelRow> rows;
    for (int count : samples_per_class) {
        if (count < 1) throw ContractError("few_label_protocol: counts must be positive");
        for (const auto& cls : by_class)
            if (static_cast<int>(cls.size()) < count)
                throw InputError("few_label_protocol: a class has only " + std::to_string(cls.size()) +
                                 " examples, need " + std::to_string(count));
        for (int rep = 0; rep < repetitions; ++rep) {
            std::vector<int> chosen;
            for (auto cls : by_class) {  // copy, then shuffle
                rng.shuffle(cls);
                chosen.insert(chosen.end(), cls.begin(), cls.begin() + count);
            }
            FeatureBank sub;
            sub.features = Tensor({static_cast<int>(chosen.size()), bank_train.dim()});
            sub.labels.resize(chosen.size());
            for (size_t i = 0; i < chosen.size(); ++i) {
                std::copy_n(bank_train.features.data.data() + static_cast<size_t>(chosen[i]) * bank_train.dim(),
                            bank_train.dim(), sub.features.data.data() + i * static_cast<size_t>(bank_train.dim()));
                sub.labels[i] = bank_train.labels[static_cast<size_t>(chosen[i])];
            }
            sub.source = bank_train.source;
            ProbeConfig pc = probe;
            pc.seed = rng.next_u64();
            rows.push_back({count, rep, probe_train(sub, bank_test, class_count, pc)});
        }
    }
    return rows;
}

// Error rate of the model's own classifier head (SAT) over a dataset,
// using averaged-sample representations.
inline double classifier_error(const ModelState& state, const Dataset& ds, int n_samples, Rng& rng) {
    if (!ds.has_labels()) throw InputError("classifier_error: dataset has no labels");
    FeatureBank bank = extract_features(state, ds, n_samples, rng);

    Tape tape;
    BoundParams bp = bind_params(tape, state, false);
    Value logprobs = classify(tape, bp, state.config, tape.constant(bank.features));
    const Tensor& out = tape.val(logprobs);
    const int classes = state.config.classes;
    int wrong = 0, total = 0;
    for (int i = 0; i < bank.count(); ++i) {
        if (bank.labels[static_cast<size_t>(i)] < 0) continue;
        const double* row = out.data.data() + static_cast<size_t>(i) * classes;
        int arg = 0;
        for (int j = 1; j < classes; ++j)
            if (row[j] > row[arg]) arg = j;
        wrong += arg != bank.labels[static_cast<size_t>(i)];
        ++total;
    }
    if (total == 0) throw InputError("classifier_error: no labeled rows");
    return static_cast<double>(wrong) / static_cast<double>(total);
}

}  // namespace tae
