#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/diffcore.hpp"
#include "tae/nets.hpp"
#include "tae/tensor.hpp"

namespace tae {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2π)

// Per-step scalar record of the combined objective; what the metrics stream
// carries. All terms are minimized losses.
struct LossBreakdown {
    double total = 0.0;
    double transformation_term = 0.0;
    double label_term = 0.0;
    double entmin_term = 0.0;
    double lambda = 1.0;
};

// Mean squared error between predicted and true transformation encodings,
// averaged over every entry. Works for single vectors ([k]) and batches
// ([n,k]) alike.
inline Value aet_loss(Tape& tape, Value t_hat, Value t_target) {
    require_same_shape(tape.val(t_hat), tape.val(t_target), "aet_loss");
    Value d = tape.sub(t_hat, t_target);
    return tape.mean(tape.mul(d, d));
}

// Gaussian negative log-likelihood of the true transformation under the
// decoder output, ½·Σᵢ[(tᵢ−dᵢ)²·e^(−lvᵢ) + lvᵢ + log 2π] per sample,
// averaged over the batch.
inline Value avt_objective(Tape& tape, const DecoderOut& dec, Value t_target) {
    if (dec.categorical) throw ConfigError("avt_objective: categorical decoder needs index targets");
    require_same_shape(tape.val(dec.d), tape.val(t_target), "avt_objective");
    const Tensor& t = tape.val(t_target);
    const int n = t.ndim() == 2 ? t.dim(0) : 1;
    Value r = tape.sub(dec.d, t_target);
    Value sq = tape.mul(r, r);
    Value terms = tape.add(tape.mul(sq, tape.exp(tape.scale(dec.logvar, -1.0))), dec.logvar);
    return tape.scale(tape.sum(tape.add_scalar(terms, kLog2Pi)), 0.5 / static_cast<double>(n));
}

// Mean cross-entropy of log-probabilities against integer labels. Entries
// labeled -1 are skipped; the mean runs over the labeled rows only.
inline Value cross_entropy(Tape& tape, Value logprobs, const std::vector<int>& labels) {
    const Tensor& lp = tape.val(logprobs);
    if (lp.ndim() != 2) throw ShapeError("cross_entropy: expected [n, classes], got " + shape_str(lp.shape));
    const int n = lp.dim(0), c = lp.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    Tensor onehot({n, c});
    int labeled = 0;
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] < 0) continue;
        const int y = labels[static_cast<size_t>(i)];
        if (y >= c) throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
        onehot.at({i, y}) = 1.0;
        ++labeled;
    }
    if (labeled == 0) throw ContractError("cross_entropy: no labeled rows");
    Value picked = tape.mul(logprobs, tape.constant(std::move(onehot)));
    return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(labeled));
}

// Categorical transformation decoder: cross-entropy of the logits against
// the sampled transformation's index.
inline Value avt_objective(Tape& tape, const DecoderOut& dec, const std::vector<int>& t_index) {
    if (!dec.categorical) throw ConfigError("avt_objective: Gaussian decoder needs real-vector targets");
    return cross_entropy(tape, tape.log_softmax(dec.d), t_index);
}

// Mean Shannon entropy −Σ p·log p of the predicted label distributions.
// Zero iff every prediction is one-hot; invariant to class permutation.
inline Value entropy_min(Tape& tape, Value logprobs) {
    const Tensor& lp = tape.val(logprobs);
    if (lp.ndim() != 2) throw ShapeError("entropy_min: expected [n, classes], got " + shape_str(lp.shape));
    const int n = lp.dim(0);
    Value plogp = tape.mul(tape.exp(logprobs), logprobs);
    return tape.scale(tape.sum(plogp), -1.0 / static_cast<double>(n));
}

// A combined objective held on tape. label/entmin may be absent (idx -1)
// when a mode or batch has no use for them.
struct ObjectiveTerms {
    Value total;
    Value transformation;
    Value label{-1};
    Value entmin{-1};
    double lambda = 1.0;
    double entmin_weight = 0.0;

    LossBreakdown breakdown(const Tape& tape) const {
        LossBreakdown b;
        b.total = tape.val(total).data[0];
        b.transformation_term = tape.val(transformation).data[0];
        b.label_term = label.idx >= 0 ? tape.val(label).data[0] : 0.0;
        b.entmin_term = entmin.idx >= 0 ? tape.val(entmin).data[0] : 0.0;
        b.lambda = lambda;
        return b;
    }
};

// Eq-style fully supervised variant: every row carries a label and both
// expectations are weighted equally (λ fixed at 1).
inline ObjectiveTerms sat_objective(Tape& tape, Value class_logprobs, const std::vector<int>& y, const DecoderOut& dec,
                                    Value t_target) {
    for (int label : y)
        if (label < 0) throw InputError("sat_objective: every row must be labeled");
    ObjectiveTerms o;
    o.transformation = avt_objective(tape, dec, t_target);
    o.label = cross_entropy(tape, class_logprobs, y);
    o.lambda = 1.0;
    o.total = tape.add(o.transformation, o.label);
    return o;
}

// Semi-supervised combination: the transformation term covers the whole
// batch, the label term only the rows with labels (-1 marks unlabeled), and
// entropy minimization — when weighted on — covers every prediction.
// total = transformation + λ·label + entmin_weight·entmin.
inline ObjectiveTerms semisup_objective(Tape& tape, Value transformation, Value class_logprobs,
                                        const std::vector<int>& labels, double lambda, double entmin_weight) {
    if (lambda < 0.0) throw ConfigError("semisup_objective: lambda must be nonnegative");
    if (entmin_weight < 0.0) throw ConfigError("semisup_objective: entmin weight must be nonnegative");
    ObjectiveTerms o;
    o.transformation = transformation;
    o.lambda = lambda;
    o.entmin_weight = entmin_weight;
    o.total = transformation;

    bool any_labeled = false;
    for (int label : labels) any_labeled |= label >= 0;
    if (any_labeled) {
        o.label = cross_entropy(tape, class_logprobs, labels);
        if (lambda != 0.0) o.total = tape.add(o.total, tape.scale(o.label, lambda));
    }
    if (entmin_weight != 0.0) {
        o.entmin = entropy_min(tape, class_logprobs);
        o.total = tape.add(o.total, tape.scale(o.entmin, entmin_weight));
    }
    return o;
}

}  // namespace tae
