#pragma once

#include <set>
#include <vector>

#include "medctx/ops.hpp"
#include "medctx/tensor.hpp"

namespace medctx {

// Objective terms: Dice-CE for the supervised and masked-student paths, the
// normalized-L2 consistency term against the teacher, and their weighted
// combination.

struct LossConfig {
    double beta = 1.0;       // weight of the consistency term
    double eps_dice = 1e-5;  // smoothing added to dice numerator and denominator
    double eps_cl = 1e-8;    // guards a zero-norm consistency target
    std::vector<double> class_weights; // empty = uniform
    bool include_msl = true; // masked-student Dice-CE term
    bool include_cl = true;  // consistency term
    bool include_background = true;
    bool cl_on_probs = false; // consistency on softmax outputs instead of logits
};

namespace detail {

template <class T>
void require_onehot(const Tensor<T>& y, const char* op) {
    require_rank(y, 5, op);
    const int64_t B = y.extent(0), C = y.extent(1);
    const int64_t V = y.numel() / (B * C);
    const auto& v = y.values();
    for (T x : v)
        if (x != T(0) && x != T(1))
            throw ContractError(std::string(op) + ": label tensor must contain only 0 and 1");
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < V; ++i) {
            T s = T(0);
            for (int64_t c = 0; c < C; ++c) s += v[static_cast<size_t>((b * C + c) * V + i)];
            if (s != T(1))
                throw ContractError(std::string(op) + ": labels must be one-hot across channels");
        }
}

inline std::vector<double> resolve_class_weights(const LossConfig& cfg, int64_t channels,
                                                 const char* op) {
    std::vector<double> w(static_cast<size_t>(channels), 1.0);
    if (!cfg.class_weights.empty()) {
        if (static_cast<int64_t>(cfg.class_weights.size()) != channels)
            throw ContractError(std::string(op) + ": class_weights length must equal channel count");
        w = cfg.class_weights;
    }
    if (!cfg.include_background) w[0] = 0.0;
    double total = 0.0;
    for (double x : w) total += x;
    if (total <= 0.0) throw ContractError(std::string(op) + ": class weights sum to zero");
    return w;
}

} // namespace detail

/// Dice-CE: mean over classes of (1 - soft dice) plus voxel-mean cross
/// entropy of softmax(logits). Soft dice per class uses squared-sum
/// denominators: (2*sum(Y*F) + eps) / (sum(Y^2) + sum(F^2) + eps).
template <class T>
Tensor<T> dice_ce(const Tensor<T>& y_onehot, const Tensor<T>& logits, const LossConfig& cfg) {
    detail::require_onehot(y_onehot, "dice_ce");
    if (y_onehot.shape() != logits.shape())
        throw ShapeError("dice_ce: label shape " + shape_str(y_onehot.shape()) +
                         " does not match logits " + shape_str(logits.shape()));
    const int64_t C = logits.extent(1);
    const std::vector<double> w = detail::resolve_class_weights(cfg, C, "dice_ce");

    Tensor<T> probs = softmax_channel(logits);
    const std::set<int64_t> non_channel = {0, 2, 3, 4};

    // Soft dice per class, then weighted mean of (1 - dice).
    Tensor<T> inter = sum(mul(y_onehot, probs), non_channel);
    Tensor<T> ysq = sum(mul(y_onehot, y_onehot), non_channel);
    Tensor<T> psq = sum(mul(probs, probs), non_channel);
    const T eps = static_cast<T>(cfg.eps_dice);
    Tensor<T> dice = div(add(mul(inter, T(2)), eps), add(add(ysq, psq), eps));

    std::vector<T> wv(w.begin(), w.end());
    double wsum = 0.0;
    for (double x : w) wsum += x;
    Tensor<T> wt = Tensor<T>::from({C}, std::move(wv));
    Tensor<T> dice_loss = div(sum(mul(sub(Tensor<T>::filled({C}, T(1)), dice), wt)),
                              static_cast<T>(wsum));

    // Cross entropy, weighted per true class and normalized by total weight.
    Tensor<T> logp = log_softmax_channel(logits);
    std::vector<T> yw = y_onehot.values();
    const int64_t B = logits.extent(0);
    const int64_t V = logits.numel() / (B * C);
    double weight_total = 0.0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const size_t base = static_cast<size_t>((b * C + c) * V);
            for (int64_t i = 0; i < V; ++i) {
                yw[base + static_cast<size_t>(i)] *= static_cast<T>(w[static_cast<size_t>(c)]);
                weight_total += yw[base + static_cast<size_t>(i)];
            }
        }
    Tensor<T> yw_t = Tensor<T>::from(y_onehot.shape(), std::move(yw));
    Tensor<T> ce = div(neg(sum(mul(yw_t, logp))), static_cast<T>(weight_total));

    return add(dice_loss, ce);
}

/// Consistency: ||student_masked - teacher||^2 / (||teacher||^2 + eps).
/// The teacher output is treated as a constant; gradient flows only into the
/// student side.
template <class T>
Tensor<T> consistency(const Tensor<T>& student_masked, const Tensor<T>& teacher,
                      const LossConfig& cfg) {
    if (student_masked.shape() != teacher.shape())
        throw ShapeError("consistency: shapes " + shape_str(student_masked.shape()) + " and " +
                         shape_str(teacher.shape()) + " differ");
    Tensor<T> s = student_masked;
    Tensor<T> t = teacher.detach();
    if (cfg.cl_on_probs) {
        s = softmax_channel(s);
        t = softmax_channel(t);
    }
    Tensor<T> diff = sub(s, t);
    Tensor<T> num = sum(mul(diff, diff));
    double den = 0.0;
    for (T v : t.values()) den += static_cast<double>(v) * static_cast<double>(v);
    den += cfg.eps_cl;
    return mul(num, static_cast<T>(1.0 / den));
}

template <class T>
struct LossBreakdown {
    Tensor<T> total;
    double supervised = 0.0;
    double masked_student = 0.0;
    double consistency_term = 0.0; // unweighted value of the consistency loss
};

/// Combined objective: supervised Dice-CE, plus (when enabled) masked-student
/// Dice-CE and beta-weighted consistency. With both toggles off the returned
/// tensor is exactly the supervised term.
template <class T>
LossBreakdown<T> total_loss(const Tensor<T>& y_onehot, const Tensor<T>& student,
                            const Tensor<T>& student_masked, const Tensor<T>& teacher,
                            const LossConfig& cfg) {
    LossBreakdown<T> out;
    Tensor<T> supervised = dice_ce(y_onehot, student, cfg);
    out.supervised = static_cast<double>(supervised.item());
    out.total = supervised;
    if (cfg.include_msl) {
        Tensor<T> msl = dice_ce(y_onehot, student_masked, cfg);
        out.masked_student = static_cast<double>(msl.item());
        out.total = add(out.total, msl);
    }
    if (cfg.include_cl) {
        Tensor<T> cl = consistency(student_masked, teacher, cfg);
        out.consistency_term = static_cast<double>(cl.item());
        if (cfg.beta != 0.0) out.total = add(out.total, mul(cl, static_cast<T>(cfg.beta)));
    }
    return out;
}

} // namespace medctx
