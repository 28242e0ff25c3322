#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "medctx/network.hpp"

namespace medctx {

/// EMA momentum schedule: cosine from lambda0 at step 0 to 1.0 at
/// `total_steps`, monotone nondecreasing.
inline double cosine_lambda(int64_t step, int64_t total_steps, double lambda0) {
    if (total_steps <= 0) throw ContractError("cosine_lambda: total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw ContractError("cosine_lambda: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    if (lambda0 < 0.0 || lambda0 > 1.0)
        throw ContractError("cosine_lambda: lambda0 must lie in [0, 1]");
    const double phase = 3.14159265358979323846 * static_cast<double>(step) /
                         static_cast<double>(total_steps);
    return 1.0 - (1.0 - lambda0) * (std::cos(phase) + 1.0) / 2.0;
}

/// In-place convex combination: teacher <- lambda*teacher + (1-lambda)*student,
/// per parameter. Names and shapes must match exactly.
template <class T>
void ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double lambda) {
    if (teacher.size() != student.size())
        throw ContractError("ema_update: parameter sets differ in size");
    const T lam = static_cast<T>(lambda);
    const T one_minus = static_cast<T>(1.0 - lambda);
    for (size_t i = 0; i < teacher.size(); ++i) {
        if (teacher.name(i) != student.name(i))
            throw ContractError("ema_update: name mismatch at index " + std::to_string(i) + ": " +
                                teacher.name(i) + " vs " + student.name(i));
        auto& tv = teacher.tensor(i).values();
        const auto& sv = student.tensor(i).values();
        if (tv.size() != sv.size())
            throw ContractError("ema_update: shape mismatch for " + teacher.name(i));
        for (size_t j = 0; j < tv.size(); ++j) tv[j] = lam * tv[j] + one_minus * sv[j];
    }
}

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates aligned with a ParameterSet's order.
template <class T>
struct AdamWState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    int64_t t = 0;

    static AdamWState init(const ParameterSet<T>& params) {
        AdamWState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            st.m.emplace_back(params.tensor(i).values().size(), T(0));
            st.v.emplace_back(params.tensor(i).values().size(), T(0));
        }
        return st;
    }
};

/// Decoupled-weight-decay Adam with bias correction. `apply_decay` selects
/// which parameters receive decay (conv weights yes; biases, norm gains and
/// shifts, and the mask embeddings no, in the default trainer policy).
template <class T>
void adamw_step(ParameterSet<T>& params, AdamWState<T>& state, const AdamWConfig& cfg,
                const std::function<bool(const std::string&)>& apply_decay) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adamw_step: optimizer state does not match parameter set");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params.tensor(i);
        if (!p.has_grad())
            throw ContractError("adamw_step: missing gradient for " + params.name(i));
        const auto& g = p.grad();
        auto& w = p.values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != w.size())
            throw ContractError("adamw_step: moment shape mismatch for " + params.name(i));
        const bool decay = apply_decay(params.name(i)) && cfg.weight_decay != 0.0;
        const T lr = static_cast<T>(cfg.lr);
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T eps = static_cast<T>(cfg.eps);
        const T wd = static_cast<T>(cfg.weight_decay);
        for (size_t j = 0; j < w.size(); ++j) {
            if (decay) w[j] -= lr * wd * w[j];
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / static_cast<T>(bc1);
            const T vhat = v[j] / static_cast<T>(bc2);
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace medctx
