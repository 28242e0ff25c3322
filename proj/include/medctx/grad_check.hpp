#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "medctx/tensor.hpp"

namespace medctx {

/// Options for grad_check. `corrupt_factor` scales the analytic gradient
/// before comparison; tests use it to prove the check detects wrong gradients.
struct GradCheckOptions {
    double eps = 1e-6;
    double corrupt_factor = 1.0;
};

/// Central-difference verification of reverse-mode gradients.
///
/// `f` must build a scalar output from the given leaf tensors each time it is
/// called; leaf values are perturbed in place between calls. Returns the
/// maximum over all input elements of
///     |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                         std::vector<Tensor<double>>& inputs,
                         const GradCheckOptions& opt = {}) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor<double> out = f(inputs);
    if (out.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite function value");
    backward(out);

    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    double max_rel = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        auto& vals = inputs[t].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double x0 = vals[i];
            const double h = opt.eps * std::max(1.0, std::abs(x0));
            vals[i] = x0 + h;
            const double fp = f(inputs).item();
            vals[i] = x0 - h;
            const double fm = f(inputs).item();
            vals[i] = x0;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite value during perturbation");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i] * opt.corrupt_factor;
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace medctx
