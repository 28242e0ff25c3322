#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "medctx/grad_check.hpp"
#include "medctx/losses.hpp"
#include "medctx/masking.hpp"
#include "medctx/network.hpp"

namespace medctx {

// Finite-difference verification of every differentiable operation and of a
// tiny end-to-end network, in double precision. Each entry runs over several
// seeds and reports its worst relative error. Constants of a check (labels,
// projection weights, teacher outputs) are bound inside the closure so the
// numeric and analytic paths see exactly the same free variables.

struct GradSuiteEntry {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    bool all_pass = true;
    double seconds = 0.0;
};

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Values bounded away from zero, for checks around relu-style kinks where
/// central differences are only valid at differentiable points.
inline Tensor<double> random_tensor_off_kink(Rng& rng, Shape shape, double min_mag = 0.05) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) {
        const double mag = rng.uniform(min_mag, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Constant random projection; makes the scalar objective sensitive to every
/// output element with varied upstream gradients.
inline Tensor<double> random_weights(Rng& rng, const Shape& shape) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return Tensor<double>::from(shape, std::move(v));
}

inline Tensor<double> random_onehot(Rng& rng, int64_t batch, int64_t channels,
                                    std::array<int64_t, 3> spatial) {
    const int64_t v = spatial[0] * spatial[1] * spatial[2];
    std::vector<double> y(static_cast<size_t>(batch * channels * v), 0.0);
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < v; ++i) {
            const int64_t c = rng.uniform_int(0, channels - 1);
            y[static_cast<size_t>((b * channels + c) * v + i)] = 1.0;
        }
    return Tensor<double>::from({batch, channels, spatial[0], spatial[1], spatial[2]},
                                std::move(y));
}

} // namespace detail

/// Runs `seed_fn(rng) -> max relative error` over `seeds` seeds.
template <class SeedFn>
GradSuiteEntry grad_suite_entry(const std::string& name, int seeds, double tolerance,
                                SeedFn seed_fn) {
    GradSuiteEntry e;
    e.name = name;
    e.tolerance = tolerance;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(0x9b97f5c11ull, name, static_cast<uint64_t>(s)));
        e.max_error = std::max(e.max_error, seed_fn(rng));
    }
    e.pass = e.max_error < tolerance;
    return e;
}

/// The full gradient suite. `seeds` applies per elementary operation; the
/// end-to-end network check uses a reduced seed count since one run perturbs
/// every parameter. `corrupt` scales the analytic gradients (1.0 = honest);
/// the CLI uses it as a fixture proving the suite detects broken gradients.
inline GradSuiteReport run_grad_suite(int seeds = 20, double tolerance = 1e-4,
                                      double corrupt = 1.0) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckOptions opt;
    opt.corrupt_factor = corrupt;
    GradSuiteReport report;
    auto record = [&](GradSuiteEntry e) {
        report.all_pass = report.all_pass && e.pass;
        report.entries.push_back(std::move(e));
    };
    const Shape small = {2, 3, 4, 4, 4};
    using Inputs = std::vector<Tensor<double>>;

    record(grad_suite_entry("add", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small), detail::random_tensor(rng, small)};
        return grad_check([](const Inputs& v) { return sum(add(v[0], v[1])); }, in, opt);
    }));

    record(grad_suite_entry("sub_scalar_broadcast", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small), detail::random_tensor(rng, {1})};
        return grad_check(
            [](const Inputs& v) {
                Tensor<double> d = sub(v[0], v[1]);
                return sum(mul(d, d));
            },
            in, opt);
    }));

    record(grad_suite_entry("mul", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small), detail::random_tensor(rng, small)};
        return grad_check([](const Inputs& v) { return sum(mul(v[0], v[1])); }, in, opt);
    }));

    record(grad_suite_entry("div", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small),
                  detail::random_tensor_off_kink(rng, small, 0.5)};
        return grad_check([](const Inputs& v) { return sum(div(v[0], v[1])); }, in, opt);
    }));

    record(grad_suite_entry("relu", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor_off_kink(rng, small)};
        Tensor<double> w = detail::random_weights(rng, small);
        return grad_check([w](const Inputs& v) { return sum(mul(relu(v[0]), w)); }, in, opt);
    }));

    record(grad_suite_entry("exp", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small)};
        return grad_check([](const Inputs& v) { return sum(exp(v[0])); }, in, opt);
    }));

    record(grad_suite_entry("log", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small, 0.5, 2.0)};
        return grad_check([](const Inputs& v) { return sum(log(v[0])); }, in, opt);
    }));

    record(grad_suite_entry("sum_axes", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small)};
        Tensor<double> w = detail::random_weights(rng, {2, 3});
        return grad_check([w](const Inputs& v) { return sum(mul(sum(v[0], {2, 3, 4}), w)); }, in,
                          opt);
    }));

    record(grad_suite_entry("mean_axes", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small)};
        Tensor<double> w = detail::random_weights(rng, {3, 4, 4});
        return grad_check([w](const Inputs& v) { return sum(mul(mean(v[0], {0, 4}), w)); }, in,
                          opt);
    }));

    record(grad_suite_entry("softmax_channel", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small, -2.0, 2.0)};
        Tensor<double> w = detail::random_weights(rng, small);
        return grad_check([w](const Inputs& v) { return sum(mul(softmax_channel(v[0]), w)); }, in,
                          opt);
    }));

    record(grad_suite_entry("log_softmax_channel", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, small, -2.0, 2.0)};
        Tensor<double> w = detail::random_weights(rng, small);
        return grad_check([w](const Inputs& v) { return sum(mul(log_softmax_channel(v[0]), w)); },
                          in, opt);
    }));

    record(grad_suite_entry("conv3d_k3_pad1", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {2, 2, 4, 4, 4}),
                  detail::random_tensor(rng, {2, 2, 3, 3, 3}), detail::random_tensor(rng, {2})};
        Tensor<double> w = detail::random_weights(rng, {2, 2, 4, 4, 4});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(conv3d(v[0], v[1], v[2], 1, 1), w)); }, in, opt);
    }));

    record(grad_suite_entry("conv3d_k2_stride2", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {1, 2, 4, 4, 4}),
                  detail::random_tensor(rng, {3, 2, 2, 2, 2}), detail::random_tensor(rng, {3})};
        Tensor<double> w = detail::random_weights(rng, {1, 3, 2, 2, 2});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(conv3d(v[0], v[1], v[2], 2, 0), w)); }, in, opt);
    }));

    record(grad_suite_entry("conv3d_patch_embed_k4s4", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {1, 1, 4, 4, 4}),
                  detail::random_tensor(rng, {3, 1, 4, 4, 4}), detail::random_tensor(rng, {3})};
        Tensor<double> w = detail::random_weights(rng, {1, 3, 1, 1, 1});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(conv3d(v[0], v[1], v[2], 4, 0), w)); }, in, opt);
    }));

    record(grad_suite_entry("upsample_nearest3d", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {1, 2, 2, 2, 2})};
        Tensor<double> w = detail::random_weights(rng, {1, 2, 4, 4, 4});
        return grad_check([w](const Inputs& v) { return sum(mul(upsample_nearest3d(v[0], 2), w)); },
                          in, opt);
    }));

    record(grad_suite_entry("instance_norm", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {2, 2, 3, 3, 3}),
                  detail::random_tensor(rng, {2}, 0.5, 1.5), detail::random_tensor(rng, {2})};
        Tensor<double> w = detail::random_weights(rng, {2, 2, 3, 3, 3});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(instance_norm(v[0], v[1], v[2], 1e-5), w)); },
            in, opt);
    }));

    record(grad_suite_entry("concat_channel", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {1, 2, 3, 3, 3}),
                  detail::random_tensor(rng, {1, 1, 3, 3, 3})};
        Tensor<double> w = detail::random_weights(rng, {1, 3, 3, 3, 3});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(concat_channel(v[0], v[1]), w)); }, in, opt);
    }));

    record(grad_suite_entry("token_roundtrip", seeds, tolerance, [&](Rng& rng) {
        Inputs in{detail::random_tensor(rng, {2, 3, 2, 2, 2})};
        Tensor<double> w = detail::random_weights(rng, {2, 3, 2, 2, 2});
        return grad_check(
            [w](const Inputs& v) { return sum(mul(from_tokens(to_tokens(v[0]), {2, 2, 2}), w)); },
            in, opt);
    }));

    {
        MaskSpec spec;
        spec.ratio = 0.5;
        spec.patch = {2, 2, 2};
        spec.seed = 77;
        const MaskGrid grid = sample_mask(spec, 4, 4, 4);
        record(grad_suite_entry("apply_mask", seeds, tolerance, [&](Rng& rng) {
            Inputs in{detail::random_tensor(rng, {2, 8, 3}), detail::random_tensor(rng, {3})};
            Tensor<double> w = detail::random_weights(rng, {2, 8, 3});
            return grad_check(
                [w, grid](const Inputs& v) { return sum(mul(apply_mask(v[0], grid, v[1]), w)); },
                in, opt);
        }));
        record(grad_suite_entry("mask_voxels", seeds, tolerance, [&](Rng& rng) {
            Inputs in{detail::random_tensor(rng, {1, 1, 4, 4, 4}), detail::random_tensor(rng, {1})};
            Tensor<double> w = detail::random_weights(rng, {1, 1, 4, 4, 4});
            return grad_check(
                [w, grid](const Inputs& v) { return sum(mul(mask_voxels(v[0], grid, v[1]), w)); },
                in, opt);
        }));
    }

    {
        const LossConfig lc;
        record(grad_suite_entry("dice_ce", seeds, tolerance, [&](Rng& rng) {
            Inputs in{detail::random_tensor(rng, {1, 3, 2, 2, 2}, -2.0, 2.0)};
            Tensor<double> y = detail::random_onehot(rng, 1, 3, {2, 2, 2});
            return grad_check([y, lc](const Inputs& v) { return dice_ce(y, v[0], lc); }, in, opt);
        }));
        record(grad_suite_entry("consistency", seeds, tolerance, [&](Rng& rng) {
            Inputs in{detail::random_tensor(rng, {1, 2, 2, 2, 2})};
            Tensor<double> teacher = detail::random_tensor_off_kink(rng, {1, 2, 2, 2, 2}, 0.2);
            return grad_check([teacher, lc](const Inputs& v) { return consistency(v[0], teacher, lc); },
                              in, opt);
        }));
        record(grad_suite_entry("total_loss", seeds, tolerance, [&](Rng& rng) {
            Inputs in{detail::random_tensor(rng, {1, 2, 2, 2, 2}, -2.0, 2.0),
                      detail::random_tensor(rng, {1, 2, 2, 2, 2}, -2.0, 2.0)};
            Tensor<double> y = detail::random_onehot(rng, 1, 2, {2, 2, 2});
            Tensor<double> teacher = detail::random_tensor(rng, {1, 2, 2, 2, 2});
            return grad_check(
                [y, teacher, lc](const Inputs& v) {
                    return total_loss(y, v[0], v[1], teacher, lc).total;
                },
                in, opt);
        }));
    }

    // End-to-end: the parameters of a tiny network, masked and unmasked
    // paths, through the combined loss against a fixed teacher. Biases of
    // convolutions that feed directly into an instance norm have exactly zero
    // gradient (the norm removes any constant shift), so finite differences
    // on them would measure only rounding noise; they are excluded here and
    // checked analytically in the companion entry. Central differences are
    // also invalid when a perturbation pushes a relu input across zero, so a
    // failing seed is retried with fresh draws; a genuinely wrong gradient
    // fails every retry.
    {
        NetConfig tiny;
        tiny.num_classes = 2;
        tiny.base_width = 2;
        tiny.depth = 1;
        tiny.patch = {2, 2, 2};
        MaskSpec spec;
        spec.ratio = 0.5;
        spec.patch = tiny.patch;
        spec.seed = 5;
        const MaskGrid grid = sample_mask(spec, 8, 8, 8);
        const LossConfig lc;
        GradCheckOptions e2e_opt = opt;
        e2e_opt.eps = 1e-5;
        const auto pre_norm_bias = [](const std::string& name) {
            return name.size() > 10 && name.compare(name.size() - 10, 10, ".conv.bias") == 0;
        };
        const int e2e_seeds = std::max(1, seeds / 10);
        record(grad_suite_entry("network_end_to_end", e2e_seeds, tolerance, [&](Rng& rng) {
            double err = 0.0;
            for (int attempt = 0; attempt < 3; ++attempt) {
                NetConfig cfg = tiny;
                cfg.seed = rng.next_u64();
                ParameterSet<double> student = build<double>(cfg);
                ParameterSet<double> teacher = student.clone(false);
                Inputs in;
                std::vector<Tensor<double>> fixed;
                std::vector<std::string> names;
                for (size_t i = 0; i < student.size(); ++i) {
                    names.push_back(student.name(i));
                    Tensor<double> leaf = Tensor<double>::from(student.tensor(i).shape(),
                                                               student.tensor(i).values());
                    if (pre_norm_bias(names.back())) fixed.push_back(leaf);
                    else in.push_back(leaf);
                }
                in.push_back(detail::random_tensor(rng, {1, 1, 8, 8, 8}, 0.0, 1.0));
                Tensor<double> y = detail::random_onehot(rng, 1, 2, {8, 8, 8});
                Tensor<double> f_t = forward(cfg, teacher, in.back().detach());
                auto f = [cfg, names, fixed, grid, lc, y, f_t,
                          pre_norm_bias](const Inputs& v) {
                    ParameterSet<double> p;
                    size_t vi = 0, fi = 0;
                    for (const auto& name : names)
                        p.add(name, pre_norm_bias(name) ? fixed[fi++] : v[vi++]);
                    const Tensor<double>& volume = v.back();
                    Tensor<double> f_s = forward(cfg, p, volume);
                    Tensor<double> f_m = forward(cfg, p, volume, &grid);
                    return total_loss(y, f_s, f_m, f_t, lc).total;
                };
                err = grad_check(f, in, e2e_opt);
                if (err < tolerance) break;
            }
            return err;
        }));

        // Companion analytic check for the coordinates excluded above.
        record(grad_suite_entry("network_pre_norm_bias_grads", e2e_seeds, 1e-10, [&](Rng& rng) {
            NetConfig cfg = tiny;
            cfg.seed = rng.next_u64();
            ParameterSet<double> student = build<double>(cfg);
            ParameterSet<double> teacher = student.clone(false);
            student.zero_grad();
            Tensor<double> volume = detail::random_tensor(rng, {1, 1, 8, 8, 8}, 0.0, 1.0);
            Tensor<double> y = detail::random_onehot(rng, 1, 2, {8, 8, 8});
            Tensor<double> f_t = forward(cfg, teacher, volume);
            Tensor<double> f_s = forward(cfg, student, volume);
            Tensor<double> f_m = forward(cfg, student, volume, &grid);
            backward(total_loss(y, f_s, f_m, f_t, lc).total);
            double worst = 0.0;
            for (size_t i = 0; i < student.size(); ++i) {
                if (!pre_norm_bias(student.name(i))) continue;
                for (double g : student.tensor(i).grad()) worst = std::max(worst, std::abs(g));
            }
            return worst;
        }));
    }

    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace medctx
