#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "medctx/data.hpp"
#include "medctx/io.hpp"
#include "medctx/losses.hpp"
#include "medctx/masking.hpp"
#include "medctx/network.hpp"
#include "medctx/optim.hpp"

namespace medctx {

// Joint training orchestration: per step, a fresh mask is sampled, the
// student sees the original and the masked view, the teacher sees only the
// original under no gradients, the combined loss updates {student, mask
// embeddings} with AdamW, and the teacher follows the student by EMA with a
// cosine momentum schedule.

struct TrainConfig {
    int64_t steps = 200;
    int64_t batch = 1;
    double lr = 1e-2;
    double weight_decay = 3e-5;
    double mask_ratio = 0.4;
    double lambda0 = 0.996;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 42;
    int64_t eval_every = 0; // 0 = no periodic eval
    int64_t halt_at = 0;    // stop after this step (0 = run to `steps`); the
                            // momentum schedule stays anchored at `steps`
    bool augment = true;
    double augment_intensity_sigma = 50.0;
    double hu_lo = -1000.0;
    double hu_hi = 1000.0;
    bool exact_count_mask = false;
    bool voxel_space_mask = false;
    bool decay_mask_embeddings = false;
    bool use_teacher = true; // false: no distillation (consistency disabled)

    void validate() const {
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
        if (lambda0 < 0.0 || lambda0 > 1.0) throw ConfigError("train: lambda0 must lie in [0, 1]");
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw ConfigError("train: mask_ratio must lie in [0, 1]");
        if (halt_at < 0) throw ConfigError("train: halt_at must be >= 0");
    }
};

/// Everything needed to continue a run: both parameter sets, optimizer
/// moments, the step counter, and the root seed (all per-step randomness is
/// derived from the root seed and the step index, so this is the complete
/// generator state).
struct CheckpointBundle {
    NetConfig net;
    ParameterSet<float> student;
    ParameterSet<float> teacher;
    AdamWState<float> opt;
    int64_t step = 0;
    uint64_t root_seed = 0;
};

/// Student and teacher start from identical weights.
inline CheckpointBundle init_bundle(const NetConfig& net, uint64_t root_seed) {
    CheckpointBundle b;
    b.net = net;
    b.student = build<float>(net);
    b.teacher = b.student.clone(false);
    b.opt = AdamWState<float>::init(b.student);
    b.root_seed = root_seed;
    return b;
}

struct StepMetrics {
    int64_t step = 0;
    double loss_total = 0.0;
    double loss_sup = 0.0;
    double loss_msl = 0.0;
    double loss_cl = 0.0; // contribution beta * consistency
    double lambda = 0.0;
    double lr = 0.0;
};

namespace detail {

/// Weight decay policy: decay convolution weights only; biases, norm affine
/// parameters, and (by default) the learnable mask embeddings are exempt.
inline std::function<bool(const std::string&)> decay_filter(bool decay_mask_embeddings) {
    return [decay_mask_embeddings](const std::string& name) {
        if (name == "mask_token" || name == "mask_value") return decay_mask_embeddings;
        return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    };
}

inline void audit_update_targets(const ParameterSet<float>& student,
                                 const AdamWState<float>& opt) {
    // The optimizer must cover exactly the student set (network weights plus
    // mask embeddings); the teacher is never updated by gradients.
    if (opt.m.size() != student.size())
        throw ContractError("trainer: optimizer state does not cover the student parameters");
    for (size_t i = 0; i < student.size(); ++i)
        if (opt.m[i].size() != student.tensor(i).values().size())
            throw ContractError("trainer: optimizer moment mismatch for " + student.name(i));
    if (!student.has("mask_token") || !student.has("mask_value"))
        throw ContractError("trainer: mask embeddings missing from the update set");
}

} // namespace detail

template <class T>
Tensor<T> batch_to_tensor(const std::vector<VolumeSample>& batch) {
    const int64_t B = static_cast<int64_t>(batch.size());
    const auto& e = batch[0].extents;
    std::vector<T> data;
    data.reserve(static_cast<size_t>(B * batch[0].numel()));
    for (const auto& s : batch) {
        if (s.extents != e) throw ShapeError("batch: sample extents differ");
        data.insert(data.end(), s.intensity.begin(), s.intensity.end());
    }
    return Tensor<T>::from({B, 1, e[0], e[1], e[2]}, std::move(data));
}

template <class T>
Tensor<T> batch_to_onehot(const std::vector<VolumeSample>& batch, int64_t num_classes) {
    const int64_t B = static_cast<int64_t>(batch.size());
    const auto& e = batch[0].extents;
    const int64_t V = batch[0].numel();
    std::vector<T> data(static_cast<size_t>(B * num_classes * V), T(0));
    for (int64_t b = 0; b < B; ++b) {
        const auto& labels = batch[static_cast<size_t>(b)].labels;
        for (int64_t i = 0; i < V; ++i) {
            const uint8_t c = labels[static_cast<size_t>(i)];
            if (c >= num_classes)
                throw ContractError("batch: label " + std::to_string(c) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
            data[static_cast<size_t>((b * num_classes + c) * V + i)] = T(1);
        }
    }
    return Tensor<T>::from({B, num_classes, e[0], e[1], e[2]}, std::move(data));
}

/// One optimization step over a prepared (normalized, augmented) batch.
/// `total_steps` anchors the cosine momentum schedule.
inline StepMetrics train_step(CheckpointBundle& bundle, const std::vector<VolumeSample>& batch,
                              const TrainConfig& cfg, const LossConfig& loss_cfg,
                              int64_t total_steps) {
    if (batch.empty()) throw ContractError("train_step: batch must be non-empty");
    detail::audit_update_targets(bundle.student, bundle.opt);

    const int64_t step = bundle.step; // 0-based during the step, logged 1-based
    const auto& e = batch[0].extents;
    Tensor<float> x = batch_to_tensor<float>(batch);
    Tensor<float> y = batch_to_onehot<float>(batch, bundle.net.num_classes);

    MaskSpec mask_spec;
    mask_spec.ratio = cfg.mask_ratio;
    mask_spec.patch = bundle.net.patch;
    mask_spec.seed = derive_seed(bundle.root_seed, "mask", static_cast<uint64_t>(step));
    mask_spec.exact_count = cfg.exact_count_mask;
    const MaskGrid grid = sample_mask(mask_spec, e[1], e[2], e[0]);
    const MaskSpace space = cfg.voxel_space_mask ? MaskSpace::voxels : MaskSpace::tokens;

    LossConfig lc = loss_cfg;
    if (!cfg.use_teacher) lc.include_cl = false;
    const bool need_masked = lc.include_msl || lc.include_cl;

    bundle.student.zero_grad();
    LossBreakdown<float> loss;
    try {
        Tensor<float> f_s = forward(bundle.net, bundle.student, x);
        Tensor<float> f_s_masked =
            need_masked ? forward(bundle.net, bundle.student, x, &grid, space) : Tensor<float>();
        Tensor<float> f_t =
            lc.include_cl ? forward(bundle.net, bundle.teacher, x) : Tensor<float>();
        loss = total_loss(y, f_s, f_s_masked, f_t, lc);
    } catch (const NumericError& e) {
        throw TrainingError("train_step: non-finite values at step " + std::to_string(step + 1) +
                            ": " + e.what());
    }
    const double total = static_cast<double>(loss.total.item());
    if (!std::isfinite(total))
        throw TrainingError("train_step: non-finite loss at step " + std::to_string(step + 1) +
                            " (sup=" + std::to_string(loss.supervised) +
                            ", msl=" + std::to_string(loss.masked_student) +
                            ", cl=" + std::to_string(loss.consistency_term) + ")");
    backward(loss.total);

    AdamWConfig adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    adamw_step(bundle.student, bundle.opt, adam, detail::decay_filter(cfg.decay_mask_embeddings));

    const double lambda = cosine_lambda(std::min(step + 1, total_steps), total_steps, cfg.lambda0);
    ema_update(bundle.teacher, bundle.student, lambda);

    bundle.step = step + 1;
    StepMetrics m;
    m.step = bundle.step;
    m.loss_total = total;
    m.loss_sup = loss.supervised;
    m.loss_msl = loss.masked_student;
    m.loss_cl = lc.include_cl ? lc.beta * loss.consistency_term : 0.0;
    m.lambda = lambda;
    m.lr = cfg.lr;
    return m;
}

/// Argmax class labels from a forward pass with the chosen weights; ties
/// resolve to the lowest class index.
inline std::vector<uint8_t> infer(const CheckpointBundle& bundle, const VolumeSample& sample,
                                  bool use_teacher) {
    std::vector<VolumeSample> batch{sample};
    Tensor<float> x = batch_to_tensor<float>(batch);
    const ParameterSet<float>& params = use_teacher ? bundle.teacher : bundle.student;
    Tensor<float> logits = forward(bundle.net, params, x);
    const int64_t C = logits.extent(1);
    const int64_t V = logits.numel() / C;
    std::vector<uint8_t> labels(static_cast<size_t>(V));
    const auto& lv = logits.values();
    for (int64_t i = 0; i < V; ++i) {
        int best = 0;
        float best_v = lv[static_cast<size_t>(i)];
        for (int64_t c = 1; c < C; ++c) {
            const float v = lv[static_cast<size_t>(c * V + i)];
            if (v > best_v) {
                best_v = v;
                best = static_cast<int>(c);
            }
        }
        labels[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    }
    return labels;
}

// ---------------------------------------------------------------------------
// MCTX checkpoint format
//   magic "MCTX", u32 version=1, config block (u32 length, then net config,
//   step counter and root seed), u32 array count, then length-prefixed named
//   arrays: u32 name length, name bytes, u8 dtype (0=f32), u8 rank,
//   u32 extents[rank], little-endian payload.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kMctxVersion = 1;

namespace detail {

inline void write_named_array(std::ostream& os, const std::string& name, const Shape& shape,
                              const std::vector<float>& data) {
    write_string(os, name);
    write_pod<uint8_t>(os, 0);
    write_pod<uint8_t>(os, static_cast<uint8_t>(shape.size()));
    for (int64_t e : shape) write_pod<uint32_t>(os, static_cast<uint32_t>(e));
    write_bytes(os, data.data(), data.size() * sizeof(float));
}

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline NamedArray read_named_array(std::istream& is) {
    NamedArray a;
    a.name = read_string(is);
    const uint8_t dtype = read_pod<uint8_t>(is);
    if (dtype != 0) throw FormatError("MCTX: unsupported array dtype");
    const uint8_t rank = read_pod<uint8_t>(is);
    if (rank == 0 || rank > 8) throw FormatError("MCTX: array rank out of range");
    int64_t n = 1;
    for (uint8_t r = 0; r < rank; ++r) {
        const uint32_t e = read_pod<uint32_t>(is);
        if (e == 0) throw FormatError("MCTX: zero extent");
        a.shape.push_back(static_cast<int64_t>(e));
        n *= e;
    }
    a.data.resize(static_cast<size_t>(n));
    read_bytes(is, a.data.data(), static_cast<size_t>(n) * sizeof(float));
    return a;
}

} // namespace detail

inline void save_checkpoint(const CheckpointBundle& b, const std::string& path) {
    auto os = open_out(path);
    write_bytes(os, "MCTX", 4);
    write_pod<uint32_t>(os, kMctxVersion);

    // Config block, length-prefixed so future versions can extend it.
    std::ostringstream cfg;
    write_pod<int32_t>(cfg, static_cast<int32_t>(b.net.in_channels));
    write_pod<int32_t>(cfg, static_cast<int32_t>(b.net.num_classes));
    for (int64_t p : b.net.patch) write_pod<int32_t>(cfg, static_cast<int32_t>(p));
    write_pod<int32_t>(cfg, static_cast<int32_t>(b.net.base_width));
    write_pod<int32_t>(cfg, static_cast<int32_t>(b.net.depth));
    write_pod<uint64_t>(cfg, b.net.seed);
    write_pod<int64_t>(cfg, b.step);
    write_pod<uint64_t>(cfg, b.root_seed);
    write_pod<int64_t>(cfg, b.opt.t);
    const std::string cfg_bytes = cfg.str();
    write_pod<uint32_t>(os, static_cast<uint32_t>(cfg_bytes.size()));
    write_bytes(os, cfg_bytes.data(), cfg_bytes.size());

    const uint32_t count = static_cast<uint32_t>(4 * b.student.size());
    write_pod<uint32_t>(os, count);
    for (size_t i = 0; i < b.student.size(); ++i) {
        const auto& name = b.student.name(i);
        detail::write_named_array(os, "s/" + name, b.student.tensor(i).shape(),
                                  b.student.tensor(i).values());
        detail::write_named_array(os, "t/" + name, b.teacher.tensor(i).shape(),
                                  b.teacher.tensor(i).values());
        detail::write_named_array(os, "m/" + name, b.student.tensor(i).shape(), b.opt.m[i]);
        detail::write_named_array(os, "v/" + name, b.student.tensor(i).shape(), b.opt.v[i]);
    }
}

inline CheckpointBundle load_checkpoint(const std::string& path) {
    auto is = open_in(path);
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "MCTX") throw FormatError("MCTX: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kMctxVersion)
        throw FormatError("MCTX: unsupported version " + std::to_string(version));

    const uint32_t cfg_len = read_pod<uint32_t>(is);
    std::string cfg_bytes(cfg_len, '\0');
    read_bytes(is, cfg_bytes.data(), cfg_len);
    std::istringstream cfg(cfg_bytes);
    CheckpointBundle b;
    b.net.in_channels = read_pod<int32_t>(cfg);
    b.net.num_classes = read_pod<int32_t>(cfg);
    for (auto& p : b.net.patch) p = read_pod<int32_t>(cfg);
    b.net.base_width = read_pod<int32_t>(cfg);
    b.net.depth = read_pod<int32_t>(cfg);
    b.net.seed = read_pod<uint64_t>(cfg);
    b.step = read_pod<int64_t>(cfg);
    b.root_seed = read_pod<uint64_t>(cfg);
    const int64_t opt_t = read_pod<int64_t>(cfg);
    b.net.validate();

    const uint32_t count = read_pod<uint32_t>(is);
    if (count == 0 || count % 4 != 0) throw FormatError("MCTX: unexpected array count");
    b.opt.t = opt_t;
    for (uint32_t i = 0; i < count; ++i) {
        detail::NamedArray a = detail::read_named_array(is);
        if (a.name.size() < 3 || a.name[1] != '/') throw FormatError("MCTX: bad array name " + a.name);
        const std::string name = a.name.substr(2);
        switch (a.name[0]) {
            case 's':
                b.student.add(name, Tensor<float>::from(a.shape, std::move(a.data), true));
                break;
            case 't':
                b.teacher.add(name, Tensor<float>::from(a.shape, std::move(a.data), false));
                break;
            case 'm':
                b.opt.m.push_back(std::move(a.data));
                break;
            case 'v':
                b.opt.v.push_back(std::move(a.data));
                break;
            default:
                throw FormatError("MCTX: unknown array prefix in " + a.name);
        }
    }
    if (b.student.size() != b.teacher.size() || b.opt.m.size() != b.student.size() ||
        b.opt.v.size() != b.student.size())
        throw FormatError("MCTX: inconsistent array groups");
    detail::audit_update_targets(b.student, b.opt);
    return b;
}

/// metrics.csv header and row formatting; fixed-precision so identical runs
/// produce byte-identical logs.
inline std::string metrics_csv_header() {
    return "step,loss_total,loss_sup,loss_msl,loss_cl,lambda,lr\n";
}

inline std::string metrics_csv_row(const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.12g,%.9g\n",
                  static_cast<long long>(m.step), m.loss_total, m.loss_sup, m.loss_msl, m.loss_cl,
                  m.lambda, m.lr);
    return buf;
}

} // namespace medctx
