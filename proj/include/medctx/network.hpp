#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "medctx/masking.hpp"
#include "medctx/ops.hpp"
#include "medctx/rng.hpp"
#include "medctx/tensor.hpp"

namespace medctx {

// A small 3D encoder-decoder segmentation network. A strided patch-embedding
// convolution produces the token map, convolutional stages downsample it,
// and the decoder upsamples back with channel-concatenated skip connections,
// ending in per-voxel class logits at the input resolution. Masking can be
// applied to the token map (default) or to the raw voxels.

inline constexpr double kInstanceNormEps = 1e-5;

struct NetConfig {
    int64_t in_channels = 1;
    int64_t num_classes = 4;
    std::array<int64_t, 3> patch = {4, 4, 4}; // (P1, P2, P3) for (H, W, D)
    int64_t base_width = 8;
    int64_t depth = 2; // number of down/up stages
    uint64_t seed = 0;

    int64_t width(int64_t stage) const { return base_width << stage; }

    void validate() const {
        if (in_channels < 1) throw ConfigError("net: in_channels must be >= 1");
        if (num_classes < 2) throw ConfigError("net: num_classes must be >= 2");
        if (base_width < 1) throw ConfigError("net: base_width must be >= 1");
        if (depth < 1) throw ConfigError("net: depth must be >= 1");
        if (patch[0] != patch[1] || patch[1] != patch[2])
            throw ConfigError("net: patch extents must be equal");
        int64_t p = patch[0];
        if (p < 1 || (p & (p - 1)) != 0)
            throw ConfigError("net: patch extent must be a power of two");
    }

    /// Input extents must be divisible by patch * 2^depth.
    void validate_extents(int64_t d, int64_t h, int64_t w) const {
        const int64_t unit0 = patch[2] << depth; // depth axis uses P3
        const int64_t unit1 = patch[0] << depth;
        const int64_t unit2 = patch[1] << depth;
        if (d % unit0 != 0 || h % unit1 != 0 || w % unit2 != 0)
            throw ShapeError("net: input extents (" + std::to_string(d) + "," + std::to_string(h) +
                             "," + std::to_string(w) + ") must be divisible by patch * 2^depth");
    }
};

/// Named learnable arrays with deterministic, insertion-stable ordering.
/// Student and teacher sets share identical names and shapes.
template <class T>
class ParameterSet {
public:
    void add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ContractError("ParameterSet: duplicate name " + name);
        index_[name] = tensors_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParameterSet: unknown name " + name);
        return tensors_[it->second];
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParameterSet: unknown name " + name);
        return tensors_[it->second];
    }

    size_t size() const { return tensors_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor<T>& tensor(size_t i) { return tensors_[i]; }
    const Tensor<T>& tensor(size_t i) const { return tensors_[i]; }
    const std::vector<std::string>& names() const { return names_; }

    int64_t count_params() const {
        int64_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

    /// Deep copy of the values as fresh leaves.
    ParameterSet clone(bool requires_grad) const {
        ParameterSet out;
        for (size_t i = 0; i < tensors_.size(); ++i)
            out.add(names_[i], Tensor<T>::from(tensors_[i].shape(),
                                               tensors_[i].values(), requires_grad));
        return out;
    }

    template <class U>
    ParameterSet<U> cast(bool requires_grad) const {
        ParameterSet<U> out;
        for (size_t i = 0; i < tensors_.size(); ++i) {
            std::vector<U> vals(tensors_[i].values().begin(), tensors_[i].values().end());
            out.add(names_[i], Tensor<U>::from(tensors_[i].shape(), std::move(vals), requires_grad));
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

enum class MaskSpace { tokens, voxels };

namespace detail {

template <class T>
void add_conv(ParameterSet<T>& p, Rng& rng, const std::string& name, int64_t cout, int64_t cin,
              int64_t k) {
    const int64_t fan_in = cin * k * k * k;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<T> w(static_cast<size_t>(cout * fan_in));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    p.add(name + ".weight", Tensor<T>::from({cout, cin, k, k, k}, std::move(w)));
    p.add(name + ".bias", Tensor<T>::zeros({cout}));
}

template <class T>
void add_norm(ParameterSet<T>& p, const std::string& name, int64_t c) {
    p.add(name + ".gain", Tensor<T>::filled({c}, T(1)));
    p.add(name + ".shift", Tensor<T>::zeros({c}));
}

} // namespace detail

/// Build the student parameter set: fan-in-scaled uniform init for conv
/// weights, zero biases, unit gains, and a N(0, 0.02^2) mask token. The
/// teacher starts as a value copy of this set.
template <class T = float>
ParameterSet<T> build(const NetConfig& cfg) {
    cfg.validate();
    ParameterSet<T> p;
    Rng rng(derive_seed(cfg.seed, "init"));

    detail::add_conv(p, rng, "patch_embed", cfg.base_width, cfg.in_channels, cfg.patch[0]);
    {
        std::vector<T> mt(static_cast<size_t>(cfg.base_width));
        for (auto& v : mt) v = static_cast<T>(rng.normal(0.0, 0.02));
        p.add("mask_token", Tensor<T>::from({cfg.base_width}, std::move(mt)));
        p.add("mask_value", Tensor<T>::zeros({1}));
    }
    for (int64_t s = 0; s < cfg.depth; ++s) {
        const std::string enc = "enc" + std::to_string(s);
        detail::add_conv(p, rng, enc + ".conv", cfg.width(s), cfg.width(s), 3);
        detail::add_norm(p, enc + ".norm", cfg.width(s));
        detail::add_conv(p, rng, "down" + std::to_string(s), cfg.width(s + 1), cfg.width(s), 2);
    }
    detail::add_conv(p, rng, "bottleneck.conv", cfg.width(cfg.depth), cfg.width(cfg.depth), 3);
    detail::add_norm(p, "bottleneck.norm", cfg.width(cfg.depth));
    for (int64_t s = cfg.depth - 1; s >= 0; --s) {
        const std::string dec = "dec" + std::to_string(s);
        detail::add_conv(p, rng, dec + ".conv", cfg.width(s), cfg.width(s + 1) + cfg.width(s), 3);
        detail::add_norm(p, dec + ".norm", cfg.width(s));
    }
    // Head: one x2 upsample per halving of the patch extent; every level but
    // the last is followed by a 3^3 refinement block, the last by the 1^3
    // classifier.
    int64_t levels = 0;
    for (int64_t q = cfg.patch[0]; q > 1; q >>= 1) ++levels;
    for (int64_t l = 0; l + 1 < levels; ++l) {
        const std::string ref = "head.refine" + std::to_string(l);
        detail::add_conv(p, rng, ref + ".conv", cfg.base_width, cfg.base_width, 3);
        detail::add_norm(p, ref + ".norm", cfg.base_width);
    }
    detail::add_conv(p, rng, "head.classify", cfg.num_classes, cfg.base_width, 1);

    for (size_t i = 0; i < p.size(); ++i) p.tensor(i).set_requires_grad(true);
    return p;
}

/// Forward pass to voxel-wise class logits [B, C, D, H, W]. When `grid` is
/// given, masking happens right after patch embedding (token space) or on the
/// raw voxels, depending on `space`; without a grid the mask parameters do
/// not participate at all.
template <class T>
Tensor<T> forward(const NetConfig& cfg, const ParameterSet<T>& p, const Tensor<T>& volume,
                  const MaskGrid* grid = nullptr, MaskSpace space = MaskSpace::tokens) {
    detail::require_rank(volume, 5, "forward");
    if (volume.extent(1) != cfg.in_channels)
        throw ShapeError("forward: expected " + std::to_string(cfg.in_channels) + " input channels");
    const int64_t D = volume.extent(2), H = volume.extent(3), W = volume.extent(4);
    cfg.validate_extents(D, H, W);
    const T eps = static_cast<T>(kInstanceNormEps);

    Tensor<T> x = volume;
    if (grid && space == MaskSpace::voxels)
        x = mask_voxels(x, *grid, p.at("mask_value"));

    x = conv3d(x, p.at("patch_embed.weight"), p.at("patch_embed.bias"), cfg.patch[0], 0);
    if (grid && space == MaskSpace::tokens) {
        const std::array<int64_t, 3> spatial = {x.extent(2), x.extent(3), x.extent(4)};
        if (grid->depth_tiles != spatial[0] || grid->rows != spatial[1] || grid->cols != spatial[2])
            throw ShapeError("forward: mask grid does not match the token map");
        Tensor<T> tok = to_tokens(x);
        tok = apply_mask(tok, *grid, p.at("mask_token"));
        x = from_tokens(tok, spatial);
    }

    auto block = [&](const Tensor<T>& in, const std::string& name) {
        Tensor<T> h = conv3d(in, p.at(name + ".conv.weight"), p.at(name + ".conv.bias"), 1, 1);
        h = instance_norm(h, p.at(name + ".norm.gain"), p.at(name + ".norm.shift"), eps);
        return relu(h);
    };

    std::vector<Tensor<T>> skips;
    for (int64_t s = 0; s < cfg.depth; ++s) {
        x = block(x, "enc" + std::to_string(s));
        skips.push_back(x);
        const std::string down = "down" + std::to_string(s);
        x = conv3d(x, p.at(down + ".weight"), p.at(down + ".bias"), 2, 0);
    }
    x = block(x, "bottleneck");
    for (int64_t s = cfg.depth - 1; s >= 0; --s) {
        x = upsample_nearest3d(x, 2);
        x = concat_channel(x, skips[static_cast<size_t>(s)]);
        x = block(x, "dec" + std::to_string(s));
    }

    int64_t levels = 0;
    for (int64_t q = cfg.patch[0]; q > 1; q >>= 1) ++levels;
    for (int64_t l = 0; l < levels; ++l) {
        x = upsample_nearest3d(x, 2);
        if (l + 1 < levels) x = block(x, "head.refine" + std::to_string(l));
    }
    return conv3d(x, p.at("head.classify.weight"), p.at("head.classify.bias"), 1, 0);
}

} // namespace medctx
