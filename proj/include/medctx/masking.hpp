#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "medctx/rng.hpp"
#include "medctx/tensor.hpp"

namespace medctx {

// Volumetric masking: Bernoulli patch masks constant along the depth axis,
// with masked positions replaced by a learnable embedding. A mask grid lives
// at patch resolution; cell (i, j) covers the full depth column, so a region
// masked in the first slice stays masked in every slice.

/// Parameters of the masking strategy. `patch` is (P1, P2, P3) in voxels for
/// the (H, W, D) axes and must tile the target volume exactly.
struct MaskSpec {
    double ratio = 0.4;
    std::array<int64_t, 3> patch = {4, 4, 4};
    uint64_t seed = 0;
    /// When set, exactly round(ratio * cells) cells are masked instead of
    /// per-cell independent Bernoulli draws (low-variance ablation mode).
    bool exact_count = false;
};

/// Boolean patch-grid mask of shape (H/P1, W/P2), broadcast over D/P3 depth
/// tiles. Token index n = (k*rows + i)*cols + j, depth-major.
struct MaskGrid {
    int64_t rows = 0;       // H / P1
    int64_t cols = 0;       // W / P2
    int64_t depth_tiles = 0; // D / P3
    std::vector<uint8_t> cells; // rows*cols entries, row-major

    bool masked(int64_t i, int64_t j) const {
        return cells[static_cast<size_t>(i * cols + j)] != 0;
    }
    bool masked_token(int64_t n) const {
        return cells[static_cast<size_t>(n % (rows * cols))] != 0;
    }
    int64_t token_count() const { return depth_tiles * rows * cols; }
    int64_t masked_cells() const {
        int64_t m = 0;
        for (uint8_t c : cells) m += c != 0;
        return m;
    }
    double masked_fraction() const {
        return cells.empty() ? 0.0 : static_cast<double>(masked_cells()) / static_cast<double>(cells.size());
    }
};

/// Draw a mask grid for a (H, W, D) volume. Each (i, j) cell is masked
/// independently with probability `ratio`; the draw is reproducible from
/// `spec.seed`.
inline MaskGrid sample_mask(const MaskSpec& spec, int64_t h, int64_t w, int64_t d) {
    if (spec.ratio < 0.0 || spec.ratio > 1.0)
        throw ContractError("sample_mask: ratio must lie in [0, 1]");
    for (int64_t p : spec.patch)
        if (p < 1) throw ContractError("sample_mask: patch extents must be positive");
    if (h % spec.patch[0] != 0 || w % spec.patch[1] != 0 || d % spec.patch[2] != 0)
        throw ShapeError("sample_mask: patch (" + std::to_string(spec.patch[0]) + "," +
                         std::to_string(spec.patch[1]) + "," + std::to_string(spec.patch[2]) +
                         ") does not tile volume (" + std::to_string(h) + "," + std::to_string(w) +
                         "," + std::to_string(d) + ")");
    MaskGrid g;
    g.rows = h / spec.patch[0];
    g.cols = w / spec.patch[1];
    g.depth_tiles = d / spec.patch[2];
    g.cells.assign(static_cast<size_t>(g.rows * g.cols), 0);
    Rng rng(spec.seed);
    if (spec.exact_count) {
        const int64_t total = g.rows * g.cols;
        int64_t want = static_cast<int64_t>(std::llround(spec.ratio * static_cast<double>(total)));
        std::vector<int64_t> order(static_cast<size_t>(total));
        for (int64_t i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
        for (int64_t i = total - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
        for (int64_t i = 0; i < want; ++i) g.cells[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    } else {
        for (auto& c : g.cells) c = rng.uniform() < spec.ratio ? 1 : 0;
    }
    return g;
}

/// Token-space masking: masked token positions take the learnable embedding,
/// unmasked positions pass through untouched. Gradient reaches `mask_token`
/// only through masked positions.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskGrid& grid, const Tensor<T>& mask_token) {
    if (tokens.rank() != 3)
        throw ShapeError("apply_mask: tokens must be [B, N, C], got " + shape_str(tokens.shape()));
    const int64_t B = tokens.extent(0), N = tokens.extent(1), C = tokens.extent(2);
    if (N != grid.token_count())
        throw ShapeError("apply_mask: token count " + std::to_string(N) +
                         " does not match grid token count " + std::to_string(grid.token_count()));
    if (mask_token.rank() != 1 || mask_token.extent(0) != C)
        throw ShapeError("apply_mask: mask token must be a length-C vector");

    Tensor<T> out = Tensor<T>::make_op(tokens.shape(), {tokens, mask_token});
    const T* x = tokens.values().data();
    const T* mt = mask_token.values().data();
    T* y = out.values().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n) {
            T* yr = y + (b * N + n) * C;
            if (grid.masked_token(n)) {
                for (int64_t c = 0; c < C; ++c) yr[c] = mt[c];
            } else {
                const T* xr = x + (b * N + n) * C;
                for (int64_t c = 0; c < C; ++c) yr[c] = xr[c];
            }
        }
    if (out.requires_grad()) {
        auto* xn = tokens.node().get();
        auto* tn = mask_token.node().get();
        MaskGrid g = grid;
        out.set_backprop([xn, tn, g, B, N, C](detail::Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (tn->requires_grad) tn->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t n = 0; n < N; ++n) {
                    const T* gr = self.grad.data() + (b * N + n) * C;
                    if (g.masked_token(n)) {
                        if (tn->requires_grad)
                            for (int64_t c = 0; c < C; ++c) tn->grad[static_cast<size_t>(c)] += gr[c];
                    } else if (xn->requires_grad) {
                        T* gx = xn->grad.data() + (b * N + n) * C;
                        for (int64_t c = 0; c < C; ++c) gx[c] += gr[c];
                    }
                }
        });
    }
    return out;
}

/// Voxel-space masking for CNN-style integration: every voxel of a masked
/// patch column (the full depth) takes the learnable scalar `mask_value`.
template <class T>
Tensor<T> mask_voxels(const Tensor<T>& volume, const MaskGrid& grid, const Tensor<T>& mask_value) {
    if (volume.rank() != 5 || volume.extent(1) != 1)
        throw ShapeError("mask_voxels: expected [B, 1, D, H, W], got " + shape_str(volume.shape()));
    if (mask_value.numel() != 1)
        throw ShapeError("mask_voxels: mask value must be a single learnable scalar");
    const int64_t B = volume.extent(0);
    const int64_t D = volume.extent(2), H = volume.extent(3), W = volume.extent(4);
    if (H % grid.rows != 0 || W % grid.cols != 0)
        throw ShapeError("mask_voxels: grid does not tile the volume");
    const int64_t p1 = H / grid.rows, p2 = W / grid.cols;

    Tensor<T> out = Tensor<T>::make_op(volume.shape(), {volume, mask_value});
    const T* x = volume.values().data();
    const T mv = mask_value.values()[0];
    T* y = out.values().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t z = 0; z < D; ++z)
            for (int64_t i = 0; i < H; ++i) {
                const int64_t row = (b * D + z) * H * W + i * W;
                const int64_t gi = i / p1;
                for (int64_t j = 0; j < W; ++j)
                    y[row + j] = grid.masked(gi, j / p2) ? mv : x[row + j];
            }
    if (out.requires_grad()) {
        auto* xn = volume.node().get();
        auto* mn = mask_value.node().get();
        MaskGrid g = grid;
        out.set_backprop([xn, mn, g, B, D, H, W, p1, p2](detail::Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (mn->requires_grad) mn->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t z = 0; z < D; ++z)
                    for (int64_t i = 0; i < H; ++i) {
                        const int64_t row = (b * D + z) * H * W + i * W;
                        const int64_t gi = i / p1;
                        for (int64_t j = 0; j < W; ++j) {
                            const T gv = self.grad[static_cast<size_t>(row + j)];
                            if (g.masked(gi, j / p2)) {
                                if (mn->requires_grad) mn->grad[0] += gv;
                            } else if (xn->requires_grad) {
                                xn->grad[static_cast<size_t>(row + j)] += gv;
                            }
                        }
                    }
        });
    }
    return out;
}

} // namespace medctx
