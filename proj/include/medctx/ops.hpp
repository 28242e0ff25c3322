#pragma once

#include <array>
#include <cmath>

#include "medctx/tensor.hpp"

namespace medctx {

// Network-level operations on [B, C, D, H, W] volumes (and [B, N, C] token
// stacks). All kernels are direct loops; at desk scale nothing needs im2col
// or FFT paths.

namespace detail {

template <class T>
void require_rank(const Tensor<T>& t, int64_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

template <class T>
void require_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.values())
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite input value");
}

} // namespace detail

/// Softmax over axis 1 (the channel axis), numerically stabilized by
/// max-subtraction. Works for any rank >= 2 input laid out [B, C, ...].
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& logits) {
    if (logits.rank() < 2)
        throw ShapeError("softmax_channel: rank >= 2 required, got " + shape_str(logits.shape()));
    const int64_t channels = logits.extent(1);
    if (channels < 2) throw ContractError("softmax_channel: needs at least 2 channels");
    detail::require_finite(logits, "softmax_channel");

    const int64_t batch = logits.extent(0);
    const int64_t inner = logits.numel() / (batch * channels);
    Tensor<T> out = Tensor<T>::make_op(logits.shape(), {logits});
    const auto& x = logits.values();
    auto& p = out.values();
    for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = b * channels * inner;
        for (int64_t i = 0; i < inner; ++i) {
            T mx = x[static_cast<size_t>(base + i)];
            for (int64_t c = 1; c < channels; ++c)
                mx = std::max(mx, x[static_cast<size_t>(base + c * inner + i)]);
            T denom = T(0);
            for (int64_t c = 0; c < channels; ++c) {
                T e = std::exp(x[static_cast<size_t>(base + c * inner + i)] - mx);
                p[static_cast<size_t>(base + c * inner + i)] = e;
                denom += e;
            }
            for (int64_t c = 0; c < channels; ++c)
                p[static_cast<size_t>(base + c * inner + i)] /= denom;
        }
    }
    if (out.requires_grad()) {
        auto* xn = logits.node().get();
        out.set_backprop([xn, batch, channels, inner](detail::Node<T>& self) {
            xn->ensure_grad();
            for (int64_t b = 0; b < batch; ++b) {
                const int64_t base = b * channels * inner;
                for (int64_t i = 0; i < inner; ++i) {
                    T dot = T(0);
                    for (int64_t c = 0; c < channels; ++c) {
                        size_t k = static_cast<size_t>(base + c * inner + i);
                        dot += self.grad[k] * self.value[k];
                    }
                    for (int64_t c = 0; c < channels; ++c) {
                        size_t k = static_cast<size_t>(base + c * inner + i);
                        xn->grad[k] += self.value[k] * (self.grad[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

/// log(softmax) over the channel axis, fused for stability; the cross-entropy
/// path uses this instead of log(softmax_channel(x)).
template <class T>
Tensor<T> log_softmax_channel(const Tensor<T>& logits) {
    if (logits.rank() < 2)
        throw ShapeError("log_softmax_channel: rank >= 2 required");
    const int64_t channels = logits.extent(1);
    if (channels < 2) throw ContractError("log_softmax_channel: needs at least 2 channels");
    detail::require_finite(logits, "log_softmax_channel");

    const int64_t batch = logits.extent(0);
    const int64_t inner = logits.numel() / (batch * channels);
    Tensor<T> out = Tensor<T>::make_op(logits.shape(), {logits});
    const auto& x = logits.values();
    auto& y = out.values();
    for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = b * channels * inner;
        for (int64_t i = 0; i < inner; ++i) {
            T mx = x[static_cast<size_t>(base + i)];
            for (int64_t c = 1; c < channels; ++c)
                mx = std::max(mx, x[static_cast<size_t>(base + c * inner + i)]);
            T denom = T(0);
            for (int64_t c = 0; c < channels; ++c)
                denom += std::exp(x[static_cast<size_t>(base + c * inner + i)] - mx);
            const T lse = mx + std::log(denom);
            for (int64_t c = 0; c < channels; ++c) {
                size_t k = static_cast<size_t>(base + c * inner + i);
                y[k] = x[k] - lse;
            }
        }
    }
    if (out.requires_grad()) {
        auto* xn = logits.node().get();
        out.set_backprop([xn, batch, channels, inner](detail::Node<T>& self) {
            xn->ensure_grad();
            for (int64_t b = 0; b < batch; ++b) {
                const int64_t base = b * channels * inner;
                for (int64_t i = 0; i < inner; ++i) {
                    T gsum = T(0);
                    for (int64_t c = 0; c < channels; ++c)
                        gsum += self.grad[static_cast<size_t>(base + c * inner + i)];
                    for (int64_t c = 0; c < channels; ++c) {
                        size_t k = static_cast<size_t>(base + c * inner + i);
                        xn->grad[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 3D convolution (direct cross-correlation)
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t conv_out_extent(int64_t e, int64_t k, int64_t stride, int64_t pad, const char* axis) {
    const int64_t span = e + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw ShapeError(std::string("conv3d: output extent along ") + axis +
                         " is not a positive integer (extent " + std::to_string(e) + ", kernel " +
                         std::to_string(k) + ", stride " + std::to_string(stride) + ", pad " +
                         std::to_string(pad) + ")");
    return span / stride + 1;
}

} // namespace detail

/// input [B, Cin, D, H, W], weight [Cout, Cin, k, k, k], bias [Cout].
/// Output extents (e + 2*pad - k)/stride + 1 must divide exactly.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, int64_t pad) {
    detail::require_rank(input, 5, "conv3d(input)");
    detail::require_rank(weight, 5, "conv3d(weight)");
    detail::require_rank(bias, 1, "conv3d(bias)");
    if (stride < 1) throw ContractError("conv3d: stride must be >= 1");
    if (pad < 0) throw ContractError("conv3d: pad must be >= 0");

    const int64_t B = input.extent(0), Cin = input.extent(1);
    const int64_t D = input.extent(2), H = input.extent(3), W = input.extent(4);
    const int64_t Cout = weight.extent(0), k = weight.extent(2);
    if (weight.extent(1) != Cin)
        throw ShapeError("conv3d: weight input channels " + std::to_string(weight.extent(1)) +
                         " do not match input channels " + std::to_string(Cin));
    if (weight.extent(3) != k || weight.extent(4) != k)
        throw ShapeError("conv3d: kernel must be cubic, got " + shape_str(weight.shape()));
    if (bias.extent(0) != Cout) throw ShapeError("conv3d: bias length must equal Cout");

    const int64_t Do = detail::conv_out_extent(D, k, stride, pad, "D");
    const int64_t Ho = detail::conv_out_extent(H, k, stride, pad, "H");
    const int64_t Wo = detail::conv_out_extent(W, k, stride, pad, "W");

    Tensor<T> out = Tensor<T>::make_op({B, Cout, Do, Ho, Wo}, {input, weight, bias});
    const T* x = input.values().data();
    const T* w = weight.values().data();
    const T* bs = bias.values().data();
    T* y = out.values().data();

    const int64_t in_c = D * H * W, in_z = H * W;
    const int64_t out_c = Do * Ho * Wo, out_z = Ho * Wo;
    const int64_t w_co = Cin * k * k * k, w_ci = k * k * k;

    for (int64_t b = 0; b < B; ++b) {
        const T* xb = x + b * Cin * in_c;
        T* yb = y + b * Cout * out_c;
        for (int64_t co = 0; co < Cout; ++co) {
            T* yc = yb + co * out_c;
            for (int64_t i = 0; i < out_c; ++i) yc[i] = bs[co];
            const T* wc = w + co * w_co;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const T* xc = xb + ci * in_c;
                const T* wci = wc + ci * w_ci;
                for (int64_t kz = 0; kz < k; ++kz)
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const T wv = wci[(kz * k + ky) * k + kx];
                            if (wv == T(0)) continue;
                            for (int64_t zo = 0; zo < Do; ++zo) {
                                const int64_t zi = zo * stride - pad + kz;
                                if (zi < 0 || zi >= D) continue;
                                for (int64_t yo = 0; yo < Ho; ++yo) {
                                    const int64_t yi = yo * stride - pad + ky;
                                    if (yi < 0 || yi >= H) continue;
                                    const T* xrow = xc + zi * in_z + yi * W;
                                    T* yrow = yc + zo * out_z + yo * Wo;
                                    const int64_t xi0 = kx - pad;
                                    // xo range keeping xi = xo*stride + xi0 inside [0, W)
                                    int64_t lo = xi0 < 0 ? (-xi0 + stride - 1) / stride : 0;
                                    int64_t hi = (W - 1 - xi0) / stride;
                                    if (hi > Wo - 1) hi = Wo - 1;
                                    for (int64_t xo = lo; xo <= hi; ++xo)
                                        yrow[xo] += wv * xrow[xo * stride + xi0];
                                }
                            }
                        }
            }
        }
    }

    if (out.requires_grad()) {
        auto* in_n = input.node().get();
        auto* w_n = weight.node().get();
        auto* b_n = bias.node().get();
        out.set_backprop([in_n, w_n, b_n, B, Cin, Cout, D, H, W, Do, Ho, Wo, k, stride,
                          pad](detail::Node<T>& self) {
            const int64_t in_c = D * H * W, in_z = H * W;
            const int64_t out_c = Do * Ho * Wo, out_z = Ho * Wo;
            const int64_t w_co = Cin * k * k * k, w_ci = k * k * k;
            const T* g = self.grad.data();
            const T* x = in_n->value.data();
            const T* w = w_n->value.data();
            const bool need_in = in_n->requires_grad;
            const bool need_w = w_n->requires_grad;
            const bool need_b = b_n->requires_grad;
            if (need_in) in_n->ensure_grad();
            if (need_w) w_n->ensure_grad();
            if (need_b) b_n->ensure_grad();
            if (need_b) {
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gc = g + (b * Cout + co) * out_c;
                        T acc = T(0);
                        for (int64_t i = 0; i < out_c; ++i) acc += gc[i];
                        b_n->grad[static_cast<size_t>(co)] += acc;
                    }
            }
            if (!need_in && !need_w) return;
            for (int64_t b = 0; b < B; ++b) {
                const T* xb = x + b * Cin * in_c;
                T* gxb = need_in ? in_n->grad.data() + b * Cin * in_c : nullptr;
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* gc = g + (b * Cout + co) * out_c;
                    const T* wc = w + co * w_co;
                    T* gwc = need_w ? w_n->grad.data() + co * w_co : nullptr;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const T* xc = xb + ci * in_c;
                        T* gxc = need_in ? gxb + ci * in_c : nullptr;
                        const T* wci = wc + ci * w_ci;
                        T* gwci = need_w ? gwc + ci * w_ci : nullptr;
                        for (int64_t kz = 0; kz < k; ++kz)
                            for (int64_t ky = 0; ky < k; ++ky)
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const T wv = wci[(kz * k + ky) * k + kx];
                                    T wg = T(0);
                                    for (int64_t zo = 0; zo < Do; ++zo) {
                                        const int64_t zi = zo * stride - pad + kz;
                                        if (zi < 0 || zi >= D) continue;
                                        for (int64_t yo = 0; yo < Ho; ++yo) {
                                            const int64_t yi = yo * stride - pad + ky;
                                            if (yi < 0 || yi >= H) continue;
                                            const T* xrow = xc + zi * in_z + yi * W;
                                            T* gxrow = need_in ? gxc + zi * in_z + yi * W : nullptr;
                                            const T* grow = gc + zo * out_z + yo * Wo;
                                            const int64_t xi0 = kx - pad;
                                            int64_t lo = xi0 < 0 ? (-xi0 + stride - 1) / stride : 0;
                                            int64_t hi = (W - 1 - xi0) / stride;
                                            if (hi > Wo - 1) hi = Wo - 1;
                                            if (need_w)
                                                for (int64_t xo = lo; xo <= hi; ++xo)
                                                    wg += grow[xo] * xrow[xo * stride + xi0];
                                            if (need_in)
                                                for (int64_t xo = lo; xo <= hi; ++xo)
                                                    gxrow[xo * stride + xi0] += grow[xo] * wv;
                                        }
                                    }
                                    if (need_w) gwci[(kz * k + ky) * k + kx] += wg;
                                }
                    }
                }
            }
        });
    }
    return out;
}

/// Nearest-neighbour upsampling of all three spatial axes by an integer
/// factor. Backward sums gradients over each factor^3 replication block.
template <class T>
Tensor<T> upsample_nearest3d(const Tensor<T>& input, int64_t factor) {
    detail::require_rank(input, 5, "upsample_nearest3d");
    if (factor < 1) throw ContractError("upsample_nearest3d: factor must be >= 1");
    const int64_t B = input.extent(0), C = input.extent(1);
    const int64_t D = input.extent(2), H = input.extent(3), W = input.extent(4);
    const int64_t Do = D * factor, Ho = H * factor, Wo = W * factor;
    Tensor<T> out = Tensor<T>::make_op({B, C, Do, Ho, Wo}, {input});
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xc = x + bc * D * H * W;
        T* yc = y + bc * Do * Ho * Wo;
        for (int64_t z = 0; z < Do; ++z)
            for (int64_t yy = 0; yy < Ho; ++yy) {
                const T* xrow = xc + (z / factor) * H * W + (yy / factor) * W;
                T* yrow = yc + z * Ho * Wo + yy * Wo;
                for (int64_t xx = 0; xx < Wo; ++xx) yrow[xx] = xrow[xx / factor];
            }
    }
    if (out.requires_grad()) {
        auto* xn = input.node().get();
        out.set_backprop([xn, B, C, D, H, W, factor](detail::Node<T>& self) {
            xn->ensure_grad();
            const int64_t Do = D * factor, Ho = H * factor, Wo = W * factor;
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T* gx = xn->grad.data() + bc * D * H * W;
                const T* gy = self.grad.data() + bc * Do * Ho * Wo;
                for (int64_t z = 0; z < Do; ++z)
                    for (int64_t yy = 0; yy < Ho; ++yy) {
                        T* gxrow = gx + (z / factor) * H * W + (yy / factor) * W;
                        const T* gyrow = gy + z * Ho * Wo + yy * Wo;
                        for (int64_t xx = 0; xx < Wo; ++xx) gxrow[xx / factor] += gyrow[xx];
                    }
            }
        });
    }
    return out;
}

/// Per-(sample, channel) normalization to zero mean / unit variance over the
/// spatial volume, followed by a learnable affine (gain, shift).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gain, const Tensor<T>& shift,
                        T eps) {
    detail::require_rank(input, 5, "instance_norm(input)");
    detail::require_rank(gain, 1, "instance_norm(gain)");
    detail::require_rank(shift, 1, "instance_norm(shift)");
    const int64_t B = input.extent(0), C = input.extent(1);
    const int64_t V = input.extent(2) * input.extent(3) * input.extent(4);
    if (V < 2) throw ContractError("instance_norm: spatial volume must have at least 2 voxels");
    if (gain.extent(0) != C || shift.extent(0) != C)
        throw ShapeError("instance_norm: gain/shift must have one entry per channel");

    Tensor<T> out = Tensor<T>::make_op(input.shape(), {input, gain, shift});
    std::vector<T> mean_bc(static_cast<size_t>(B * C));
    std::vector<T> invstd_bc(static_cast<size_t>(B * C));
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xc = x + bc * V;
        T m = T(0);
        for (int64_t i = 0; i < V; ++i) m += xc[i];
        m /= static_cast<T>(V);
        T var = T(0);
        for (int64_t i = 0; i < V; ++i) {
            const T d = xc[i] - m;
            var += d * d;
        }
        var /= static_cast<T>(V);
        const T inv = T(1) / std::sqrt(var + eps);
        mean_bc[static_cast<size_t>(bc)] = m;
        invstd_bc[static_cast<size_t>(bc)] = inv;
        const T gc = gain.values()[static_cast<size_t>(bc % C)];
        const T sc = shift.values()[static_cast<size_t>(bc % C)];
        T* yc = y + bc * V;
        for (int64_t i = 0; i < V; ++i) yc[i] = gc * (xc[i] - m) * inv + sc;
    }
    if (out.requires_grad()) {
        auto* xn = input.node().get();
        auto* gn = gain.node().get();
        auto* sn = shift.node().get();
        out.set_backprop([xn, gn, sn, B, C, V, mean_bc, invstd_bc](detail::Node<T>& self) {
            const bool need_x = xn->requires_grad;
            const bool need_g = gn->requires_grad;
            const bool need_s = sn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_s) sn->ensure_grad();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* xc = xn->value.data() + bc * V;
                const T* gy = self.grad.data() + bc * V;
                const T m = mean_bc[static_cast<size_t>(bc)];
                const T inv = invstd_bc[static_cast<size_t>(bc)];
                const T gc = gn->value[static_cast<size_t>(bc % C)];
                T gsum = T(0), gxhat = T(0);
                for (int64_t i = 0; i < V; ++i) {
                    const T xh = (xc[i] - m) * inv;
                    gsum += gy[i];
                    gxhat += gy[i] * xh;
                }
                if (need_g) gn->grad[static_cast<size_t>(bc % C)] += gxhat;
                if (need_s) sn->grad[static_cast<size_t>(bc % C)] += gsum;
                if (need_x) {
                    T* gx = xn->grad.data() + bc * V;
                    const T mg = gsum / static_cast<T>(V);
                    const T mgx = gxhat / static_cast<T>(V);
                    for (int64_t i = 0; i < V; ++i) {
                        const T xh = (xc[i] - m) * inv;
                        gx[i] += gc * inv * (gy[i] - mg - xh * mgx);
                    }
                }
            }
        });
    }
    return out;
}

/// Channel-axis concatenation of two [B, C, D, H, W] maps.
template <class T>
Tensor<T> concat_channel(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 5, "concat_channel");
    detail::require_rank(b, 5, "concat_channel");
    for (int64_t d : {int64_t(0), int64_t(2), int64_t(3), int64_t(4)})
        if (a.extent(d) != b.extent(d))
            throw ShapeError("concat_channel: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ outside the channel axis");
    const int64_t B = a.extent(0), Ca = a.extent(1), Cb = b.extent(1);
    const int64_t S = a.extent(2) * a.extent(3) * a.extent(4);
    Tensor<T> out = Tensor<T>::make_op({B, Ca + Cb, a.extent(2), a.extent(3), a.extent(4)}, {a, b});
    T* y = out.values().data();
    for (int64_t bb = 0; bb < B; ++bb) {
        std::copy_n(a.values().data() + bb * Ca * S, Ca * S, y + bb * (Ca + Cb) * S);
        std::copy_n(b.values().data() + bb * Cb * S, Cb * S, y + bb * (Ca + Cb) * S + Ca * S);
    }
    if (out.requires_grad()) {
        auto* an = a.node().get();
        auto* bn = b.node().get();
        out.set_backprop([an, bn, B, Ca, Cb, S](detail::Node<T>& self) {
            for (int64_t bb = 0; bb < B; ++bb) {
                const T* g = self.grad.data() + bb * (Ca + Cb) * S;
                if (an->requires_grad) {
                    an->ensure_grad();
                    T* ga = an->grad.data() + bb * Ca * S;
                    for (int64_t i = 0; i < Ca * S; ++i) ga[i] += g[i];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    T* gb = bn->grad.data() + bb * Cb * S;
                    for (int64_t i = 0; i < Cb * S; ++i) gb[i] += g[i + Ca * S];
                }
            }
        });
    }
    return out;
}

/// [B, C, Dp, Hp, Wp] -> [B, N, C] with N = Dp*Hp*Wp. Token n maps to the
/// spatial cell (k, i, j) with n = (k*Hp + i)*Wp + j: depth-major ordering.
template <class T>
Tensor<T> to_tokens(const Tensor<T>& feat) {
    detail::require_rank(feat, 5, "to_tokens");
    const int64_t B = feat.extent(0), C = feat.extent(1);
    const int64_t N = feat.extent(2) * feat.extent(3) * feat.extent(4);
    Tensor<T> out = Tensor<T>::make_op({B, N, C}, {feat});
    const T* x = feat.values().data();
    T* y = out.values().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* xc = x + (b * C + c) * N;
            for (int64_t n = 0; n < N; ++n) y[(b * N + n) * C + c] = xc[n];
        }
    if (out.requires_grad()) {
        auto* xn = feat.node().get();
        out.set_backprop([xn, B, C, N](detail::Node<T>& self) {
            xn->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    T* gx = xn->grad.data() + (b * C + c) * N;
                    for (int64_t n = 0; n < N; ++n) gx[n] += self.grad[(b * N + n) * C + c];
                }
        });
    }
    return out;
}

/// Inverse of to_tokens for a given spatial partition (Dp, Hp, Wp).
template <class T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::array<int64_t, 3> spatial) {
    detail::require_rank(tokens, 3, "from_tokens");
    const int64_t B = tokens.extent(0), N = tokens.extent(1), C = tokens.extent(2);
    if (spatial[0] * spatial[1] * spatial[2] != N)
        throw ShapeError("from_tokens: spatial extents do not multiply to token count");
    Tensor<T> out = Tensor<T>::make_op({B, C, spatial[0], spatial[1], spatial[2]}, {tokens});
    const T* x = tokens.values().data();
    T* y = out.values().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            T* yc = y + (b * C + c) * N;
            for (int64_t n = 0; n < N; ++n) yc[n] = x[(b * N + n) * C + c];
        }
    if (out.requires_grad()) {
        auto* xn = tokens.node().get();
        out.set_backprop([xn, B, C, N](detail::Node<T>& self) {
            xn->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T* gy = self.grad.data() + (b * C + c) * N;
                    for (int64_t n = 0; n < N; ++n) xn->grad[(b * N + n) * C + c] += gy[n];
                }
        });
    }
    return out;
}

} // namespace medctx
