#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "medctx/errors.hpp"

namespace medctx {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

/// One record on the implicit tape: an operation's output value, its input
/// references, and the closure that pushes gradients back into them.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // allocated lazily; persists across backward calls on leaves
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

} // namespace detail

/// Dense row-major real tensor attached to an implicit reverse-mode tape.
/// A Tensor is a cheap handle; copies alias the same node. Operations record
/// tape nodes whenever any input requires gradients.
///
/// Gradient semantics: backward() accumulates (+=) into leaf gradients, so
/// repeated backward calls sum; callers that want fresh gradients zero them
/// between steps (the trainer does this every step).
template <class T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() : n_(std::make_shared<Node>()) { n_->shape = {0}; }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), v);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("Tensor::from: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    /// New node whose value is to be filled by the caller; requires_grad is
    /// inherited from the parents. Building block for every operation.
    static Tensor make_op(Shape shape, std::vector<Tensor> parents) {
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), T(0));
        for (const Tensor& p : parents) {
            t.n_->requires_grad = t.n_->requires_grad || p.requires_grad();
            t.n_->parents.push_back(p.n_);
        }
        return t;
    }

    const Shape& shape() const { return n_->shape; }
    int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
    int64_t extent(int64_t d) const { return n_->shape[static_cast<size_t>(d)]; }

    std::vector<T>& values() { return n_->value; }
    const std::vector<T>& values() const { return n_->value; }
    T item() const {
        if (numel() != 1) throw ContractError("Tensor::item: tensor is not scalar");
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) {
        if (!n_->is_leaf())
            throw ContractError("set_requires_grad: only leaf tensors may be toggled");
        n_->requires_grad = b;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (n_->grad.empty()) throw ContractError("Tensor::grad: no gradient present");
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

    /// Constant copy: same values, detached from the tape.
    Tensor detach() const {
        Tensor t;
        t.n_->shape = n_->shape;
        t.n_->value = n_->value;
        return t;
    }

    void set_backprop(std::function<void(Node&)> fn) { n_->backprop = std::move(fn); }
    const std::shared_ptr<Node>& node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

/// Reverse pass from a scalar loss. Visits each reachable node exactly once
/// in reverse topological order. Intermediate gradients are reset per call;
/// leaf gradients accumulate across calls.
template <class T>
void backward(const Tensor<T>& loss) {
    using Node = detail::Node<T>;
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw ContractError("backward: loss does not depend on any differentiable input");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Intermediates start from zero each pass; leaves keep accumulating.
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
        else n->ensure_grad();
    }
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations. Broadcasting is restricted to scalar-or-exact-shape:
// operands either match shapes exactly or one of them has a single element.
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { exact, a_scalar, b_scalar };

template <class T>
Bcast binary_mode(const Tensor<T>& a, const Tensor<T>& b, const char* opname) {
    if (a.shape() == b.shape()) return Bcast::exact;
    if (a.numel() == 1) return Bcast::a_scalar;
    if (b.numel() == 1) return Bcast::b_scalar;
    throw ShapeError(std::string(opname) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
}

// fwd(x, y) -> value; dx(x, y, g) and dy(x, y, g) -> partials times upstream.
template <class T, class Fwd, class Dx, class Dy>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    Fwd fwd, Dx dx, Dy dy) {
    Bcast mode = binary_mode(a, b, name);
    const Tensor<T>& big = (mode == Bcast::a_scalar) ? b : a;
    Tensor<T> out = Tensor<T>::make_op(big.shape(), {a, b});
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    const size_t n = ov.size();
    for (size_t i = 0; i < n; ++i) {
        T x = av[mode == Bcast::a_scalar ? 0 : i];
        T y = bv[mode == Bcast::b_scalar ? 0 : i];
        ov[i] = fwd(x, y);
    }
    if (out.requires_grad()) {
        auto* an = a.node().get();
        auto* bn = b.node().get();
        out.set_backprop([an, bn, mode, dx, dy](detail::Node<T>& self) {
            const size_t n = self.value.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) {
                    T x = an->value[mode == Bcast::a_scalar ? 0 : i];
                    T y = bn->value[mode == Bcast::b_scalar ? 0 : i];
                    an->grad[mode == Bcast::a_scalar ? 0 : i] += dx(x, y, self.grad[i]);
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) {
                    T x = an->value[mode == Bcast::a_scalar ? 0 : i];
                    T y = bn->value[mode == Bcast::b_scalar ? 0 : i];
                    bn->grad[mode == Bcast::b_scalar ? 0 : i] += dy(x, y, self.grad[i]);
                }
            }
        });
    }
    return out;
}

template <class T, class Fwd, class Dx>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Dx dx) {
    Tensor<T> out = Tensor<T>::make_op(a.shape(), {a});
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    if (out.requires_grad()) {
        auto* an = a.node().get();
        out.set_backprop([an, dx](detail::Node<T>& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i)
                an->grad[i] += dx(an->value[i], self.value[i], self.grad[i]);
        });
    }
    return out;
}

} // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, "add",
                             [](T x, T y) { return x + y; },
                             [](T, T, T g) { return g; },
                             [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, "sub",
                             [](T x, T y) { return x - y; },
                             [](T, T, T g) { return g; },
                             [](T, T, T g) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, "mul",
                             [](T x, T y) { return x * y; },
                             [](T, T y, T g) { return g * y; },
                             [](T x, T, T g) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, "div",
                             [](T x, T y) { return x / y; },
                             [](T, T y, T g) { return g / y; },
                             [](T x, T y, T g) { return -g * x / (y * y); });
}

template <class T> Tensor<T> add(const Tensor<T>& a, T s) { return add(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> sub(const Tensor<T>& a, T s) { return sub(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> mul(const Tensor<T>& a, T s) { return mul(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> div(const Tensor<T>& a, T s) { return div(a, Tensor<T>::scalar(s)); }

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return -x; },
                            [](T, T, T g) { return -g; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    // Subgradient at 0 is 0.
    return detail::unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                            [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::exp(x); },
                            [](T, T y, T g) { return g * y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    for (T x : a.values())
        if (!(x > T(0))) throw NumericError("log: input must be strictly positive");
    return detail::unary_op(a, [](T x) { return std::log(x); },
                            [](T x, T, T g) { return g / x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Shape reduced_shape(const Shape& in, const std::set<int64_t>& axes, bool keepdim) {
    Shape out;
    for (int64_t d = 0; d < static_cast<int64_t>(in.size()); ++d) {
        if (axes.count(d)) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(in[static_cast<size_t>(d)]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}

/// Maps every input linear index to the linear index of its reduction cell.
template <class T, class Body>
void for_each_reduced(const Tensor<T>& a, const std::set<int64_t>& axes, Body body) {
    const Shape& in = a.shape();
    const int64_t rank = static_cast<int64_t>(in.size());
    std::vector<int64_t> out_stride(in.size(), 0);
    int64_t stride = 1;
    for (int64_t d = rank - 1; d >= 0; --d) {
        if (!axes.count(d)) {
            out_stride[static_cast<size_t>(d)] = stride;
            stride *= in[static_cast<size_t>(d)];
        }
    }
    std::vector<int64_t> idx(in.size(), 0);
    const int64_t n = a.numel();
    int64_t out = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        body(lin, out);
        for (int64_t d = rank - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < in[ud]) {
                out += out_stride[ud];
                break;
            }
            idx[ud] = 0;
            out -= out_stride[ud] * (in[ud] - 1);
        }
    }
}

template <class T>
Tensor<T> reduce_impl(const Tensor<T>& a, const std::set<int64_t>& axes, bool keepdim, bool take_mean) {
    for (int64_t d : axes)
        if (d < 0 || d >= a.rank())
            throw ShapeError("reduce: axis " + std::to_string(d) + " invalid for shape " +
                             shape_str(a.shape()));
    int64_t count = 1;
    for (int64_t d : axes) count *= a.extent(d);
    Tensor<T> out = Tensor<T>::make_op(reduced_shape(a.shape(), axes, keepdim), {a});
    auto& ov = out.values();
    for_each_reduced(a, axes, [&](int64_t in_i, int64_t out_i) {
        ov[static_cast<size_t>(out_i)] += a.values()[static_cast<size_t>(in_i)];
    });
    const T scale = take_mean ? T(1) / static_cast<T>(count) : T(1);
    if (take_mean)
        for (T& v : ov) v *= scale;
    if (out.requires_grad()) {
        auto* an = a.node().get();
        Tensor<T> a_keep = a; // keep shape/axes info alive in the closure
        out.set_backprop([an, a_keep, axes, scale](detail::Node<T>& self) {
            an->ensure_grad();
            for_each_reduced(a_keep, axes, [&](int64_t in_i, int64_t out_i) {
                an->grad[static_cast<size_t>(in_i)] += self.grad[static_cast<size_t>(out_i)] * scale;
            });
        });
    }
    return out;
}

} // namespace detail

/// Sum over the given axes (empty set = all axes; full reduction yields [1]).
template <class T>
Tensor<T> sum(const Tensor<T>& a, const std::set<int64_t>& axes, bool keepdim = false) {
    return detail::reduce_impl(a, axes, keepdim, false);
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    std::set<int64_t> all;
    for (int64_t d = 0; d < a.rank(); ++d) all.insert(d);
    return detail::reduce_impl(a, all, false, false);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, const std::set<int64_t>& axes, bool keepdim = false) {
    return detail::reduce_impl(a, axes, keepdim, true);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    std::set<int64_t> all;
    for (int64_t d = 0; d < a.rank(); ++d) all.insert(d);
    return detail::reduce_impl(a, all, false, true);
}

} // namespace medctx
