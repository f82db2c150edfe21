#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tinyseg/errors.hpp"

namespace tinyseg {

// Dense row-major tensor plus a per-forward-pass tape for reverse-mode
// differentiation. Training runs in float; tests instantiate the same
// code with double, where central finite differences are meaningful.
//
// Determinism contract: all loops and reductions run single-threaded in
// ascending row-major index order, so identical inputs give bit-identical
// outputs and gradients.

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
class TapeT;

template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;
    TapeT<T>* tape = nullptr;  // non-owning; nullptr = detached (eager only)
    int node = -1;
    bool requires_grad = false;

    TensorT() = default;
    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
        for (int d2 : shape)
            if (d2 <= 0) throw ShapeMismatch("non-positive dimension in shape " + shape_str(shape));
    }

    static TensorT zeros(Shape s) {
        auto n = shape_numel(s);
        return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }
    static TensorT full(Shape s, T value) {
        auto n = shape_numel(s);
        return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), value));
    }
    static TensorT scalar_tensor(T value) { return TensorT({1}, {value}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    bool on_tape() const { return tape != nullptr && node >= 0; }

    T item() const {
        if (!is_scalar()) throw NotScalar("item() on tensor of shape " + shape_str(shape));
        return data[0];
    }

    // Detached copy: same value, no tape association.
    TensorT detached() const {
        TensorT out(shape, data);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

// Append-only record of one forward pass. Insertion order is topological
// order; backward() walks it once in reverse. Gradients accumulate, so a
// tensor feeding several consumers (skip connections) collects the sum of
// all branch gradients.
template <typename T>
class TapeT {
  public:
    using BackwardFn = std::function<void(TapeT&, const std::vector<T>& upstream)>;

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    // Registers an existing value as a tape leaf.
    TensorT<T> leaf(const TensorT<T>& value, bool requires_grad) {
        TensorT<T> out = value.detached();
        out.tape = this;
        out.requires_grad = requires_grad;
        out.node = emit(out.shape, {}, requires_grad, "leaf", nullptr);
        return out;
    }

    int emit(const Shape& shape, std::vector<int> inputs, bool requires_grad, const char* op,
             BackwardFn backward) {
        for (int in : inputs)
            if (in >= static_cast<int>(nodes_.size()))
                throw DetachedTensor("tape node input does not precede it");
        nodes_.push_back(Node{shape, std::move(inputs), requires_grad, op, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }

    bool node_requires_grad(int node) const {
        return node >= 0 && node < static_cast<int>(nodes_.size()) && nodes_[node].requires_grad;
    }

    // Accumulates a gradient contribution into a node's buffer. Silently
    // drops contributions aimed at constants or requires_grad=false nodes,
    // which keeps every op's backward unconditional.
    void accumulate(int node, const std::vector<T>& contribution) {
        if (!node_requires_grad(node)) return;
        auto& buf = grads_[static_cast<std::size_t>(node)];
        if (buf.empty()) buf.assign(contribution.size(), T(0));
        for (std::size_t i = 0; i < contribution.size(); ++i) buf[i] += contribution[i];
    }

    void backward(const TensorT<T>& loss) {
        if (loss.tape != this || loss.node < 0)
            throw DetachedTensor("backward: loss tensor is not on this tape");
        if (!loss.is_scalar())
            throw NotScalar("backward: loss has " + std::to_string(loss.numel()) + " elements");
        grads_.assign(nodes_.size(), {});
        if (!nodes_[static_cast<std::size_t>(loss.node)].requires_grad) return;
        grads_[static_cast<std::size_t>(loss.node)] = {T(1)};
        for (int i = loss.node; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || !n.backward) continue;
            const auto& g = grads_[static_cast<std::size_t>(i)];
            if (g.empty()) continue;  // unreachable from the loss
            n.backward(*this, g);
        }
    }

    bool has_grad(const TensorT<T>& x) const {
        return x.tape == this && has_grad_node(x.node);
    }

    bool has_grad_node(int node) const {
        return node >= 0 && static_cast<std::size_t>(node) < grads_.size() &&
               !grads_[static_cast<std::size_t>(node)].empty();
    }

    TensorT<T> grad_node(int node) const {
        if (!has_grad_node(node))
            throw DetachedTensor("grad_node: no gradient recorded for node " +
                                 std::to_string(node));
        return TensorT<T>(nodes_[static_cast<std::size_t>(node)].shape,
                          grads_[static_cast<std::size_t>(node)]);
    }

    TensorT<T> grad(const TensorT<T>& x) const {
        if (x.tape != this || x.node < 0) throw DetachedTensor("grad: tensor is not on this tape");
        if (!has_grad(x))
            throw DetachedTensor("grad: no gradient recorded for node " + std::to_string(x.node));
        return TensorT<T>(x.shape, grads_[static_cast<std::size_t>(x.node)]);
    }

    // Gradient map {node id -> tensor} for everything reached by backward().
    std::map<int, TensorT<T>> gradients() const {
        std::map<int, TensorT<T>> out;
        for (std::size_t i = 0; i < grads_.size(); ++i)
            if (!grads_[i].empty())
                out.emplace(static_cast<int>(i), TensorT<T>(nodes_[i].shape, grads_[i]));
        return out;
    }

  private:
    struct Node {
        Shape shape;
        std::vector<int> inputs;
        bool requires_grad = false;
        const char* op = "";
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
};

using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// Op recording helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
TapeT<T>* common_tape(const TensorT<T>& a) {
    return a.tape;
}

template <typename T>
TapeT<T>* common_tape(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.tape && b.tape && a.tape != b.tape)
        throw DetachedTensor("operands live on different tapes");
    return a.tape ? a.tape : b.tape;
}

// Wraps a computed result. When a tape is active and some input requires
// grad, the node is recorded; otherwise the result stays detached (eager
// evaluation path used by inference).
template <typename T>
TensorT<T> make_result(TapeT<T>* tape, Shape shape, std::vector<T> data, std::vector<int> inputs,
                       bool requires_grad, const char* op,
                       typename TapeT<T>::BackwardFn backward) {
    TensorT<T> out(std::move(shape), std::move(data));
    if (tape && requires_grad) {
        std::vector<int> live;
        for (int in : inputs)
            if (in >= 0) live.push_back(in);
        out.tape = tape;
        out.requires_grad = true;
        out.node = tape->emit(out.shape, std::move(live), true, op, std::move(backward));
    }
    return out;
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is limited to scalar-vs-tensor; layers
// expand channel parameters explicitly.
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { none, a_scalar, b_scalar };

template <typename T>
Bcast binary_bcast(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape == b.shape) return Bcast::none;
    if (a.is_scalar()) return Bcast::a_scalar;
    if (b.is_scalar()) return Bcast::b_scalar;
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape) + " (only scalar-vs-tensor broadcast is supported)");
    }

template <typename T>
std::vector<T> sum_to_scalar(const std::vector<T>& v) {
    T s = 0;
    for (T x : v) s += x;
    return {s};
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    const auto bc = detail::binary_bcast(a, b, "add");
    auto* tape = detail::common_tape(a, b);
    const auto& big = (bc == detail::Bcast::a_scalar) ? b : a;
    std::vector<T> out(big.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T av = (bc == detail::Bcast::a_scalar) ? a.data[0] : a.data[i];
        const T bv = (bc == detail::Bcast::b_scalar) ? b.data[0] : b.data[i];
        out[i] = av + bv;
    }
    const int an = a.node, bn = b.node;
    return detail::make_result<T>(
        tape, big.shape, std::move(out), {an, bn}, a.requires_grad || b.requires_grad, "add",
        [an, bn, bc](TapeT<T>& t, const std::vector<T>& g) {
            t.accumulate(an, bc == detail::Bcast::a_scalar ? detail::sum_to_scalar(g) : g);
            t.accumulate(bn, bc == detail::Bcast::b_scalar ? detail::sum_to_scalar(g) : g);
        });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    const auto bc = detail::binary_bcast(a, b, "sub");
    auto* tape = detail::common_tape(a, b);
    const auto& big = (bc == detail::Bcast::a_scalar) ? b : a;
    std::vector<T> out(big.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T av = (bc == detail::Bcast::a_scalar) ? a.data[0] : a.data[i];
        const T bv = (bc == detail::Bcast::b_scalar) ? b.data[0] : b.data[i];
        out[i] = av - bv;
    }
    const int an = a.node, bn = b.node;
    return detail::make_result<T>(
        tape, big.shape, std::move(out), {an, bn}, a.requires_grad || b.requires_grad, "sub",
        [an, bn, bc](TapeT<T>& t, const std::vector<T>& g) {
            t.accumulate(an, bc == detail::Bcast::a_scalar ? detail::sum_to_scalar(g) : g);
            std::vector<T> neg_g(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) neg_g[i] = -g[i];
            t.accumulate(bn, bc == detail::Bcast::b_scalar ? detail::sum_to_scalar(neg_g) : neg_g);
        });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    const auto bc = detail::binary_bcast(a, b, "mul");
    auto* tape = detail::common_tape(a, b);
    const auto& big = (bc == detail::Bcast::a_scalar) ? b : a;
    std::vector<T> out(big.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T av = (bc == detail::Bcast::a_scalar) ? a.data[0] : a.data[i];
        const T bv = (bc == detail::Bcast::b_scalar) ? b.data[0] : b.data[i];
        out[i] = av * bv;
    }
    const int an = a.node, bn = b.node;
    std::vector<T> a_saved = a.data, b_saved = b.data;
    return detail::make_result<T>(
        tape, big.shape, std::move(out), {an, bn}, a.requires_grad || b.requires_grad, "mul",
        [an, bn, bc, a_saved, b_saved](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> da(g.size()), db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T av = (bc == detail::Bcast::a_scalar) ? a_saved[0] : a_saved[i];
                const T bv = (bc == detail::Bcast::b_scalar) ? b_saved[0] : b_saved[i];
                da[i] = g[i] * bv;
                db[i] = g[i] * av;
            }
            t.accumulate(an, bc == detail::Bcast::a_scalar ? detail::sum_to_scalar(da) : da);
            t.accumulate(bn, bc == detail::Bcast::b_scalar ? detail::sum_to_scalar(db) : db);
        });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    const auto bc = detail::binary_bcast(a, b, "div");
    for (T v : b.data)
        if (v == T(0)) throw DomainError("div: divisor contains zero");
    auto* tape = detail::common_tape(a, b);
    const auto& big = (bc == detail::Bcast::a_scalar) ? b : a;
    std::vector<T> out(big.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T av = (bc == detail::Bcast::a_scalar) ? a.data[0] : a.data[i];
        const T bv = (bc == detail::Bcast::b_scalar) ? b.data[0] : b.data[i];
        out[i] = av / bv;
    }
    const int an = a.node, bn = b.node;
    std::vector<T> a_saved = a.data, b_saved = b.data;
    return detail::make_result<T>(
        tape, big.shape, std::move(out), {an, bn}, a.requires_grad || b.requires_grad, "div",
        [an, bn, bc, a_saved, b_saved](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> da(g.size()), db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T av = (bc == detail::Bcast::a_scalar) ? a_saved[0] : a_saved[i];
                const T bv = (bc == detail::Bcast::b_scalar) ? b_saved[0] : b_saved[i];
                da[i] = g[i] / bv;
                db[i] = -g[i] * av / (bv * bv);
            }
            t.accumulate(an, bc == detail::Bcast::a_scalar ? detail::sum_to_scalar(da) : da);
            t.accumulate(bn, bc == detail::Bcast::b_scalar ? detail::sum_to_scalar(db) : db);
        });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -a.data[i];
    const int an = a.node;
    return detail::make_result<T>(a.tape, a.shape, std::move(out), {an}, a.requires_grad, "neg",
                                  [an](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> da(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i) da[i] = -g[i];
                                      t.accumulate(an, da);
                                  });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * c;
    const int an = a.node;
    return detail::make_result<T>(a.tape, a.shape, std::move(out), {an}, a.requires_grad, "scale",
                                  [an, c](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> da(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * c;
                                      t.accumulate(an, da);
                                  });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] + c;
    const int an = a.node;
    return detail::make_result<T>(a.tape, a.shape, std::move(out), {an}, a.requires_grad,
                                  "add_scalar", [an](TapeT<T>& t, const std::vector<T>& g) {
                                      t.accumulate(an, g);
                                  });
}

// x^c for constant c. Domain: x > 0 for non-integer c, x != 0 for c < 0.
// Subgradient at x == 0 (only reachable with integer c >= 1) is 0 for c > 1
// and 1 for c == 1.
template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& a, T c) {
    const bool integral = (c == std::floor(c));
    for (T v : a.data) {
        if (!integral && v < T(0))
            throw DomainError("pow_scalar: negative base with non-integer exponent");
        if (c < T(0) && v == T(0)) throw DomainError("pow_scalar: zero base with negative exponent");
    }
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(std::pow(static_cast<double>(a.data[i]), static_cast<double>(c)));
    const int an = a.node;
    std::vector<T> a_saved = a.data;
    return detail::make_result<T>(
        a.tape, a.shape, std::move(out), {an}, a.requires_grad, "pow_scalar",
        [an, c, a_saved](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> da(g.size(), T(0));
            if (c != T(0)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const T x = a_saved[i];
                    if (x == T(0)) {
                        da[i] = (c == T(1)) ? g[i] : T(0);
                    } else {
                        da[i] = g[i] * c *
                                static_cast<T>(std::pow(static_cast<double>(x),
                                                        static_cast<double>(c - T(1))));
                    }
                }
            }
            t.accumulate(an, da);
        });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& a) {
    for (T v : a.data)
        if (!(v > T(0))) throw DomainError("log: input must be strictly positive");
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data[i]);
    const int an = a.node;
    std::vector<T> a_saved = a.data;
    return detail::make_result<T>(a.tape, a.shape, std::move(out), {an}, a.requires_grad, "log",
                                  [an, a_saved](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> da(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          da[i] = g[i] / a_saved[i];
                                      t.accumulate(an, da);
                                  });
}

// Gradient passes through on [lo, hi] inclusive, zero outside.
template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    if (lo > hi) throw DomainError("clamp: lo > hi");
    std::vector<T> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(a.data[i], lo), hi);
    const int an = a.node;
    std::vector<T> a_saved = a.data;
    return detail::make_result<T>(a.tape, a.shape, std::move(out), {an}, a.requires_grad, "clamp",
                                  [an, lo, hi, a_saved](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> da(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          da[i] = (a_saved[i] >= lo && a_saved[i] <= hi) ? g[i]
                                                                                        : T(0);
                                      t.accumulate(an, da);
                                  });
}

// ---------------------------------------------------------------------------
// Reductions. Summation order: ascending row-major index.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    if (a.data.empty()) throw EmptyTensor("sum: empty tensor");
    T s = 0;
    for (T v : a.data) s += v;
    const int an = a.node;
    const std::size_t n = a.data.size();
    return detail::make_result<T>(a.tape, {1}, {s}, {an}, a.requires_grad, "sum",
                                  [an, n](TapeT<T>& t, const std::vector<T>& g) {
                                      t.accumulate(an, std::vector<T>(n, g[0]));
                                  });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    if (a.data.empty()) throw EmptyTensor("mean: empty tensor");
    T s = 0;
    for (T v : a.data) s += v;
    const T m = s / static_cast<T>(a.data.size());
    const int an = a.node;
    const std::size_t n = a.data.size();
    return detail::make_result<T>(a.tape, {1}, {m}, {an}, a.requires_grad, "mean",
                                  [an, n](TapeT<T>& t, const std::vector<T>& g) {
                                      t.accumulate(an,
                                                   std::vector<T>(n, g[0] / static_cast<T>(n)));
                                  });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Central finite differences against the tape gradient. f must map a leaf
// tensor to a scalar; it is re-run per perturbed coordinate, so keep the
// probe tensors small. Returns max over elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<TensorT<T>(TapeT<T>&, const TensorT<T>&)>& f,
                  const TensorT<T>& x, T eps) {
    TensorT<T> analytic;
    {
        TapeT<T> tape;
        auto xl = tape.leaf(x, true);
        auto y = f(tape, xl);
        if (!y.is_scalar()) throw NotScalar("grad_check: f must return a scalar");
        tape.backward(y);
        analytic = tape.has_grad(xl) ? tape.grad(xl) : TensorT<T>::zeros(x.shape);
    }
    if (!analytic.all_finite()) throw NonFiniteGradient("grad_check: analytic gradient not finite");

    auto eval = [&](const TensorT<T>& probe) {
        TapeT<T> tape;
        auto xl = tape.leaf(probe, false);
        return f(tape, xl).item();
    };

    double max_rel = 0.0;
    TensorT<T> probe = x;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const T orig = probe.data[i];
        probe.data[i] = orig + eps;
        const double fp = static_cast<double>(eval(probe));
        probe.data[i] = orig - eps;
        const double fm = static_cast<double>(eval(probe));
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
        const double exact = static_cast<double>(analytic.data[i]);
        if (!std::isfinite(numeric)) throw NonFiniteGradient("grad_check: numeric gradient not finite");
        const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(exact - numeric) / denom);
    }
    return max_rel;
}

}  // namespace tinyseg
