#pragma once

// Dense row-major tensor with a reverse-mode differentiation graph.
//
// A Tensor is an immutable value: shape plus a shared, read-only buffer.
// Operations that consume a tensor requiring gradients attach a graph node
// holding the inputs and an adjoint rule. grad() walks that graph in
// reverse topological order. Nothing is global except the per-thread
// recording switch, so independent samples can be differentiated on
// separate threads.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tamamba/error.hpp"

namespace tamamba {

#ifdef TAMAMBA_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

class Tensor;

namespace detail {
struct Node;

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Whether operations on this thread record adjoints.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the lifetime of the guard (inference).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Adjoint rule: receives d(loss)/d(output) and accumulates into one buffer
/// per input. Buffers for inputs that do not need gradients are empty.
using BackwardFn = std::function<void(std::span<const real>, std::vector<std::vector<real>>&)>;

class Tensor {
public:
    Tensor() : data_(std::make_shared<const std::vector<real>>()) {}

    /// Builds a tensor from explicit values. Throws on extent mismatch or
    /// non-finite input.
    static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = tamamba::numel(shape);
        return from(std::move(shape), std::vector<real>(n, real(0)), requires_grad);
    }
    static Tensor full(Shape shape, real value, bool requires_grad = false) {
        const std::size_t n = tamamba::numel(shape);
        return from(std::move(shape), std::vector<real>(n, value), requires_grad);
    }
    static Tensor scalar(real value, bool requires_grad = false) {
        return from({}, {value}, requires_grad);
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
        return shape_[axis];
    }
    std::size_t numel() const { return data_->size(); }
    std::span<const real> data() const& { return {data_->data(), data_->size()}; }
    std::span<const real> data() const&& = delete;  // would dangle
    const std::vector<real>& values() const& { return *data_; }
    std::vector<real> values() const&& { return *data_; }
    real operator[](std::size_t i) const { return (*data_)[i]; }
    real item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    /// True for tensors created directly (parameters, inputs, constants).
    bool is_leaf() const;

    /// Same values, no graph, no gradient.
    Tensor detach() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }
    /// Fresh leaf sharing this tensor's values.
    Tensor as_leaf(bool requires_grad = true) const;

    /// Same buffer, new extents. Differentiable.
    Tensor reshape(Shape shape) const;

    /// Result factory used by every operation: validates finiteness and
    /// records the adjoint when any input is being differentiated.
    static Tensor make_result(Shape shape, std::vector<real> values, std::string_view op,
                              std::vector<Tensor> inputs, BackwardFn backward);

    const detail::Node* node() const { return node_.get(); }

private:
    friend std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& leaves);

    Shape shape_;
    std::shared_ptr<const std::vector<real>> data_;
    std::shared_ptr<detail::Node> node_;
    bool requires_grad_ = false;
};

namespace detail {
struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    BackwardFn backward;  // empty for leaves
};

inline void check_finite(std::span<const real> v, std::string_view op) {
    for (real x : v) {
        if (!std::isfinite(x)) throw NumericError("non-finite value produced by " + std::string(op));
    }
}
}  // namespace detail

inline Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
    if (tamamba::numel(shape) != values.size()) {
        throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(tamamba::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    detail::check_finite(values, "Tensor::from");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<real>>(std::move(values));
    if (requires_grad) {
        t.requires_grad_ = true;
        t.node_ = std::make_shared<detail::Node>(detail::Node{"leaf", {}, {}});
    }
    return t;
}

inline bool Tensor::is_leaf() const { return !node_ || !node_->backward; }

inline Tensor Tensor::as_leaf(bool requires_grad) const {
    Tensor t = detach();
    if (requires_grad) {
        t.requires_grad_ = true;
        t.node_ = std::make_shared<detail::Node>(detail::Node{"leaf", {}, {}});
    }
    return t;
}

inline Tensor Tensor::make_result(Shape shape, std::vector<real> values, std::string_view op,
                                  std::vector<Tensor> inputs, BackwardFn backward) {
    if (tamamba::numel(shape) != values.size()) {
        throw ShapeError(std::string(op) + ": internal extent mismatch " + to_string(shape));
    }
    detail::check_finite(values, op);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<real>>(std::move(values));
    if (!grad_enabled()) return t;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad_;
    if (any) {
        t.requires_grad_ = true;
        t.node_ = std::make_shared<detail::Node>(detail::Node{op, std::move(inputs), std::move(backward)});
    }
    return t;
}

inline Tensor Tensor::reshape(Shape shape) const {
    if (tamamba::numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    if (!requires_grad_) {
        Tensor t = detach();
        t.shape_ = std::move(shape);
        return t;
    }
    return make_result(std::move(shape), *data_, "reshape", {*this},
                       [](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                       });
}

/// Exact reverse-mode gradients of a scalar output with respect to each
/// leaf. Leaves unreachable from the output receive zeros. The graph is
/// owned by the output tensor and released together with it.
inline std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& leaves) {
    if (output.numel() != 1) throw ShapeError("grad() needs a scalar output, got " + to_string(output.shape()));
    for (const auto& leaf : leaves) {
        if (!leaf.requires_grad() || !leaf.is_leaf()) throw ArgumentError("grad() target is not a differentiable leaf");
    }

    std::vector<detail::Node*> order;
    if (output.node_) {
        // Iterative DFS post-order; state 1 = on stack, 2 = finished.
        std::unordered_map<detail::Node*, int> state;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{output.node_.get(), 0}};
        state[output.node_.get()] = 1;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                detail::Node* child = node->inputs[next++].node_.get();
                if (!child) continue;
                int& s = state[child];
                if (s == 1) throw Error("cyclic differentiation graph");
                if (s == 0) {
                    s = 1;
                    stack.emplace_back(child, 0);
                }
            } else {
                state[node] = 2;
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<const detail::Node*, std::vector<real>> grads;
    if (output.node_) grads[output.node_.get()] = {real(1)};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward) continue;
        auto found = grads.find(node);
        if (found == grads.end()) continue;
        const std::vector<real> gout = std::move(found->second);
        grads.erase(found);

        std::vector<std::vector<real>> gin(node->inputs.size());
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            if (node->inputs[i].requires_grad_) gin[i].assign(node->inputs[i].numel(), real(0));
        }
        node->backward(gout, gin);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            if (gin[i].empty()) continue;
            auto& acc = grads[node->inputs[i].node_.get()];
            if (acc.empty()) {
                acc = std::move(gin[i]);
            } else {
                for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += gin[i][j];
            }
        }
    }

    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        auto found = grads.find(leaf.node_.get());
        if (found == grads.end() || found->second.empty()) {
            out.push_back(Tensor::zeros(leaf.shape()));
        } else {
            out.push_back(Tensor::from(leaf.shape(), found->second));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

enum class Unary { relu, sigmoid, silu, softplus, exp, neg, abs, square };
enum class Binary { add, sub, mul, div };

namespace detail {

inline real softplus_value(real x) {
    // log(1 + e^x) without overflow for large |x|.
    return x > real(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline real sigmoid_value(real x) {
    if (x >= real(0)) return real(1) / (real(1) + std::exp(-x));
    const real e = std::exp(x);
    return e / (real(1) + e);
}

inline std::string_view unary_name(Unary k) {
    switch (k) {
        case Unary::relu: return "relu";
        case Unary::sigmoid: return "sigmoid";
        case Unary::silu: return "silu";
        case Unary::softplus: return "softplus";
        case Unary::exp: return "exp";
        case Unary::neg: return "neg";
        case Unary::abs: return "abs";
        case Unary::square: return "square";
    }
    return "unary";
}

inline std::string_view binary_name(Binary k) {
    switch (k) {
        case Binary::add: return "add";
        case Binary::sub: return "sub";
        case Binary::mul: return "mul";
        case Binary::div: return "div";
    }
    return "binary";
}

}  // namespace detail

inline Tensor elementwise(Unary kind, const Tensor& x) {
    const auto xs = x.data();
    std::vector<real> y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const real v = xs[i];
        switch (kind) {
            case Unary::relu: y[i] = v > real(0) ? v : real(0); break;
            case Unary::sigmoid: y[i] = detail::sigmoid_value(v); break;
            case Unary::silu: y[i] = v * detail::sigmoid_value(v); break;
            case Unary::softplus: y[i] = detail::softplus_value(v); break;
            case Unary::exp: y[i] = std::exp(v); break;
            case Unary::neg: y[i] = -v; break;
            case Unary::abs: y[i] = std::abs(v); break;
            case Unary::square: y[i] = v * v; break;
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(y), detail::unary_name(kind), {x},
        [kind, x](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const auto xs = x.data();
            auto& gx = gin[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                const real v = xs[i];
                real d = 0;
                switch (kind) {
                    case Unary::relu: d = v > real(0) ? real(1) : real(0); break;
                    case Unary::sigmoid: {
                        const real s = detail::sigmoid_value(v);
                        d = s * (real(1) - s);
                        break;
                    }
                    case Unary::silu: {
                        const real s = detail::sigmoid_value(v);
                        d = s * (real(1) + v * (real(1) - s));
                        break;
                    }
                    case Unary::softplus: d = detail::sigmoid_value(v); break;
                    case Unary::exp: d = std::exp(v); break;
                    case Unary::neg: d = real(-1); break;
                    case Unary::abs: d = v > real(0) ? real(1) : (v < real(0) ? real(-1) : real(0)); break;
                    case Unary::square: d = real(2) * v; break;
                }
                gx[i] += g[i] * d;
            }
        });
}

/// Binary elementwise op. Shapes must match, or one side must hold a
/// single element which is then applied to every element of the other.
inline Tensor elementwise(Binary kind, const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool b_scalar = !same && b.numel() == 1;
    const bool a_scalar = !same && !b_scalar && a.numel() == 1;
    if (!same && !a_scalar && !b_scalar) {
        throw ShapeError(std::string(detail::binary_name(kind)) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    const Shape out_shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = numel(out_shape);
    const auto as = a.data();
    const auto bs = b.data();
    auto av = [&](std::size_t i) { return a_scalar ? as[0] : as[i]; };
    auto bv = [&](std::size_t i) { return b_scalar ? bs[0] : bs[i]; };
    std::vector<real> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
            case Binary::add: y[i] = av(i) + bv(i); break;
            case Binary::sub: y[i] = av(i) - bv(i); break;
            case Binary::mul: y[i] = av(i) * bv(i); break;
            case Binary::div: y[i] = av(i) / bv(i); break;
        }
    }
    return Tensor::make_result(
        out_shape, std::move(y), detail::binary_name(kind), {a, b},
        [kind, a, b, a_scalar, b_scalar](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const auto as = a.data();
            const auto bs = b.data();
            auto& ga = gin[0];
            auto& gb = gin[1];
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t ia = a_scalar ? 0 : i;
                const std::size_t ib = b_scalar ? 0 : i;
                real da = 0, db = 0;
                switch (kind) {
                    case Binary::add: da = 1; db = 1; break;
                    case Binary::sub: da = 1; db = -1; break;
                    case Binary::mul: da = bs[ib]; db = as[ia]; break;
                    case Binary::div:
                        da = real(1) / bs[ib];
                        db = -as[ia] / (bs[ib] * bs[ib]);
                        break;
                }
                if (!ga.empty()) ga[ia] += g[i] * da;
                if (!gb.empty()) gb[ib] += g[i] * db;
            }
        });
}

inline Tensor relu(const Tensor& x) { return elementwise(Unary::relu, x); }
inline Tensor sigmoid(const Tensor& x) { return elementwise(Unary::sigmoid, x); }
inline Tensor silu(const Tensor& x) { return elementwise(Unary::silu, x); }
inline Tensor softplus(const Tensor& x) { return elementwise(Unary::softplus, x); }
inline Tensor exp(const Tensor& x) { return elementwise(Unary::exp, x); }
inline Tensor abs(const Tensor& x) { return elementwise(Unary::abs, x); }
inline Tensor square(const Tensor& x) { return elementwise(Unary::square, x); }

inline Tensor operator-(const Tensor& x) { return elementwise(Unary::neg, x); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(Binary::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(Binary::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(Binary::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(Binary::div, a, b); }
inline Tensor operator*(const Tensor& a, real s) { return a * Tensor::scalar(s); }
inline Tensor operator*(real s, const Tensor& a) { return a * Tensor::scalar(s); }
inline Tensor operator+(const Tensor& a, real s) { return a + Tensor::scalar(s); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    real acc = 0;
    for (real v : x.data()) acc += v;
    return Tensor::make_result({}, {acc}, "sum", {x},
                               [](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   for (auto& v : gin[0]) v += g[0];
                               });
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return sum(x) * (real(1) / static_cast<real>(x.numel()));
}

}  // namespace tamamba
