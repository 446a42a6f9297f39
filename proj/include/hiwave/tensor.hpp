#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hiwave/errors.hpp"

namespace hiwave {

using Shape = std::vector<long>;

inline long numel_of(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::vector<long> strides_of(const Shape& s) {
    std::vector<long> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard: ops executed inside record no graph (used by evaluation passes).
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// One node of the computation graph. Interior nodes carry a backprop closure
// that reads this node's grad and accumulates into the parents' grads; leaves
// carry none. Values are 64-bit floats in row-major order.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool consumed = false;  // set once backward() has run through this node
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const TensorNode&)> backprop;

    long numel() const { return static_cast<long>(value.size()); }

    void accum_grad(const double* g, long n) {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        for (long i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
    }
};

// Value-semantic handle to a shared graph node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(static_cast<std::size_t>(numel_of(shape)), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<long>(data.size()))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    long dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    long numel() const { return n_->numel(); }

    std::vector<double>& values() { return n_->value; }
    const std::vector<double>& values() const { return n_->value; }
    double operator[](long i) const { return n_->value[static_cast<std::size_t>(i)]; }

    double item() const {
        if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (n_->grad.empty()) throw UsageError("gradient not populated; call backward() first");
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Copy of the values with no graph attached.
    Tensor detached() const { return from_data(n_->shape, n_->value, false); }

    // Reverse-mode pass from a scalar root. Visits nodes in exact reverse
    // topological order, then releases the graph; a second call on the same
    // root is a usage error.
    void backward() const {
        if (numel() != 1)
            throw DimensionError("backward() requires a scalar loss, got " + shape_str(shape()));
        if (n_->consumed) throw UsageError("backward() already consumed this graph");

        std::vector<std::shared_ptr<TensorNode>> topo = topo_order();
        n_->grad.assign(1, 1.0);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            TensorNode& node = **it;
            node.consumed = true;
            if (node.backprop && !node.grad.empty()) node.backprop(node);
            node.backprop = nullptr;
            node.parents.clear();
        }
    }

    std::shared_ptr<TensorNode> node() const { return n_; }
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

private:
    std::vector<std::shared_ptr<TensorNode>> topo_order() const {
        std::vector<std::shared_ptr<TensorNode>> order;
        std::unordered_set<TensorNode*> seen;
        // Iterative post-order DFS; graphs can be deep for long op chains.
        std::vector<std::pair<std::shared_ptr<TensorNode>, std::size_t>> stack;
        stack.emplace_back(n_, 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next_child] = stack.back();
            if (next_child < node->parents.size()) {
                auto child = node->parents[next_child++];
                if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<TensorNode> n_;
};

namespace detail {

// Shared boilerplate for building op result nodes.
inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<std::shared_ptr<TensorNode>> parents,
                          std::function<void(const TensorNode&)> backprop) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = false;
    if (grad_enabled()) {
        for (const auto& p : parents) track = track || p->requires_grad;
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace hiwave
