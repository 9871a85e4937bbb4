#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vsdr/common.hpp"

namespace vsdr {

namespace detail {

// One node of the compute graph. Leaf tensors have no inputs; op results
// record their inputs and a closure that propagates the output gradient.
// The recorded links form the graph consumed by backward().
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;

    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward_fn;
    bool consumed = false;  // set once backward has run through this node

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    void accumulate_grad(const std::vector<T>& g) {
        ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

// Thread-local switch; when off, ops do not record graph nodes.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording for its scope (validation / inference passes).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Dense rank-N tensor handle. Copies share storage; ops treat inputs as
// immutable. Mutable access to values is meant for leaves (parameter
// initialization, optimizer updates, finite-difference probing).
template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        check_shape_valid(shape, "Tensor");
        auto n = std::make_shared<Node>();
        n->value.assign(static_cast<size_t>(vsdr::numel(shape)), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check_shape_valid(shape, "Tensor");
        if (vsdr::numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
    int64_t numel() const { return n_->numel(); }
    bool requires_grad() const { return n_->requires_grad; }
    const char* op_name() const { return n_->op; }

    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    std::span<const T> values() const { return {n_->value.data(), n_->value.size()}; }
    std::span<T> mutable_values() { return {n_->value.data(), n_->value.size()}; }

    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    std::span<const T> grad() const {
        if (!has_grad()) throw Error("Tensor: gradient not populated");
        return {n_->grad.data(), n_->grad.size()};
    }
    void zero_grad() {
        if (n_->requires_grad) n_->grad.assign(n_->value.size(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item(): tensor is not scalar-shaped, shape " + shape_str(shape()));
        return n_->value[0];
    }

    // Deep copy of values only; result is a detached leaf.
    Tensor clone(bool requires_grad = false) const {
        return from_data(n_->shape, n_->value, requires_grad);
    }

    std::shared_ptr<Node> node() const { return n_; }

    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

// Builds the op-result tensor and records it on the graph when gradients
// are being tracked and any input participates.
template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> value,
                         std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                         std::function<void(TensorNode<T>&)> backward_fn) {
    auto out = Tensor<T>::from_data(std::move(shape), std::move(value));
    bool track = grad_mode_flag();
    if (track) {
        track = false;
        for (const auto& in : inputs)
            if (in->requires_grad) track = true;
    }
    if (track) {
        auto n = out.node();
        n->requires_grad = true;
        n->op = op;
        n->inputs = std::move(inputs);
        n->backward_fn = std::move(backward_fn);
    }
    return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Traces the graph reachable from
// `loss`, then calls each recorded node's backward closure exactly once in
// reverse topological order, accumulating into .grad of every
// requires_grad tensor. The traversed graph is released afterwards; a
// second backward through the same nodes is an error.
template <typename T>
void backward(const Tensor<T>& loss) {
    using Node = detail::TensorNode<T>;
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar-shaped, got " + shape_str(loss.shape()));
    Node* root = loss.node().get();
    if (root->consumed) throw Error("backward: graph already consumed");
    if (!root->requires_grad) throw Error("backward: loss does not require gradients");

    // Iterative post-order DFS; post-order is a topological order with every
    // input preceding its consumer.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* in = node->inputs[next++].get();
            if (in->requires_grad && !seen.count(in)) {
                seen.insert(in);
                stack.emplace_back(in, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->consumed) throw Error("backward: graph already consumed");
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
            node->consumed = true;
        }
    }
    // Release the recorded graph; leaves keep their accumulated grads.
    for (Node* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->inputs.clear();
        }
    }
}

}  // namespace vsdr
