#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nasdet/tensor.hpp"

namespace nasdet {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value in the reverse-mode graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool leaf = true;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;

    /// Gradient buffer, zero-initialized to the value's shape on first use.
    Tensor& grad_buffer();
};

/// Shared handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }
    void zero_grad() { node_->grad.release(); }

    const NodePtr& node() const { return node_; }
    bool same(const Var& o) const { return node_ == o.node_; }

private:
    NodePtr node_;
};

/// Leaf without gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradient.
Var leaf_parameter(Tensor value);

/// Runs reverse accumulation from a 1x1x1x1 root. Intermediate buffers are
/// released as soon as they are consumed; leaf gradients accumulate.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Builds a result node. The backward closure receives the result node, whose
/// grad holds dL/d(result); inputs are reachable through node.inputs.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Gradient buffer of input i, or nullptr if that input does not need one.
Tensor* input_grad(Node& node, std::size_t i);

}  // namespace detail
}  // namespace nasdet
