#include "nasdet/autograd.hpp"

#include <malloc.h>

#include <unordered_set>

#include "nasdet/errors.hpp"

namespace nasdet {
namespace {
thread_local bool g_grad_enabled = true;

// Activation buffers are large and short-lived. Keeping freed blocks in the
// heap instead of returning them to the kernel avoids a page fault storm on
// every forward pass.
const bool g_allocator_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
}();
}

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
    return grad;
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var leaf_parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->leaf = false;
    if (!g_grad_enabled) return Var(std::move(node));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return Var(std::move(node));
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
    return Var(std::move(node));
}

Tensor* input_grad(Node& node, std::size_t i) {
    Node& in = *node.inputs[i];
    if (!in.requires_grad) return nullptr;
    return &in.grad_buffer();
}

}  // namespace detail

void backward(const Var& root) {
    if (!root.defined()) throw StateError("backward on undefined variable");
    if (root.value().numel() != 1) throw ShapeError("backward root must be a scalar, got " + to_string(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order so deep graphs do not exhaust the stack.
    std::vector<NodePtr> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        NodePtr node = stack.back().first;
        const std::size_t next = stack.back().second;
        if (next < node->inputs.size()) {
            ++stack.back().second;
            const NodePtr& child = node->inputs[next];
            if (child->requires_grad && !child->leaf && visited.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().fill(Real(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        if (node->grad.empty()) continue;  // no path carried gradient here
        if (node->backward_fn) node->backward_fn(*node);
        node->grad.release();
        node->backward_fn = nullptr;
        node->inputs.clear();
    }
}

}  // namespace nasdet
