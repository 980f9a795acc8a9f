#include "cgcce/autograd.hpp"

#include <unordered_set>

namespace cgcce {

namespace {
thread_local bool g_grad_enabled = true;
thread_local FlopCounter* g_counter = nullptr;
}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::backward() const { backward(Tensor(shape(), 1.0)); }

void Var::backward(const Tensor& seed) const {
    require_same_shape(seed, value(), "backward seed");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; reverse of it is a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Tensor& g = node_->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.numel() == n->value.numel() && !n->grad.empty()) n->backward_fn(*n);
    }
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(node));
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

FlopCounter::FlopCounter(bool dry_run) : dry_run_(dry_run), previous_(g_counter) { g_counter = this; }
FlopCounter::~FlopCounter() { g_counter = previous_; }

void FlopCounter::record_macs(std::int64_t macs) noexcept {
    if (g_counter) g_counter->macs_ += macs;
}

bool FlopCounter::dry_run() noexcept { return g_counter && g_counter->dry_run_; }

}  // namespace cgcce
