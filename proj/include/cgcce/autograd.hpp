#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cgcce/tensor.hpp"

namespace cgcce {

struct Node {
    Tensor value;
    Tensor grad;  // empty until a gradient flows here
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

/// Handle to a node in the reverse-mode graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Tensor& value() const { return node_->value; }
    [[nodiscard]] Tensor& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor& grad() const { return node_->grad; }
    [[nodiscard]] Tensor& mutable_grad() { return node_->grad; }
    [[nodiscard]] bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] std::int64_t dim(std::int64_t i) const { return node_->value.dim(i); }
    [[nodiscard]] const std::shared_ptr<Node>& node() const noexcept { return node_; }

    void zero_grad() { node_->grad = Tensor(); }

    /// Reverse sweep seeded with ones (the usual case is a scalar loss).
    void backward() const;
    void backward(const Tensor& seed) const;

private:
    std::shared_ptr<Node> node_;
};

/// Builds the result node of an operation. The backward closure is kept only
/// when gradients are enabled and at least one input requires them.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

bool grad_enabled() noexcept;

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Thread-local multiply-accumulate tally for convolutions, linear maps and
/// attention products. In dry-run mode those ops emit zero outputs of the
/// right shape instead of computing them.
class FlopCounter {
public:
    explicit FlopCounter(bool dry_run = false);
    ~FlopCounter();
    FlopCounter(const FlopCounter&) = delete;
    FlopCounter& operator=(const FlopCounter&) = delete;

    [[nodiscard]] std::int64_t flops() const noexcept { return 2 * macs_; }
    [[nodiscard]] std::int64_t macs() const noexcept { return macs_; }

    static void record_macs(std::int64_t macs) noexcept;
    static bool dry_run() noexcept;

private:
    std::int64_t macs_ = 0;
    bool dry_run_;
    FlopCounter* previous_;
};

}  // namespace cgcce
