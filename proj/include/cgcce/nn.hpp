#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cgcce/autograd.hpp"

namespace cgcce::nn {

using Rng = std::mt19937_64;

/// Ordered, named collection of trainable tensors. Insertion order is the
/// serialization order and the optimizer's state order.
class ParameterStore {
public:
    Var add(std::string name, Tensor init);

    [[nodiscard]] const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
    [[nodiscard]] Var get(std::string_view name) const;
    [[nodiscard]] bool contains(std::string_view name) const;

    /// Number of scalars, optionally restricted to names starting with prefix.
    [[nodiscard]] std::int64_t count(std::string_view prefix = {}) const;

    void zero_grad();
    /// Copies values (not graph state) from another store with identical layout.
    void copy_values_from(const ParameterStore& other);

private:
    std::vector<std::pair<std::string, Var>> entries_;
};

Tensor trunc_normal(Shape shape, double stddev, Rng& rng);
Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng);

/// Largest group count <= 8 dividing `channels`.
int default_groups(std::int64_t channels);

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    enum class Init { kKaiming, kTruncNormal };

    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
           Rng& rng, int stride = 1, int padding = -1, Init init = Init::kKaiming, bool depthwise = false);

    [[nodiscard]] Var operator()(const Var& x) const;
    [[nodiscard]] std::int64_t out_channels() const { return weight.dim(0); }
};

/// Channel-wise layer normalization applied at every spatial position.
struct LayerNorm {
    Var gamma;
    Var beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::int64_t channels);
    [[nodiscard]] Var operator()(const Var& x) const;
};

struct GroupNorm {
    Var gamma;
    Var beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParameterStore& store, const std::string& name, std::int64_t channels);
    [[nodiscard]] Var operator()(const Var& x) const;
};

}  // namespace cgcce::nn
