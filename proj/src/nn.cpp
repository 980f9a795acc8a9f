#include "cgcce/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "cgcce/ops.hpp"

namespace cgcce::nn {

Var ParameterStore::add(std::string name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Var v(std::move(init), true);
    entries_.emplace_back(std::move(name), v);
    return v;
}

Var ParameterStore::get(std::string_view name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw std::out_of_range("unknown parameter: " + std::string(name));
}

bool ParameterStore::contains(std::string_view name) const {
    for (const auto& entry : entries_)
        if (entry.first == name) return true;
    return false;
}

std::int64_t ParameterStore::count(std::string_view prefix) const {
    std::int64_t total = 0;
    for (const auto& [n, v] : entries_)
        if (n.starts_with(prefix)) total += v.value().numel();
    return total;
}

void ParameterStore::zero_grad() {
    for (auto& entry : entries_) entry.second.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    if (other.entries_.size() != entries_.size()) throw std::invalid_argument("parameter layouts differ");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != other.entries_[i].first ||
            entries_[i].second.shape() != other.entries_[i].second.shape()) {
            throw std::invalid_argument("parameter layouts differ at " + entries_[i].first);
        }
        entries_[i].second.mutable_value() = other.entries_[i].second.value();
    }
}

Tensor trunc_normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.values()) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        v = z * stddev;
    }
    return t;
}

Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

int default_groups(std::int64_t channels) {
    for (int g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
               Rng& rng, int stride_, int padding_, Init init, bool depthwise)
    : stride(stride_), padding(padding_ < 0 ? kernel / 2 : padding_), groups(depthwise ? static_cast<int>(in) : 1) {
    if (depthwise && in != out) throw std::invalid_argument(name + ": depth-wise conv needs in == out");
    const std::int64_t per_group_in = depthwise ? 1 : in;
    Shape wshape{out, per_group_in, kernel, kernel};
    Tensor w = init == Init::kTruncNormal ? trunc_normal(wshape, 0.02, rng)
                                          : kaiming_normal(wshape, per_group_in * kernel * kernel, rng);
    weight = store.add(name + ".weight", std::move(w));
    bias = store.add(name + ".bias", Tensor({out}));
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, padding, groups); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::int64_t channels)
    : gamma(store.add(name + ".gamma", Tensor({channels}, 1.0))), beta(store.add(name + ".beta", Tensor({channels}))) {}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm_channels(x, gamma, beta); }

GroupNorm::GroupNorm(ParameterStore& store, const std::string& name, std::int64_t channels)
    : gamma(store.add(name + ".gamma", Tensor({channels}, 1.0))),
      beta(store.add(name + ".beta", Tensor({channels}))),
      groups(default_groups(channels)) {}

Var GroupNorm::operator()(const Var& x) const { return ops::group_norm(x, groups, gamma, beta); }

}  // namespace cgcce::nn
