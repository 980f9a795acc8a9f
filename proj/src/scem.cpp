#include "cgcce/scem.hpp"

#include "cgcce/ops.hpp"

namespace cgcce {

ScemParams::ScemParams(nn::ParameterStore& store, const std::string& name, int channels,
                       const std::vector<int>& kernels, nn::Rng& rng) {
    for (int k : kernels) {
        if (k % 2 == 0) throw ConfigError(name + ": kernel " + std::to_string(k) + " is even");
        branches.emplace_back(store, name + ".k" + std::to_string(k), channels, channels, k, rng, 1, k / 2);
    }
    aggregate = nn::Conv2d(store, name + ".aggregate", channels, channels, 1, rng, 1, 0);
    context = nn::Conv2d(store, name + ".context", channels, channels, 1, rng, 1, 0);
}

Var scem_forward(const Var& c, const ScemParams& p, Tensor* gate) {
    const Shape& s = c.shape();
    if (s.size() != 4 || s[1] != p.aggregate.weight.dim(0)) {
        throw ShapeError("scem_forward: expected " + std::to_string(p.aggregate.weight.dim(0)) + " channels, got " +
                         to_string(s));
    }
    Var local = p.branches.front()(c);
    for (std::size_t i = 1; i < p.branches.size(); ++i) local = ops::add(local, p.branches[i](c));
    Var mc = p.aggregate(local);
    Var gc = ops::sigmoid(ops::global_avg_pool(p.context(c)));
    if (gate) *gate = gc.value();
    return ops::add(c, ops::mul(mc, gc));
}

}  // namespace cgcce
