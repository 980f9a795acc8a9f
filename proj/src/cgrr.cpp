#include "cgcce/cgrr.hpp"

#include "cgcce/ops.hpp"

namespace cgcce {

FusionPair fuse_pair(const Var& t1, const Var& t2) {
    if (t1.shape() != t2.shape()) {
        throw ShapeError("fuse_pair: shape mismatch " + to_string(t1.shape()) + " vs " + to_string(t2.shape()));
    }
    return {ops::abs(ops::sub(t1, t2)), ops::concat_channels({t1, t2})};
}

Var refine_concat(const Var& c, const Var& feedback) {
    if (c.shape() != feedback.shape()) {
        throw ShapeError("refine_concat: shape mismatch " + to_string(c.shape()) + " vs " + to_string(feedback.shape()));
    }
    return ops::add(c, feedback);
}

ConvStack::ConvStack(nn::ParameterStore& store, const std::string& name, int in, int out, nn::Rng& rng)
    : conv1(store, name + ".conv1", in, out, 3, rng),
      norm1(store, name + ".norm1", out),
      conv2(store, name + ".conv2", out, out, 3, rng),
      norm2(store, name + ".norm2", out) {}

Var ConvStack::operator()(const Var& x) const {
    Var y = ops::relu(norm1(conv1(x)));
    return ops::relu(norm2(conv2(y)));
}

CgrrParams::CgrrParams(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg, nn::Rng& rng) {
    const int c1 = cfg.stage_channels[0];
    entry_skip = nn::Conv2d(store, name + ".skip1", c1, 2 * c1, 1, rng, 1, 0);
    stages[0] = ConvStack(store, name + ".stage1", c1, 2 * c1, rng);
    for (int j = 1; j < kNumScales; ++j) {
        const int in = 2 * cfg.stage_channels[j - 1];
        const int out = 2 * cfg.stage_channels[j];
        transitions[j - 1] = nn::Conv2d(store, name + ".down" + std::to_string(j + 1), in, out, 3, rng, 2, 1);
        stages[j] = ConvStack(store, name + ".stage" + std::to_string(j + 1), out, out, rng);
    }
}

std::array<Var, kNumScales> cgrr_forward(const Var& t11, const CgrrParams& p) {
    const Shape& s = t11.shape();
    if (s.size() != 4 || s[1] != p.entry_skip.weight.dim(1)) {
        throw ShapeError("cgrr_forward: expected " + std::to_string(p.entry_skip.weight.dim(1)) +
                         "-channel scale-1 map, got " + to_string(s));
    }
    std::array<Var, kNumScales> out;
    Var x = ops::add(p.entry_skip(t11), p.stages[0](t11));
    out[0] = x;
    for (int j = 1; j < kNumScales; ++j) {
        Var entry = p.transitions[j - 1](x);
        x = ops::add(entry, p.stages[j](entry));
        out[j] = x;
    }
    return out;
}

}  // namespace cgcce
