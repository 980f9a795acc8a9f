#pragma once

#include <array>
#include <string>

#include "cgcce/core_types.hpp"
#include "cgcce/nn.hpp"

namespace cgcce {

/// Difference (c_j channels) and concatenation (2 c_j channels) branches of one scale.
struct FusionPair {
    Var d;
    Var c;
};

/// d = |t1 - t2|, c = [t1 || t2] along channels.
FusionPair fuse_pair(const Var& t1, const Var& t2);

/// Elementwise sum used to fold residual feedback into a concatenated map.
Var refine_concat(const Var& c, const Var& feedback);

/// conv3x3 -> norm -> ReLU, twice.
struct ConvStack {
    nn::Conv2d conv1;
    nn::GroupNorm norm1;
    nn::Conv2d conv2;
    nn::GroupNorm norm2;

    ConvStack() = default;
    ConvStack(nn::ParameterStore& store, const std::string& name, int in, int out, nn::Rng& rng);
    [[nodiscard]] Var operator()(const Var& x) const;
};

/// Residual texture branch fed by the time-1 stride-4 features. Stage 1
/// projects c_1 -> 2 c_1 through a 1x1 skip; later stages enter through a
/// stride-2 3x3 transition and keep an identity skip.
struct CgrrParams {
    nn::Conv2d entry_skip;
    std::array<nn::Conv2d, kNumScales - 1> transitions;
    std::array<ConvStack, kNumScales> stages;

    CgrrParams() = default;
    CgrrParams(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg, nn::Rng& rng);
};

/// One output per pyramid scale j: 2 c_j channels at stride 4 * 2^j.
std::array<Var, kNumScales> cgrr_forward(const Var& t11, const CgrrParams& params);

}  // namespace cgcce
