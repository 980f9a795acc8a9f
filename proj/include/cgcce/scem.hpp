#pragma once

#include <string>
#include <vector>

#include "cgcce/core_types.hpp"
#include "cgcce/nn.hpp"

namespace cgcce {

struct ScemParams {
    std::vector<nn::Conv2d> branches;  // one k x k, channel-preserving conv per kernel size
    nn::Conv2d aggregate;              // 1x1 over the summed branches
    nn::Conv2d context;                // 1x1 ahead of global pooling

    ScemParams() = default;
    ScemParams(nn::ParameterStore& store, const std::string& name, int channels, const std::vector<int>& kernels,
               nn::Rng& rng);
};

/// c + MC * GC with MC = conv1x1(sum_k conv_k(c)) and
/// GC = sigmoid(avgpool(conv1x1(c))), a per-channel gate. `gate`, if given,
/// receives GC (N x C x 1 x 1).
Var scem_forward(const Var& c, const ScemParams& params, Tensor* gate = nullptr);

}  // namespace cgcce
