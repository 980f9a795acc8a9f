#pragma once

#include <span>
#include <string>
#include <utility>

#include "cgcce/core_types.hpp"
#include "cgcce/nn.hpp"

namespace cgcce {

/// Squeeze-style channel gate: avg- and max-pooled descriptors share a
/// bottleneck MLP (reduction 8), summed and squashed by a sigmoid.
struct ChannelAttention {
    nn::Conv2d fc1;
    nn::Conv2d fc2;

    ChannelAttention() = default;
    ChannelAttention(nn::ParameterStore& store, const std::string& name, int channels, nn::Rng& rng);
};

/// Channel-wise mean/max maps through a 7x7 convolution and a sigmoid.
struct SpatialAttention {
    nn::Conv2d conv;

    SpatialAttention() = default;
    SpatialAttention(nn::ParameterStore& store, const std::string& name, nn::Rng& rng);
};

/// Returns f * g with g of shape N x C x 1 x 1; `gate` receives g if given.
Var channel_attention(const Var& f, const ChannelAttention& params, Tensor* gate = nullptr);
/// Returns f * s with s of shape N x 1 x H x W; `gate` receives s if given.
Var spatial_attention(const Var& f, const SpatialAttention& params, Tensor* gate = nullptr);

/// 1 - (1/pi)(pi/2 - asin(q.k)) for unit vectors; the dot is clamped to [-1,1].
double angle_similarity_exact(std::span<const double> q, std::span<const double> k);
double angle_similarity_exact(double dot);
/// First-order form 1/2 + x/pi used inside the network.
double angle_similarity_linear(double dot) noexcept;

/// Linear-angle cross-correlation on (batch, dim, tokens) tensors:
///   H = V_a / 2 + (scale / pi) * Q_a (K_b^T V_a)
/// with K_b^T V_a (dim x dim) formed first, so cost is linear in tokens.
Var cross_correlate(const Var& q_a, const Var& k_b, const Var& v_a, double qk_scale = 1.0);
/// Same product for plain tokens x dim matrices.
Tensor cross_correlate(const Tensor& q_a, const Tensor& k_b, const Tensor& v_a, double qk_scale = 1.0);

/// Per-scale cross-temporal interaction. Both dates use the same parameters.
struct GccmParams {
    ChannelAttention channel;
    SpatialAttention spatial;
    nn::Conv2d query;
    nn::Conv2d key;
    nn::Conv2d value;
    int heads = 1;

    GccmParams() = default;
    GccmParams(nn::ParameterStore& store, const std::string& name, int channels, int heads, nn::Rng& rng);
};

/// Enhances each input independently, then returns (H_1, H_2) where each
/// date's queries/values meet the other date's keys. Shapes are preserved.
std::pair<Var, Var> gccm_forward(const Var& t1, const Var& t2, const GccmParams& params);

}  // namespace cgcce
