#pragma once

#include <cstdint>
#include <vector>

#include "cgcce/autograd.hpp"

/// Differentiable tensor operations. Feature maps are NCHW; token matrices
/// inside attention are laid out (batch*heads) x dim x tokens so that heads
/// are contiguous channel blocks of a feature map.
namespace cgcce::ops {

// Elementwise with broadcasting over equal-rank shapes (each dim equal or 1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

Var abs(const Var& x);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end);
Var reshape(const Var& x, Shape shape);

/// 2-D convolution. `bias` may be undefined. Supported groups: 1 or
/// depth-wise (groups == in_channels == out_channels).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride = 1, int padding = 0, int groups = 1);

Var global_avg_pool(const Var& x);  // N,C,1,1
Var global_max_pool(const Var& x);  // N,C,1,1
Var channel_mean(const Var& x);     // N,1,H,W
Var channel_max(const Var& x);      // N,1,H,W
Var avg_pool(const Var& x, int kernel);
Var upsample_bilinear(const Var& x, int factor);

/// Per-pixel normalization over channels.
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Batched matrix product of rank-3 tensors with optional transposes.
Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b);
Var softmax_last(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// sum(x * weights) with a constant weight tensor.
Var weighted_sum(const Var& x, const Tensor& weights);

}  // namespace cgcce::ops
