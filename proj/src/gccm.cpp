#include "cgcce/gccm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cgcce/ops.hpp"

namespace cgcce {

using nn::Conv2d;

ChannelAttention::ChannelAttention(nn::ParameterStore& store, const std::string& name, int channels, nn::Rng& rng) {
    const int hidden = std::max(1, channels / 8);
    fc1 = Conv2d(store, name + ".fc1", channels, hidden, 1, rng, 1, 0);
    fc2 = Conv2d(store, name + ".fc2", hidden, channels, 1, rng, 1, 0);
}

SpatialAttention::SpatialAttention(nn::ParameterStore& store, const std::string& name, nn::Rng& rng)
    : conv(store, name + ".conv", 2, 1, 7, rng, 1, 3) {}

Var channel_attention(const Var& f, const ChannelAttention& p, Tensor* gate) {
    auto mlp = [&](const Var& d) { return p.fc2(ops::relu(p.fc1(d))); };
    Var g = ops::sigmoid(ops::add(mlp(ops::global_avg_pool(f)), mlp(ops::global_max_pool(f))));
    if (gate) *gate = g.value();
    return ops::mul(f, g);
}

Var spatial_attention(const Var& f, const SpatialAttention& p, Tensor* gate) {
    Var s = ops::sigmoid(p.conv(ops::concat_channels({ops::channel_mean(f), ops::channel_max(f)})));
    if (gate) *gate = s.value();
    return ops::mul(f, s);
}

double angle_similarity_exact(double dot) {
    if (!std::isfinite(dot)) throw std::invalid_argument("angle_similarity_exact: non-finite input");
    dot = std::clamp(dot, -1.0, 1.0);
    return 1.0 - (std::numbers::pi / 2.0 - std::asin(dot)) / std::numbers::pi;
}

double angle_similarity_exact(std::span<const double> q, std::span<const double> k) {
    if (q.size() != k.size()) throw ShapeError("angle_similarity_exact: vector lengths differ");
    double dot = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (!std::isfinite(q[i]) || !std::isfinite(k[i])) {
            throw std::invalid_argument("angle_similarity_exact: non-finite input");
        }
        dot += q[i] * k[i];
    }
    return angle_similarity_exact(dot);
}

double angle_similarity_linear(double dot) noexcept { return 0.5 + dot / std::numbers::pi; }

Var cross_correlate(const Var& q_a, const Var& k_b, const Var& v_a, double qk_scale) {
    const Shape& sq = q_a.shape();
    if (sq.size() != 3 || k_b.shape() != sq || v_a.shape() != sq) {
        throw ShapeError("cross_correlate: q/k/v must share a (batch, dim, tokens) shape, got " + to_string(sq) + ", " +
                         to_string(k_b.shape()) + ", " + to_string(v_a.shape()));
    }
    // context[i][j] = sum_n K[i,n] V[j,n]  (dim x dim)
    Var context = ops::bmm(k_b, v_a, false, true);
    // out[j,n] = sum_i context[i,j] Q[i,n]
    Var mixed = ops::bmm(context, q_a, true, false);
    return ops::add(ops::scale(v_a, 0.5), ops::scale(mixed, qk_scale / std::numbers::pi));
}

Tensor cross_correlate(const Tensor& q_a, const Tensor& k_b, const Tensor& v_a, double qk_scale) {
    if (q_a.rank() != 2 || k_b.shape() != q_a.shape() || v_a.shape() != q_a.shape()) {
        throw ShapeError("cross_correlate: expected equal tokens x dim matrices, got " + to_string(q_a.shape()) + ", " +
                         to_string(k_b.shape()) + ", " + to_string(v_a.shape()));
    }
    const std::int64_t tokens = q_a.dim(0), d = q_a.dim(1);
    auto to_cols = [&](const Tensor& t) {
        Tensor out({1, d, tokens});
        for (std::int64_t n = 0; n < tokens; ++n)
            for (std::int64_t i = 0; i < d; ++i) out[i * tokens + n] = t[n * d + i];
        return Var(std::move(out));
    };
    NoGradGuard guard;
    Var h = cross_correlate(to_cols(q_a), to_cols(k_b), to_cols(v_a), qk_scale);
    Tensor out({tokens, d});
    for (std::int64_t n = 0; n < tokens; ++n)
        for (std::int64_t i = 0; i < d; ++i) out[n * d + i] = h.value()[i * tokens + n];
    return out;
}

GccmParams::GccmParams(nn::ParameterStore& store, const std::string& name, int channels, int heads_, nn::Rng& rng)
    : channel(store, name + ".ca", channels, rng), spatial(store, name + ".sa", rng), heads(heads_) {
    if (channels % heads != 0) throw ConfigError(name + ": channels not divisible by heads");
    const auto tn = Conv2d::Init::kTruncNormal;
    query = Conv2d(store, name + ".q", channels, channels, 1, rng, 1, 0, tn);
    key = Conv2d(store, name + ".k", channels, channels, 1, rng, 1, 0, tn);
    value = Conv2d(store, name + ".v", channels, channels, 1, rng, 1, 0, tn);
}

std::pair<Var, Var> gccm_forward(const Var& t1, const Var& t2, const GccmParams& p) {
    if (t1.shape() != t2.shape() || t1.shape().size() != 4) {
        throw ShapeError("gccm_forward: inputs differ " + to_string(t1.shape()) + " vs " + to_string(t2.shape()));
    }
    const Shape& s = t1.shape();
    const std::int64_t n = s[0], c = s[1], tokens = s[2] * s[3];
    const std::int64_t d = c / p.heads;
    const Shape token_shape{n * p.heads, d, tokens};

    Var e1 = spatial_attention(channel_attention(t1, p.channel), p.spatial);
    Var e2 = spatial_attention(channel_attention(t2, p.channel), p.spatial);
    Var q1 = ops::reshape(p.query(e1), token_shape), q2 = ops::reshape(p.query(e2), token_shape);
    Var k1 = ops::reshape(p.key(e1), token_shape), k2 = ops::reshape(p.key(e2), token_shape);
    Var v1 = ops::reshape(p.value(e1), token_shape), v2 = ops::reshape(p.value(e2), token_shape);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Var h1 = ops::reshape(cross_correlate(q1, k2, v1, scale), s);
    Var h2 = ops::reshape(cross_correlate(q2, k1, v2, scale), s);
    return {h1, h2};
}

}  // namespace cgcce
