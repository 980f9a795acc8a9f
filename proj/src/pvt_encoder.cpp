#include "cgcce/pvt_encoder.hpp"

#include <cmath>

#include "cgcce/ops.hpp"

namespace cgcce {

using nn::Conv2d;

SraAttention::SraAttention(nn::ParameterStore& store, const std::string& name, int channels, int heads_,
                           int reduction_, nn::Rng& rng)
    : heads(heads_), reduction(reduction_) {
    if (channels % heads != 0) throw ConfigError(name + ": channels not divisible by heads");
    const auto tn = Conv2d::Init::kTruncNormal;
    query = Conv2d(store, name + ".q", channels, channels, 1, rng, 1, 0, tn);
    key = Conv2d(store, name + ".k", channels, channels, 1, rng, 1, 0, tn);
    value = Conv2d(store, name + ".v", channels, channels, 1, rng, 1, 0, tn);
    proj = Conv2d(store, name + ".proj", channels, channels, 1, rng, 1, 0, tn);
    if (reduction > 1) {
        reduce = Conv2d(store, name + ".sr", channels, channels, reduction, rng, reduction, 0, tn);
        reduce_norm = nn::LayerNorm(store, name + ".sr_norm", channels);
    }
}

Var spatial_reduction_attention(const Var& x, const SraAttention& attn, Tensor* weights) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("spatial_reduction_attention: expected NCHW input, got " + to_string(s));
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    if (h % attn.reduction != 0 || w % attn.reduction != 0) {
        throw ShapeError("spatial_reduction_attention: extent " + to_string(s) + " not divisible by reduction " +
                         std::to_string(attn.reduction));
    }
    const std::int64_t d = c / attn.heads;
    const std::int64_t tokens = h * w;

    Var kv_source = x;
    if (attn.reduction > 1) kv_source = attn.reduce_norm(attn.reduce(x));
    const std::int64_t kv_tokens = kv_source.dim(2) * kv_source.dim(3);

    Var q = ops::reshape(attn.query(x), {n * attn.heads, d, tokens});
    Var k = ops::reshape(attn.key(kv_source), {n * attn.heads, d, kv_tokens});
    Var v = ops::reshape(attn.value(kv_source), {n * attn.heads, d, kv_tokens});

    Var scores = ops::scale(ops::bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(d)));
    Var probs = ops::softmax_last(scores);
    if (weights) *weights = probs.value();
    Var out = ops::reshape(ops::bmm(v, probs, false, true), {n, c, h, w});
    return attn.proj(out);
}

MixFfn::MixFfn(nn::ParameterStore& store, const std::string& name, int channels, nn::Rng& rng) {
    const int hidden = channels * kMlpRatio;
    const auto tn = Conv2d::Init::kTruncNormal;
    fc1 = Conv2d(store, name + ".fc1", channels, hidden, 1, rng, 1, 0, tn);
    depthwise = Conv2d(store, name + ".dw", hidden, hidden, 3, rng, 1, 1, Conv2d::Init::kKaiming, true);
    fc2 = Conv2d(store, name + ".fc2", hidden, channels, 1, rng, 1, 0, tn);
}

Var MixFfn::operator()(const Var& x) const { return fc2(ops::gelu(depthwise(fc1(x)))); }

Var TransformerBlock::operator()(const Var& x) const {
    Var y = ops::add(x, spatial_reduction_attention(norm1(x), attn));
    return ops::add(y, ffn(norm2(y)));
}

Var EncoderStage::operator()(const Var& x) const {
    Var y = embed_norm(patch_embed(x));
    for (const auto& block : blocks) y = block(y);
    return norm(y);
}

PvtEncoder::PvtEncoder(nn::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
    int in = 3;
    for (int j = 0; j < kNumScales; ++j) {
        const std::string name = prefix + ".stage" + std::to_string(j + 1);
        const int c = cfg.stage_channels[j];
        EncoderStage stage;
        const int kernel = j == 0 ? 7 : 3;
        const int stride = j == 0 ? 4 : 2;
        stage.patch_embed = Conv2d(store, name + ".embed", in, c, kernel, rng, stride, kernel / 2);
        stage.embed_norm = nn::LayerNorm(store, name + ".embed_norm", c);
        for (int b = 0; b < cfg.stage_depths[j]; ++b) {
            const std::string bn = name + ".block" + std::to_string(b);
            TransformerBlock block;
            block.norm1 = nn::LayerNorm(store, bn + ".norm1", c);
            block.attn = SraAttention(store, bn + ".attn", c, cfg.attn_heads[j], cfg.sra_reduction[j], rng);
            block.norm2 = nn::LayerNorm(store, bn + ".norm2", c);
            block.ffn = MixFfn(store, bn + ".ffn", c, rng);
            stage.blocks.push_back(std::move(block));
        }
        stage.norm = nn::LayerNorm(store, name + ".norm", c);
        stages_.push_back(std::move(stage));
        in = c;
    }
}

FeaturePyramid PvtEncoder::encode(const Var& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.tile_size || s[3] != cfg_.tile_size) {
        throw ShapeError("encode: expected Nx3x" + std::to_string(cfg_.tile_size) + "x" + std::to_string(cfg_.tile_size) +
                         " input, got " + to_string(s));
    }
    FeaturePyramid pyramid;
    Var x = images;
    for (int j = 0; j < kNumScales; ++j) {
        x = stages_[static_cast<std::size_t>(j)](x);
        pyramid.scales[static_cast<std::size_t>(j)] = x;
    }
#ifndef NDEBUG
    check_pyramid(pyramid, cfg_, s[2], s[3]);
#endif
    return pyramid;
}

}  // namespace cgcce
