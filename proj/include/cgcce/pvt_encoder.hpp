#pragma once

#include <string>
#include <vector>

#include "cgcce/core_types.hpp"
#include "cgcce/nn.hpp"

namespace cgcce {

inline constexpr int kMlpRatio = 4;

/// Multi-head self-attention whose keys/values come from a grid shrunk by
/// `reduction` with a strided convolution.
struct SraAttention {
    nn::Conv2d query;
    nn::Conv2d key;
    nn::Conv2d value;
    nn::Conv2d proj;
    nn::Conv2d reduce;  // only when reduction > 1
    nn::LayerNorm reduce_norm;
    int heads = 1;
    int reduction = 1;

    SraAttention() = default;
    SraAttention(nn::ParameterStore& store, const std::string& name, int channels, int heads, int reduction,
                 nn::Rng& rng);
};

/// Output has the input's shape. When `weights` is given it receives the
/// softmax matrix, shaped (batch*heads) x queries x keys.
Var spatial_reduction_attention(const Var& x, const SraAttention& attn, Tensor* weights = nullptr);

/// Feed-forward with a depth-wise 3x3 convolution supplying position cues.
struct MixFfn {
    nn::Conv2d fc1;
    nn::Conv2d depthwise;
    nn::Conv2d fc2;

    MixFfn() = default;
    MixFfn(nn::ParameterStore& store, const std::string& name, int channels, nn::Rng& rng);
    [[nodiscard]] Var operator()(const Var& x) const;
};

struct TransformerBlock {
    nn::LayerNorm norm1;
    SraAttention attn;
    nn::LayerNorm norm2;
    MixFfn ffn;

    [[nodiscard]] Var operator()(const Var& x) const;
};

struct EncoderStage {
    nn::Conv2d patch_embed;
    nn::LayerNorm embed_norm;
    std::vector<TransformerBlock> blocks;
    nn::LayerNorm norm;

    [[nodiscard]] Var operator()(const Var& x) const;
};

/// Four-stage pyramid transformer. One instance serves both acquisition
/// dates, so the two branches share every weight.
class PvtEncoder {
public:
    PvtEncoder() = default;
    PvtEncoder(nn::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, nn::Rng& rng);

    /// images: N x 3 x H x W with H = W = cfg.tile_size.
    [[nodiscard]] FeaturePyramid encode(const Var& images) const;
    [[nodiscard]] const EncoderStage& stage(int j) const { return stages_[static_cast<std::size_t>(j)]; }

private:
    ModelConfig cfg_;
    std::vector<EncoderStage> stages_;
};

}  // namespace cgcce
