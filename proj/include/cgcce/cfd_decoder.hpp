#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "cgcce/cgrr.hpp"
#include "cgcce/core_types.hpp"
#include "cgcce/gccm.hpp"
#include "cgcce/nn.hpp"
#include "cgcce/pvt_encoder.hpp"
#include "cgcce/scem.hpp"

namespace cgcce {

/// Bidirectional cross attention between the difference branch (a) and the
/// projected concatenation branch (b) of one scale.
struct CrossFuseParams {
    nn::Conv2d query_a, key_b, value_b;  // a attends to b
    nn::Conv2d query_b, key_a, value_a;  // b attends to a
    nn::Conv2d reduce;                   // 2c -> c, shared with the concat-only fallback
    int heads = 1;
    int kv_pool = 1;  // average-pool factor applied to keys/values

    CrossFuseParams() = default;
    CrossFuseParams(nn::ParameterStore& store, const std::string& name, int channels, int heads, int kv_pool,
                    nn::Rng& rng);
};

/// reduce([a + attn(a <- b), b + attn(b <- a)]). `weights`, if given,
/// receives the two softmax matrices (a<-b, b<-a).
Var cross_fuse(const Var& a, const Var& b, const CrossFuseParams& params, std::array<Tensor, 2>* weights = nullptr);

/// Channel concatenation followed by the same 1x1 reduction (no attention).
Var concat_fuse(const Var& a, const Var& b, const CrossFuseParams& params);

struct ReconstructParams {
    std::array<nn::Conv2d, kNumScales - 1> align;  // c_{j+1} -> c_j before each merge
    nn::Conv2d head_conv1;
    nn::GroupNorm head_norm1;
    nn::Conv2d head_conv2;
    nn::GroupNorm head_norm2;
    nn::Conv2d classifier;  // c_1 -> 1 logit

    ReconstructParams() = default;
    ReconstructParams(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg, nn::Rng& rng);
};

/// Top-down merge from stride 32 to 4, two conv blocks, x4 bilinear
/// upsampling and a 1x1 projection. Returns N x 1 x H x W logits.
Var reconstruct(const std::array<Var, kNumScales>& fused, const ReconstructParams& params);

/// Intermediate maps of one forward pass, for inspection.
struct ForwardTrace {
    FeaturePyramid pyramid_t1;
    FeaturePyramid pyramid_t2;
    std::array<Var, kNumScales> diff;    // D_j as it enters the decoder
    std::array<Var, kNumScales> concat;  // C_j as it enters the decoder
    std::array<Var, kNumScales> fused;
};

/// Complete change-detection network. Every module's parameters exist
/// regardless of the enable flags; disabled modules are bypassed.
class CgcceNet {
public:
    CgcceNet(const ModelConfig& cfg, std::uint64_t seed);
    CgcceNet(const CgcceNet&) = delete;
    CgcceNet& operator=(const CgcceNet&) = delete;
    CgcceNet(CgcceNet&&) = default;
    CgcceNet& operator=(CgcceNet&&) = default;

    /// t1, t2: N x 3 x H x W. Returns N x 1 x H x W change logits.
    [[nodiscard]] Var forward(const Var& t1, const Var& t2, ForwardTrace* trace = nullptr) const;

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    /// Switches modules on or off; structural fields must not change.
    void set_module_flags(bool gccm, bool cgrr, bool scem, bool cfd);

    [[nodiscard]] nn::ParameterStore& parameters() noexcept { return store_; }
    [[nodiscard]] const nn::ParameterStore& parameters() const noexcept { return store_; }

    [[nodiscard]] const PvtEncoder& encoder() const noexcept { return encoder_; }
    [[nodiscard]] const CgrrParams& cgrr() const noexcept { return cgrr_; }
    [[nodiscard]] const GccmParams& gccm(int scale) const { return gccm_.at(static_cast<std::size_t>(scale - 3)); }
    [[nodiscard]] const ScemParams& scem(int scale) const { return scem_.at(static_cast<std::size_t>(scale - 1)); }
    [[nodiscard]] const CrossFuseParams& cross(int scale) const { return cross_.at(static_cast<std::size_t>(scale - 1)); }
    [[nodiscard]] const ReconstructParams& head() const noexcept { return recon_; }

private:
    ModelConfig cfg_;
    nn::ParameterStore store_;
    PvtEncoder encoder_;
    CgrrParams cgrr_;
    std::array<GccmParams, 2> gccm_;
    std::array<ScemParams, kNumScales> scem_;
    std::array<nn::Conv2d, kNumScales> concat_proj_;  // 2 c_j -> c_j
    std::array<CrossFuseParams, kNumScales> cross_;
    ReconstructParams recon_;
};

/// Stacks samples into N x 3 x H x W tensors.
std::pair<Tensor, Tensor> stack_images(std::span<const BiTemporalSample* const> samples);

/// Logits (1 x H x W) for one sample.
Tensor full_forward(const BiTemporalSample& sample, const CgcceNet& net);

}  // namespace cgcce
