#include "cgcce/cfd_decoder.hpp"

#include <algorithm>
#include <cmath>

#include "cgcce/ops.hpp"

namespace cgcce {

using nn::Conv2d;

CrossFuseParams::CrossFuseParams(nn::ParameterStore& store, const std::string& name, int channels, int heads_,
                                 int kv_pool_, nn::Rng& rng)
    : heads(heads_), kv_pool(kv_pool_) {
    const auto tn = Conv2d::Init::kTruncNormal;
    query_a = Conv2d(store, name + ".q_a", channels, channels, 1, rng, 1, 0, tn);
    key_b = Conv2d(store, name + ".k_b", channels, channels, 1, rng, 1, 0, tn);
    value_b = Conv2d(store, name + ".v_b", channels, channels, 1, rng, 1, 0, tn);
    query_b = Conv2d(store, name + ".q_b", channels, channels, 1, rng, 1, 0, tn);
    key_a = Conv2d(store, name + ".k_a", channels, channels, 1, rng, 1, 0, tn);
    value_a = Conv2d(store, name + ".v_a", channels, channels, 1, rng, 1, 0, tn);
    reduce = Conv2d(store, name + ".reduce", 2 * channels, channels, 1, rng, 1, 0);
}

namespace {

Var attend(const Var& queries, const Var& memory, const Conv2d& wq, const Conv2d& wk, const Conv2d& wv, int heads,
           int pool, Tensor* weights) {
    const Shape& s = queries.shape();
    const std::int64_t n = s[0], c = s[1], d = c / heads;
    Var mem = ops::avg_pool(memory, pool);
    const std::int64_t kv_tokens = mem.dim(2) * mem.dim(3);
    Var q = ops::reshape(wq(queries), {n * heads, d, s[2] * s[3]});
    Var k = ops::reshape(wk(mem), {n * heads, d, kv_tokens});
    Var v = ops::reshape(wv(mem), {n * heads, d, kv_tokens});
    Var probs = ops::softmax_last(ops::scale(ops::bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(d))));
    if (weights) *weights = probs.value();
    return ops::reshape(ops::bmm(v, probs, false, true), s);
}

}  // namespace

Var cross_fuse(const Var& a, const Var& b, const CrossFuseParams& p, std::array<Tensor, 2>* weights) {
    if (a.shape() != b.shape() || a.shape().size() != 4) {
        throw ShapeError("cross_fuse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Var a_from_b = attend(a, b, p.query_a, p.key_b, p.value_b, p.heads, p.kv_pool, weights ? &(*weights)[0] : nullptr);
    Var b_from_a = attend(b, a, p.query_b, p.key_a, p.value_a, p.heads, p.kv_pool, weights ? &(*weights)[1] : nullptr);
    return p.reduce(ops::concat_channels({ops::add(a, a_from_b), ops::add(b, b_from_a)}));
}

Var concat_fuse(const Var& a, const Var& b, const CrossFuseParams& p) {
    if (a.shape() != b.shape()) {
        throw ShapeError("concat_fuse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    return p.reduce(ops::concat_channels({a, b}));
}

ReconstructParams::ReconstructParams(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                     nn::Rng& rng) {
    for (int j = 0; j < kNumScales - 1; ++j) {
        align[j] = Conv2d(store, name + ".align" + std::to_string(j + 1), cfg.stage_channels[j + 1],
                          cfg.stage_channels[j], 1, rng, 1, 0);
    }
    const int c1 = cfg.stage_channels[0];
    head_conv1 = Conv2d(store, name + ".conv1", c1, c1, 3, rng);
    head_norm1 = nn::GroupNorm(store, name + ".norm1", c1);
    head_conv2 = Conv2d(store, name + ".conv2", c1, c1, 3, rng);
    head_norm2 = nn::GroupNorm(store, name + ".norm2", c1);
    classifier = Conv2d(store, name + ".classifier", c1, 1, 1, rng, 1, 0);
}

Var reconstruct(const std::array<Var, kNumScales>& fused, const ReconstructParams& p) {
    Var acc = fused[kNumScales - 1];
    for (int j = kNumScales - 2; j >= 0; --j) {
        Var up = ops::upsample_bilinear(p.align[j](acc), 2);
        if (up.shape() != fused[j].shape()) {
            throw ShapeError("reconstruct: scale " + std::to_string(j + 1) + " expected " + to_string(up.shape()) +
                             ", got " + to_string(fused[j].shape()));
        }
        acc = ops::add(up, fused[j]);
    }
    Var y = ops::relu(p.head_norm1(p.head_conv1(acc)));
    y = ops::relu(p.head_norm2(p.head_conv2(y)));
    return p.classifier(ops::upsample_bilinear(y, 4));
}

CgcceNet::CgcceNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(validate_config(cfg)) {
    nn::Rng rng(seed);
    encoder_ = PvtEncoder(store_, "encoder", cfg_, rng);
    cgrr_ = CgrrParams(store_, "cgrr", cfg_, rng);
    for (int j = 2; j < kNumScales; ++j) {
        gccm_[static_cast<std::size_t>(j - 2)] =
            GccmParams(store_, "gccm" + std::to_string(j + 1), cfg_.stage_channels[j], cfg_.attn_heads[j], rng);
    }
    for (int j = 0; j < kNumScales; ++j) {
        const int c = cfg_.stage_channels[j];
        scem_[j] = ScemParams(store_, "scem" + std::to_string(j + 1), 2 * c, cfg_.scem_kernels, rng);
        concat_proj_[j] = Conv2d(store_, "decoder.proj" + std::to_string(j + 1), 2 * c, c, 1, rng, 1, 0);
        cross_[j] = CrossFuseParams(store_, "decoder.cross" + std::to_string(j + 1), c, cfg_.attn_heads[j],
                                    j < 2 ? 4 : 1, rng);
    }
    recon_ = ReconstructParams(store_, "decoder.head", cfg_, rng);
}

void CgcceNet::set_module_flags(bool gccm, bool cgrr, bool scem, bool cfd) {
    cfg_.enable_gccm = gccm;
    cfg_.enable_cgrr = cgrr;
    cfg_.enable_scem = scem;
    cfg_.enable_cfd = cfd;
}

Var CgcceNet::forward(const Var& t1, const Var& t2, ForwardTrace* trace) const {
    if (t1.shape() != t2.shape()) {
        throw ShapeError("forward: image shapes differ " + to_string(t1.shape()) + " vs " + to_string(t2.shape()));
    }
    const FeaturePyramid p1 = encoder_.encode(t1);
    const FeaturePyramid p2 = encoder_.encode(t2);

    std::array<Var, kNumScales> diff, concat;
    for (int j = 0; j < kNumScales; ++j) {
        FusionPair pair = fuse_pair(p1.scales[j], p2.scales[j]);
        diff[j] = pair.d;
        concat[j] = pair.c;
    }
    if (cfg_.enable_cgrr) {
        const auto feedback = cgrr_forward(p1.scales[0], cgrr_);
        for (int j = 0; j < kNumScales; ++j) concat[j] = refine_concat(concat[j], feedback[j]);
    }
    if (cfg_.enable_gccm) {
        for (int j = 2; j < kNumScales; ++j) {
            auto [h1, h2] = gccm_forward(p1.scales[j], p2.scales[j], gccm_[static_cast<std::size_t>(j - 2)]);
            diff[j] = ops::add(diff[j], ops::abs(ops::sub(h1, h2)));
        }
    }
    if (cfg_.enable_scem) {
        for (int j = 0; j < kNumScales; ++j) concat[j] = scem_forward(concat[j], scem_[j]);
    }
    std::array<Var, kNumScales> fused;
    for (int j = 0; j < kNumScales; ++j) {
        Var b = concat_proj_[j](concat[j]);
        fused[j] = cfg_.enable_cfd ? cross_fuse(diff[j], b, cross_[j]) : concat_fuse(diff[j], b, cross_[j]);
    }
    if (trace) {
        trace->pyramid_t1 = p1;
        trace->pyramid_t2 = p2;
        trace->diff = diff;
        trace->concat = concat;
        trace->fused = fused;
    }
    return reconstruct(fused, recon_);
}

std::pair<Tensor, Tensor> stack_images(std::span<const BiTemporalSample* const> samples) {
    if (samples.empty()) throw std::invalid_argument("stack_images: empty batch");
    const Shape& s = samples.front()->image_t1.shape();
    const auto n = static_cast<std::int64_t>(samples.size());
    Tensor a({n, s[0], s[1], s[2]});
    Tensor b({n, s[0], s[1], s[2]});
    const std::int64_t per = shape_numel(s);
    for (std::int64_t i = 0; i < n; ++i) {
        const BiTemporalSample& smp = *samples[static_cast<std::size_t>(i)];
        if (smp.image_t1.shape() != s || smp.image_t2.shape() != s) {
            throw ShapeError("stack_images: sample " + smp.id + " has a different extent");
        }
        std::copy_n(smp.image_t1.data(), per, a.data() + i * per);
        std::copy_n(smp.image_t2.data(), per, b.data() + i * per);
    }
    return {std::move(a), std::move(b)};
}

Tensor full_forward(const BiTemporalSample& sample, const CgcceNet& net) {
    check_sample(sample, net.config().tile_size);
    NoGradGuard guard;
    const BiTemporalSample* one[] = {&sample};
    auto [a, b] = stack_images(one);
    Var logits = net.forward(Var(std::move(a)), Var(std::move(b)));
    const Shape& s = logits.shape();
    return logits.value().reshaped({1, s[2], s[3]});
}

}  // namespace cgcce
