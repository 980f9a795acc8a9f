#include <doctest.h>

#include <cmath>
#include <random>

#include "cgcce/ops.hpp"
#include "cgcce/pvt_encoder.hpp"
#include "gradcheck.hpp"

using namespace cgcce;
using gradcheck::random_tensor;

TEST_CASE("toy pyramid shapes at 256") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    const ModelConfig cfg = ModelConfig::toy();
    PvtEncoder enc(store, "enc", cfg, rng);
    std::mt19937_64 g(2);
    NoGradGuard guard;
    const FeaturePyramid p = enc.encode(Var(random_tensor({1, 3, 256, 256}, g, 0, 1)));
    CHECK(p.scales[0].shape() == Shape{1, 16, 64, 64});
    CHECK(p.scales[1].shape() == Shape{1, 32, 32, 32});
    CHECK(p.scales[2].shape() == Shape{1, 64, 16, 16});
    CHECK(p.scales[3].shape() == Shape{1, 128, 8, 8});
    CHECK_NOTHROW(check_pyramid(p, cfg, 256, 256));
}

TEST_CASE("encoding is pure and batch-independent") {
    nn::ParameterStore store;
    nn::Rng rng(3);
    ModelConfig cfg = ModelConfig::toy();
    cfg.tile_size = 64;
    PvtEncoder enc(store, "enc", cfg, rng);
    std::mt19937_64 g(4);
    Tensor a = random_tensor({1, 3, 64, 64}, g, 0, 1), b = random_tensor({1, 3, 64, 64}, g, 0, 1);
    NoGradGuard guard;
    const FeaturePyramid pa = enc.encode(Var(a)), pa2 = enc.encode(Var(a)), pb = enc.encode(Var(b));
    Tensor both({2, 3, 64, 64});
    std::copy_n(a.data(), a.numel(), both.data());
    std::copy_n(b.data(), b.numel(), both.data() + a.numel());
    const FeaturePyramid pab = enc.encode(Var(both));
    for (int j = 0; j < kNumScales; ++j) {
        CHECK(bitwise_equal(pa.scales[j].value(), pa2.scales[j].value()));
        const Tensor& joint = pab.scales[j].value();
        const std::int64_t per = joint.numel() / 2;
        double diff = 0;
        for (std::int64_t i = 0; i < per; ++i) {
            diff = std::max(diff, std::abs(joint[i] - pa.scales[j].value()[i]));
            diff = std::max(diff, std::abs(joint[per + i] - pb.scales[j].value()[i]));
        }
        CHECK(diff < 1e-12);
    }
}

TEST_CASE("wrong input extent is a shape error") {
    nn::ParameterStore store;
    nn::Rng rng(5);
    ModelConfig cfg = ModelConfig::toy();
    cfg.tile_size = 64;
    PvtEncoder enc(store, "enc", cfg, rng);
    CHECK_THROWS_AS((void)enc.encode(Var(Tensor({1, 3, 32, 32}))), ShapeError);
    CHECK_THROWS_AS((void)enc.encode(Var(Tensor({1, 4, 64, 64}))), ShapeError);
}

namespace {

// softmax(Q K^T / sqrt(d)) V per head on token-major matrices.
Tensor vanilla_attention(const Tensor& x, const SraAttention& a) {
    NoGradGuard guard;
    const std::int64_t c = x.dim(1), t = x.dim(2) * x.dim(3), d = c / a.heads;
    const Tensor q = a.query(Var(x)).value(), k = a.key(Var(x)).value(), v = a.value(Var(x)).value();
    Tensor mixed(x.shape());
    for (int h = 0; h < a.heads; ++h) {
        for (std::int64_t i = 0; i < t; ++i) {
            std::vector<double> s(static_cast<std::size_t>(t));
            double mx = -1e300;
            for (std::int64_t j = 0; j < t; ++j) {
                double dot = 0;
                for (std::int64_t e = 0; e < d; ++e) dot += q[(h * d + e) * t + i] * k[(h * d + e) * t + j];
                s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
                mx = std::max(mx, s[static_cast<std::size_t>(j)]);
            }
            double z = 0;
            for (double& e : s) z += (e = std::exp(e - mx));
            for (std::int64_t e = 0; e < d; ++e) {
                double acc = 0;
                for (std::int64_t j = 0; j < t; ++j) acc += s[static_cast<std::size_t>(j)] / z * v[(h * d + e) * t + j];
                mixed[(h * d + e) * t + i] = acc;
            }
        }
    }
    return a.proj(Var(mixed)).value();
}

}  // namespace

TEST_CASE("reduction 1 equals plain multi-head self-attention") {
    nn::ParameterStore store;
    nn::Rng rng(6);
    SraAttention a(store, "sra", 8, 2, 1, rng);
    std::mt19937_64 g(7);
    Tensor x = random_tensor({1, 8, 5, 6}, g);
    NoGradGuard guard;
    CHECK(max_abs_diff(spatial_reduction_attention(Var(x), a).value(), vanilla_attention(x, a)) < 1e-12);
}

TEST_CASE("attention rows sum to one") {
    nn::ParameterStore store;
    nn::Rng rng(8);
    SraAttention a(store, "sra", 16, 2, 4, rng);
    std::mt19937_64 g(9);
    Tensor w;
    Var y = spatial_reduction_attention(Var(random_tensor({2, 16, 8, 8}, g, -4, 4)), a, &w);
    CHECK(y.shape() == Shape{2, 16, 8, 8});
    CHECK(w.shape() == Shape{4, 64, 4});
    for (std::int64_t r = 0; r < 4 * 64; ++r) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += w[r * 4 + k];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    CHECK_THROWS_AS(spatial_reduction_attention(Var(Tensor({1, 16, 6, 6})), a), ShapeError);
}

TEST_CASE("spatial reduction attention gradient") {
    nn::ParameterStore store;
    nn::Rng rng(10);
    SraAttention a(store, "sra", 8, 2, 2, rng);
    std::mt19937_64 g(11);
    Var x(random_tensor({2, 8, 6, 6}, g), true);
    auto wrt = gradcheck::params(store);
    wrt.emplace_back("x", x);
    gradcheck::Options o;
    const auto r = gradcheck::check([&] { return spatial_reduction_attention(x, a); }, wrt, o);
    INFO(r.worst);
    CHECK(r.passed(o));
}

TEST_CASE("encoder stage gradient") {
    nn::ParameterStore store;
    nn::Rng rng(12);
    ModelConfig cfg = ModelConfig::toy();
    cfg.tile_size = 32;
    cfg.sra_reduction = {4, 2, 1, 1};
    PvtEncoder enc(store, "enc", cfg, rng);
    std::mt19937_64 g(13);
    Var x(random_tensor({1, 3, 32, 32}, g, 0, 1), true);
    auto wrt = gradcheck::params(store, "enc.stage1");
    wrt.emplace_back("x", x);
    gradcheck::Options o;
    o.coords_per_tensor = 4;
    const auto r = gradcheck::check([&] { return enc.encode(x).scales[1]; }, wrt, o);
    INFO(r.worst << " kinks " << r.kinks);
    CHECK(r.passed(o));
}
