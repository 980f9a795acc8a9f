#include <doctest.h>

#include <cmath>
#include <random>

#include "cgcce/ops.hpp"
#include "gradcheck.hpp"

using namespace cgcce;
using gradcheck::random_tensor;

namespace {

Var leaf(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return Var(random_tensor(std::move(s), rng, lo, hi), true);
}

void expect_grad(const std::function<Var()>& f, std::vector<std::pair<std::string, Var>> wrt, double tol = 1e-5) {
    gradcheck::Options o;
    o.tolerance = tol;
    o.coords_per_tensor = 16;
    const auto r = gradcheck::check(f, std::move(wrt), o);
    INFO("worst: " << r.worst << " kinks " << r.kinks);
    CHECK(r.passed(o));
}

// Direct loop reference for a dense convolution.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const auto co = w.dim(0), k = w.dim(2);
    const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    Tensor y({n, co, oh, ow});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t r = 0; r < oh; ++r)
                for (std::int64_t c = 0; c < ow; ++c) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (std::int64_t i = 0; i < ci; ++i)
                        for (std::int64_t u = 0; u < k; ++u)
                            for (std::int64_t v = 0; v < k; ++v) {
                                const auto yy = r * stride - pad + u, xx = c * stride - pad + v;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                acc += x.at(s, i, yy, xx) * w.at(o, i, u, v);
                            }
                    y.at(s, o, r, c) = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(3);
    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{7, 4, 3}, std::tuple{3, 2, 1}, std::tuple{1, 1, 0}}) {
        Tensor x = random_tensor({3, 5, 13, 11}, rng);
        Tensor w = random_tensor({4, 5, k, k}, rng);
        Tensor b = random_tensor({4}, rng);
        Var y = ops::conv2d(Var(x), Var(w), Var(b), stride, pad);
        CHECK(max_abs_diff(y.value(), conv_reference(x, w, b, stride, pad)) < 1e-12);
    }
}

TEST_CASE("depth-wise conv2d matches per-channel dense convolutions") {
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({2, 3, 9, 9}, rng);
    Tensor w = random_tensor({3, 1, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Var y = ops::conv2d(Var(x), Var(w), Var(b), 1, 1, 3);
    Tensor dense({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c)
        for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) dense.at(c, c, u, v) = w.at(c, 0, u, v);
    CHECK(max_abs_diff(y.value(), conv_reference(x, dense, b, 1, 1)) < 1e-12);
}

TEST_CASE("lone convolution parameter and flop closed form") {
    // c_in * c_out * k^2 + c_out parameters, 2 h w c_in c_out k^2 flops.
    const std::int64_t ci = 5, co = 7, k = 3, h = 10, w = 12;
    nn::ParameterStore store;
    nn::Rng rng(1);
    nn::Conv2d conv(store, "c", ci, co, k, rng);
    CHECK(store.count() == ci * co * k * k + co);
    FlopCounter counter;
    (void)conv(Var(Tensor({1, ci, h, w})));
    CHECK(counter.flops() == 2 * h * w * ci * co * k * k);
}

TEST_CASE("flop counter dry run skips arithmetic but keeps shapes") {
    FlopCounter counter(true);
    Var y = ops::conv2d(Var(Tensor({1, 2, 8, 8}, 1.0)), Var(Tensor({3, 2, 3, 3}, 1.0)), Var(), 2, 1);
    CHECK(y.shape() == Shape{1, 3, 4, 4});
    CHECK(counter.macs() == 4 * 4 * 3 * 2 * 9);
}

TEST_CASE("elementwise gradients") {
    std::mt19937_64 rng(5);
    Var a = leaf({2, 3, 4, 4}, rng), b = leaf({2, 3, 4, 4}, rng), g = leaf({2, 3, 1, 1}, rng), s = leaf({2, 1, 4, 4}, rng);
    expect_grad([&] { return ops::add(a, g); }, {{"a", a}, {"g", g}});
    expect_grad([&] { return ops::sub(a, b); }, {{"a", a}, {"b", b}});
    expect_grad([&] { return ops::mul(a, g); }, {{"a", a}, {"g", g}});
    expect_grad([&] { return ops::mul(a, s); }, {{"a", a}, {"s", s}});
    expect_grad([&] { return ops::gelu(a); }, {{"a", a}});
    expect_grad([&] { return ops::sigmoid(ops::scale(a, 3.0)); }, {{"a", a}});
    expect_grad([&] { return ops::abs(ops::add_scalar(a, 0.01)); }, {{"a", a}});
    expect_grad([&] { return ops::relu(a); }, {{"a", a}});
    expect_grad([&] { return ops::concat_channels({a, b}); }, {{"a", a}, {"b", b}});
    expect_grad([&] { return ops::slice_channels(a, 1, 3); }, {{"a", a}});
    expect_grad([&] { return ops::reshape(a, {2, 48}); }, {{"a", a}});
}

TEST_CASE("convolution gradients") {
    std::mt19937_64 rng(6);
    Var x = leaf({2, 3, 9, 9}, rng), w = leaf({4, 3, 3, 3}, rng), b = leaf({4}, rng);
    expect_grad([&] { return ops::conv2d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}});
    expect_grad([&] { return ops::conv2d(x, w, b, 2, 1); }, {{"x", x}, {"w", w}, {"b", b}});
    Var dw = leaf({3, 1, 3, 3}, rng), db = leaf({3}, rng);
    expect_grad([&] { return ops::conv2d(x, dw, db, 1, 1, 3); }, {{"x", x}, {"w", dw}, {"b", db}});
}

TEST_CASE("pooling, resampling and normalization gradients") {
    std::mt19937_64 rng(7);
    Var x = leaf({2, 4, 8, 8}, rng);
    Var gamma = leaf({4}, rng, 0.5, 1.5), beta = leaf({4}, rng);
    expect_grad([&] { return ops::global_avg_pool(x); }, {{"x", x}});
    expect_grad([&] { return ops::global_max_pool(x); }, {{"x", x}});
    expect_grad([&] { return ops::channel_mean(x); }, {{"x", x}});
    expect_grad([&] { return ops::channel_max(x); }, {{"x", x}});
    expect_grad([&] { return ops::avg_pool(x, 4); }, {{"x", x}});
    expect_grad([&] { return ops::upsample_bilinear(x, 2); }, {{"x", x}});
    expect_grad([&] { return ops::upsample_bilinear(x, 4); }, {{"x", x}});
    expect_grad([&] { return ops::layer_norm_channels(x, gamma, beta); }, {{"x", x}, {"g", gamma}, {"b", beta}});
    expect_grad([&] { return ops::group_norm(x, 2, gamma, beta); }, {{"x", x}, {"g", gamma}, {"b", beta}});
}

TEST_CASE("matrix and softmax gradients") {
    std::mt19937_64 rng(8);
    Var a = leaf({2, 3, 5}, rng), b = leaf({2, 3, 4}, rng), c = leaf({2, 5, 4}, rng);
    expect_grad([&] { return ops::bmm(a, b, true, false); }, {{"a", a}, {"b", b}});
    expect_grad([&] { return ops::bmm(a, c, false, false); }, {{"a", a}, {"c", c}});
    expect_grad([&] { return ops::bmm(b, c, false, true); }, {{"b", b}, {"c", c}});
    expect_grad([&] { return ops::softmax_last(ops::scale(a, 2.0)); }, {{"a", a}});
    expect_grad([&] { return ops::mean(a); }, {{"a", a}});
}

TEST_CASE("bilinear upsampling of a constant is constant") {
    Var y = ops::upsample_bilinear(Var(Tensor({1, 2, 3, 3}, 0.25)), 4);
    CHECK(y.shape() == Shape{1, 2, 12, 12});
    for (double v : y.value().values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(9);
    Var p = ops::softmax_last(Var(random_tensor({3, 4, 7}, rng, -20, 20)));
    for (int r = 0; r < 12; ++r) {
        double s = 0;
        for (int k = 0; k < 7; ++k) s += p.value()[r * 7 + k];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("no-grad guard records no graph") {
    Var x(Tensor({2}, 1.0), true);
    {
        NoGradGuard guard;
        Var y = ops::scale(x, 2.0);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(ops::scale(x, 2.0).requires_grad());
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(ops::add(Var(Tensor({2, 3})), Var(Tensor({3, 2}))), ShapeError);
    CHECK_THROWS_AS(ops::bmm(Var(Tensor({1, 2, 3})), Var(Tensor({1, 2, 3})), false, false), ShapeError);
}
