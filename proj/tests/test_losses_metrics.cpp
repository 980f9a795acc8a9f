#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cgcce/losses_metrics.hpp"
#include "cgcce/ops.hpp"

using namespace cgcce;

namespace {

BinaryMask random_mask(std::int64_t h, std::int64_t w, std::mt19937_64& g, double p = 0.5) {
    BinaryMask m(h, w);
    std::bernoulli_distribution b(p);
    for (auto& v : m.values) v = b(g) ? 1 : 0;
    return m;
}

}  // namespace

TEST_CASE("bce examples") {
    const std::vector<double> half(10, 0.5);
    std::vector<double> y{0, 1, 1, 0, 1, 0, 0, 0, 1, 1};
    CHECK(bce_loss(half, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK(bce_loss(y, y) <= -std::log(1 - kBceEpsilon) + 1e-15);
    CHECK(bce_loss(y, y) == doctest::Approx(1e-7).epsilon(1e-6));

    const std::vector<double> zero{0.0}, one{1.0};
    const double l = bce_loss(zero, one);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(16.11809565).epsilon(1e-9));

    CHECK_THROWS(bce_loss(std::vector<double>(3, 0.5), std::vector<double>(4, 0.0)));
}

TEST_CASE("bce matches a per-pixel loop") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(37), y(37);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = u(g);
            y[i] = u(g) < 0.4 ? 1.0 : 0.0;
        }
        p[0] = 0.0;
        p[1] = 1.0;
        double sum = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double q = std::min(std::max(p[i], 1e-7), 1 - 1e-7);
            sum += -(y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q));
        }
        CHECK(std::abs(bce_loss(p, y) - sum / 37.0) <= 1e-10);
    }
}

TEST_CASE("bce on logits: value and gradient") {
    std::mt19937_64 g(4);
    std::normal_distribution<double> n(0.0, 3.0);
    Tensor z({1, 1, 4, 5}), y({1, 1, 4, 5});
    for (std::int64_t i = 0; i < z.numel(); ++i) {
        z[i] = n(g);
        y[i] = (i % 3 == 0) ? 1.0 : 0.0;
    }
    z[0] = 40.0;
    y[0] = 0.0;
    Var zv(z, true);
    Var loss = bce_loss(zv, y);
    std::vector<double> p(static_cast<std::size_t>(z.numel())), t(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = 1 / (1 + std::exp(-z[static_cast<std::int64_t>(i)]));
        t[i] = y[static_cast<std::int64_t>(i)];
    }
    CHECK(loss.value()[0] == doctest::Approx(bce_loss(p, t)).epsilon(1e-12));
    loss.backward();
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(zv.grad()[static_cast<std::int64_t>(i)] == doctest::Approx((p[i] - t[i]) / 20.0).epsilon(1e-12));
    }
    CHECK_THROWS(bce_loss(zv, Tensor({1, 1, 4, 4})));
}

TEST_CASE("confusion examples and pixel-loop oracle") {
    std::mt19937_64 g(5);
    const BinaryMask gt = random_mask(32, 32, g);
    const auto same = confusion(gt, gt);
    CHECK(same.fp == 0);
    CHECK(same.fn == 0);
    BinaryMask inv = gt;
    for (auto& v : inv.values) v = 1 - v;
    const auto opp = confusion(inv, gt);
    CHECK(opp.tp == 0);
    CHECK(opp.tn == 0);

    for (int trial = 0; trial < 1000; ++trial) {
        const BinaryMask p = random_mask(32, 32, g, 0.3), t = random_mask(32, 32, g, 0.4);
        ConfusionCounts loop;
        for (std::int64_t y = 0; y < 32; ++y) {
            for (std::int64_t x = 0; x < 32; ++x) {
                const int a = p.at(y, x), b = t.at(y, x);
                if (a && b) ++loop.tp;
                else if (a) ++loop.fp;
                else if (b) ++loop.fn;
                else ++loop.tn;
            }
        }
        REQUIRE(confusion(p, t) == loop);
    }
}

TEST_CASE("confusion rejects bad input") {
    BinaryMask a(2, 2), b(2, 3);
    CHECK_THROWS(confusion(a, b));
    BinaryMask c(2, 2);
    c.values[1] = 2;
    CHECK_THROWS(confusion(c, a));
}

TEST_CASE("metrics examples") {
    const auto r = metrics({50, 10, 10, 0});
    CHECK(r.precision == doctest::Approx(50.0 / 60.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(50.0 / 60.0).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(100.0 / 120.0).epsilon(1e-12));
    CHECK(r.iou == doctest::Approx(50.0 / 70.0).epsilon(1e-12));
    CHECK(r.iou == doctest::Approx(0.71429).epsilon(1e-5));

    const auto empty = metrics({0, 0, 0, 100});
    CHECK(empty.f1 == 1.0);
    CHECK(empty.iou == 1.0);
    CHECK(empty.precision == 1.0);
    CHECK(empty.recall == 1.0);

    const auto miss = metrics({0, 5, 5, 10});
    CHECK(miss.f1 == 0.0);
    CHECK(miss.iou == 0.0);
    CHECK(miss.precision == 0.0);
    CHECK(miss.recall == 0.0);

    // precision undefined, recall zero
    const auto none = metrics({0, 0, 7, 3});
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);

    CHECK_THROWS(metrics({-1, 0, 0, 0}));
}

TEST_CASE("metric identities on random counts") {
    std::mt19937_64 g(6);
    std::uniform_int_distribution<std::int64_t> u(0, 200);
    for (int trial = 0; trial < 2000; ++trial) {
        const ConfusionCounts c{u(g), u(g), u(g), u(g)};
        const auto r = metrics(c);
        CHECK(r.iou <= r.f1 + 1e-15);
        if (c.tp + c.fp + c.fn > 0 && r.precision + r.recall > 0) {
            CHECK(r.f1 == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)).epsilon(1e-12));
        }
        CHECK(r.counts == c);
    }
}

TEST_CASE("csv row and thresholding") {
    CHECK(metric_csv_header() == "split,f1,iou,precision,recall,tp,fp,fn,tn");
    const auto row = metric_csv_row("val", metrics({1, 1, 0, 2}));
    CHECK(row.rfind("val,", 0) == 0);
    CHECK(row.ends_with(",1,1,0,2"));

    Tensor z({1, 2, 2});
    z[0] = -1.0;
    z[1] = 0.0;
    z[2] = 0.1;
    z[3] = 5.0;
    const BinaryMask m = threshold_logits(z, 0.5);
    CHECK(m.values == std::vector<std::uint8_t>{0, 0, 1, 1});
}
