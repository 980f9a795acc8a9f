// Acceptance runner. `acceptance` runs every criterion; `acceptance 3 5`
// runs a subset. One line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cgcce/data_pipeline.hpp"
#include "cgcce/train_eval.hpp"
#include "cli.hpp"
#include "gradcheck.hpp"

using namespace cgcce;
namespace fs = std::filesystem;
using gradcheck::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void progress(const std::string& s) {
    std::fprintf(stderr, "  .. %s\n", s.c_str());
    std::fflush(stderr);
}

// Synthetic geometry for 64-pixel tiles: buildings of 13-26 px keep several
// decoder cells across each footprint.
SynthSpec desk_spec(int n, std::uint64_t seed) {
    SynthSpec s;
    s.n_samples = n;
    s.tile_size = 64;
    s.min_buildings = 2;
    s.max_buildings = 3;
    s.min_extent = 0.2;
    s.max_extent = 0.4;
    s.special_ratio = 0.3;
    s.jitter = 0.1;
    s.seed = seed;
    return s;
}

BiTemporalSample as_sample(const SynthSample& s) { return {to_tensor(s.a), to_tensor(s.b), s.mask, s.id}; }

ModelConfig toy64() {
    ModelConfig cfg = ModelConfig::toy();
    cfg.tile_size = 64;
    return cfg;
}

// ---- 1 -----------------------------------------------------------------------

Outcome angular() {
    Clock clock;
    const int n = 1000000;
    double worst = -1.0, at = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = -1.0 + 2.0 * i / (n - 1);
        const double gap = std::abs(angle_similarity_exact(x) - angle_similarity_linear(x));
        if (gap > worst) {
            worst = gap;
            at = x;
        }
    }
    const double expect = std::abs(0.5 - 1.0 / std::numbers::pi);
    const double zero_gap = std::abs(angle_similarity_exact(0.0) - angle_similarity_linear(0.0));
    const double t = clock.seconds();
    const bool ok = std::abs(worst - expect) <= 1e-6 && std::abs(std::abs(at) - 1.0) < 1e-12 && zero_gap <= 1e-12 && t < 1.0;
    return {ok, fmt("max gap %.9f (expected %.9f) at x=%+.1f, gap at 0 %.1e, %.2f s", worst, expect, at, zero_gap, t)};
}

// ---- 2 -----------------------------------------------------------------------

Outcome gradients() {
    Clock clock;
    gradcheck::Options o;
    std::vector<std::string> failed;
    std::string summary;
    const auto record = [&](const std::string& name, const gradcheck::Result& r, const gradcheck::Options& opts) {
        summary += fmt(" %s %.1e (%d/%d kinks)", name.c_str(), r.max_rel, r.kinks, r.kinks + r.checked);
        if (!r.passed(opts)) failed.push_back(name + " (" + r.worst + ", kinks " + std::to_string(r.kinks) + ")");
    };
    std::mt19937_64 g(2);
    {
        nn::ParameterStore store;
        nn::Rng rng(10);
        SraAttention a(store, "sra", 8, 2, 2, rng);
        Var x(random_tensor({2, 8, 6, 6}, g), true);
        auto wrt = gradcheck::params(store);
        wrt.emplace_back("x", x);
        record("sra", gradcheck::check([&] { return spatial_reduction_attention(x, a); }, wrt, o), o);
    }
    {
        nn::ParameterStore store;
        nn::Rng rng(4);
        ChannelAttention ca(store, "ca", 16, rng);
        SpatialAttention sa(store, "sa", rng);
        Var f(random_tensor({2, 16, 6, 6}, g), true);
        auto wrt = gradcheck::params(store, "ca");
        wrt.emplace_back("f", f);
        record("channel", gradcheck::check([&] { return channel_attention(f, ca); }, wrt, o), o);
        wrt = gradcheck::params(store, "sa");
        wrt.emplace_back("f", f);
        record("spatial", gradcheck::check([&] { return spatial_attention(f, sa); }, wrt, o), o);
    }
    {
        Var q(random_tensor({2, 4, 12}, g), true), k(random_tensor({2, 4, 12}, g), true),
            v(random_tensor({2, 4, 12}, g), true);
        record("cross_correlate",
               gradcheck::check([&] { return cross_correlate(q, k, v, 0.5); }, {{"q", q}, {"k", k}, {"v", v}}, o), o);
    }
    {
        nn::ParameterStore store;
        nn::Rng rng(7);
        ModelConfig cfg = ModelConfig::toy();
        cfg.stage_channels = {4, 8, 8, 16};
        cfg.attn_heads = {1, 1, 1, 1};
        CgrrParams p(store, "cgrr", cfg, rng);
        std::mt19937_64 gx(8);
        Var x(random_tensor({1, 4, 16, 16}, gx), true);
        auto wrt = gradcheck::params(store);
        wrt.emplace_back("x", x);
        gradcheck::Options oc = o;
        oc.coords_per_tensor = 4;
        record("cgrr",
               gradcheck::check(
                   [&] {
                       std::vector<Var> flat;
                       for (const Var& m : cgrr_forward(x, p)) flat.push_back(ops::reshape(m, {1, m.value().numel(), 1, 1}));
                       return ops::concat_channels(flat);
                   },
                   wrt, oc),
               oc);
    }
    {
        nn::ParameterStore store;
        nn::Rng rng(8);
        ScemParams p(store, "scem", 6, {3, 5, 7}, rng);
        Var c(random_tensor({2, 6, 7, 7}, g), true);
        auto wrt = gradcheck::params(store);
        wrt.emplace_back("c", c);
        record("scem", gradcheck::check([&] { return scem_forward(c, p); }, wrt, o), o);
    }
    {
        nn::ParameterStore store;
        nn::Rng rng(3);
        CrossFuseParams p(store, "x", 8, 2, 2, rng);
        Var a(random_tensor({2, 8, 4, 4}, g), true), b(random_tensor({2, 8, 4, 4}, g), true);
        auto wrt = gradcheck::params(store);
        wrt.emplace_back("a", a);
        wrt.emplace_back("b", b);
        record("cross_fuse", gradcheck::check([&] { return cross_fuse(a, b, p); }, wrt, o), o);
    }
    {
        nn::ParameterStore store;
        nn::Rng rng(6);
        ModelConfig cfg = ModelConfig::toy();
        cfg.stage_channels = {4, 8, 8, 8};
        cfg.attn_heads = {1, 1, 1, 1};
        ReconstructParams p(store, "head", cfg, rng);
        auto wrt = gradcheck::params(store);
        std::array<Var, kNumScales> fused;
        for (int j = 0; j < kNumScales; ++j) {
            const std::int64_t e = 32 / kStrides[static_cast<std::size_t>(j)];
            fused[static_cast<std::size_t>(j)] =
                Var(random_tensor({1, cfg.stage_channels[static_cast<std::size_t>(j)], e, e}, g), true);
            wrt.emplace_back("fused" + std::to_string(j), fused[static_cast<std::size_t>(j)]);
        }
        record("reconstruct", gradcheck::check([&] { return reconstruct(fused, p); }, wrt, o), o);
    }
    {
        const CgcceNet net(toy64(), 5);
        const SynthSample s = synth_render(desk_spec(1, 3), 0);
        Var a(to_tensor(s.a).reshaped({1, 3, 64, 64}), true), b(to_tensor(s.b).reshaped({1, 3, 64, 64}), true);
        auto wrt = gradcheck::params(net.parameters());
        wrt.emplace_back("t1", a);
        wrt.emplace_back("t2", b);
        gradcheck::Options oe = o;
        oe.tolerance = 1e-3;
        oe.coords_per_tensor = 2;
        record("end_to_end", gradcheck::check([&] { return net.forward(a, b); }, wrt, oe), oe);
    }
    const double t = clock.seconds();
    std::string detail = "max rel:" + summary + fmt(", %.1f s", t);
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty() && t < 300.0, detail};
}

// ---- 3 -----------------------------------------------------------------------

Outcome metrics_oracle() {
    std::mt19937_64 g(33);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    int mismatched = 0, off = 0, order = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        // Every tenth pair has an empty ground truth and prediction, so the
        // zero-denominator conventions are exercised.
        const double pp = trial % 10 == 0 ? 0.0 : density(g), pg = trial % 10 == 0 ? 0.0 : density(g);
        std::bernoulli_distribution bp(pp), bg(pg);
        BinaryMask p(32, 32), t(32, 32);
        for (auto& v : p.values) v = bp(g) ? 1 : 0;
        for (auto& v : t.values) v = bg(g) ? 1 : 0;
        std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::int64_t y = 0; y < 32; ++y) {
            for (std::int64_t x = 0; x < 32; ++x) {
                const bool a = p.at(y, x) == 1, b = t.at(y, x) == 1;
                tp += a && b;
                fp += a && !b;
                fn += !a && b;
                tn += !a && !b;
            }
        }
        const ConfusionCounts c = confusion(p, t);
        if (!(c == ConfusionCounts{tp, fp, fn, tn})) ++mismatched;
        const MetricReport r = metrics(c);
        double ep, er, ef, ei;
        if (tp + fp + fn == 0) {
            ep = er = ef = ei = 1.0;
        } else {
            ep = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
            er = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
            ef = double(2 * tp) / double(2 * tp + fp + fn);
            ei = double(tp) / double(tp + fp + fn);
        }
        const double d = std::max({std::abs(r.precision - ep), std::abs(r.recall - er), std::abs(r.f1 - ef),
                                   std::abs(r.iou - ei)});
        worst = std::max(worst, d);
        if (d > 1e-12) ++off;
        if (r.iou > r.f1) ++order;
    }
    return {mismatched == 0 && off == 0 && order == 0,
            fmt("1000 pairs: %d count mismatches, %d metric deviations (max %.1e), %d IoU>F1", mismatched, off, worst,
                order)};
}

// ---- 4 -----------------------------------------------------------------------

Outcome identity_pair() {
    const CgcceNet net(toy64(), 17);
    std::mt19937_64 g(4);
    std::int64_t nonzero = 0, checked = 0;
    NoGradGuard guard;
    for (int trial = 0; trial < 3; ++trial) {
        Var x(random_tensor({2, 3, 64, 64}, g, 0.0, 1.0));
        ForwardTrace trace;
        (void)net.forward(x, x, &trace);
        for (const Var& d : trace.diff) {
            for (double v : d.value().values()) {
                ++checked;
                nonzero += v != 0.0;
            }
        }
    }
    return {nonzero == 0 && checked > 0, fmt("%lld of %lld difference entries non-zero over 3 random pairs",
                                             static_cast<long long>(nonzero), static_cast<long long>(checked))};
}

// ---- 5 -----------------------------------------------------------------------

Outcome overfit() {
    Clock clock;
    std::vector<BiTemporalSample> set;
    const SynthSpec spec = desk_spec(8, 11);
    for (int i = 0; i < 8; ++i) set.push_back(as_sample(synth_render(spec, i)));
    TrainOptions o;
    o.epochs = 300;
    o.batch = 8;
    o.seed = 1;
    o.lr0 = 5e-4;
    o.on_epoch = [](const EpochRecord& r) {
        if (r.epoch % 50 == 0 || r.epoch == 299) progress(fmt("overfit epoch %d loss %.4f f1 %.4f", r.epoch, r.train_loss, r.val_f1));
    };
    const TrainResult a = train(toy64(), set, set, o);
    o.on_epoch = nullptr;
    const TrainResult b = train(toy64(), set, set, o);
    bool identical = a.history.size() == b.history.size();
    for (std::size_t i = 0; identical && i < a.history.size(); ++i) {
        identical = a.history[i].train_loss == b.history[i].train_loss && a.history[i] == b.history[i];
    }
    bool smooth = true;
    double prev = 1e300;
    for (std::size_t w = 0; w + 10 <= a.history.size(); w += 10) {
        double m = 0.0;
        for (std::size_t i = w; i < w + 10; ++i) m += a.history[i].train_loss / 10.0;
        if (m > prev) smooth = false;
        prev = m;
    }
    int first = -1;
    for (const auto& r : a.history) {
        if (r.val_f1 >= 0.95) {
            first = r.epoch;
            break;
        }
    }
    const double t = clock.seconds();
    return {a.best_f1 >= 0.95 && identical && smooth && t <= 600.0,
            fmt("training F1 %.4f (best epoch %d, first >= 0.95 at %d), repeat %s, 10-epoch mean loss %s, %.0f s for "
                "both runs",
                a.best_f1, a.best_epoch, first, identical ? "bit-identical" : "DIFFERS",
                smooth ? "non-increasing" : "INCREASES", t)};
}

// ---- 6 -----------------------------------------------------------------------

Outcome desk_experiment() {
    Clock clock;
    const SynthSpec spec = desk_spec(256, 2024);
    std::vector<SynthSample> raw;
    std::vector<std::string> ids;
    for (int i = 0; i < spec.n_samples; ++i) {
        raw.push_back(synth_render(spec, i));
        ids.push_back(raw.back().id);
    }
    const DatasetManifest m = split(ids, spec.ratios, spec.seed);
    std::map<std::string, const SynthSample*> by_id;
    for (const auto& s : raw) by_id[s.id] = &s;
    const auto load = [&](const std::string& name) {
        std::vector<BiTemporalSample> out;
        for (const auto& id : m.ids(name)) out.push_back(as_sample(*by_id.at(id)));
        return out;
    };
    const auto train_set = load("train"), val_set = load("val");

    AblationOptions o;
    o.train.epochs = 30;
    o.train.batch = 8;
    o.train.lr0 = 5e-4;
    o.split = "val";
    o.on_row = [&](const AblationRow& r) {
        progress(fmt("desk %s seed %llu f1 %.4f iou %.4f (%.0f s)", r.variant.c_str(),
                     static_cast<unsigned long long>(r.seed), r.f1, r.iou, clock.seconds()));
    };
    const auto rows = ablate(toy64(), train_set, val_set, val_set, {0, 1, 2}, o);
    std::map<std::string, double> mean;
    for (const auto& r : rows) mean[r.variant] += r.f1 / 3.0;
    bool ok = mean["full"] >= 0.80;
    std::string detail = fmt("%zu/%zu/%zu samples, %d epochs, mean val F1:", m.ids("train").size(),
                             m.ids("val").size(), m.ids("test").size(), o.train.epochs);
    for (const auto& v : ablation_variants()) {
        detail += fmt(" %s %.4f", v.c_str(), mean[v]);
        if (v != "full" && mean["full"] < mean[v] - 0.01) ok = false;
    }
    const double t = clock.seconds();
    detail += fmt(", %.0f s", t);
    return {ok && t <= 7200.0, detail};
}

// ---- 7 -----------------------------------------------------------------------

Outcome schedule_optimizer() {
    const int total = 300;
    const double lr0 = 5e-4, lr_min = lr0 / 100;
    double worst = 0.0;
    for (int e = 0; e < total; ++e) {
        const double expect = lr_min + 0.5 * (lr0 - lr_min) * (1 + std::cos(std::numbers::pi * e / (total - 1)));
        worst = std::max(worst, std::abs(cosine_lr(e, total, lr0, lr_min) - expect));
    }
    const bool start = cosine_lr(0, total, lr0, lr_min) == 5e-4;

    Var w(Tensor({1}), true);
    w.mutable_value()[0] = -1.25;
    AdamW opt({w});
    double hw = -1.25, m = 0.0, v = 0.0, adam_worst = 0.0;
    for (int t = 1; t <= 10; ++t) {
        const double lr = 0.1;
        w.zero_grad();
        Var d = ops::add_scalar(w, -2.0);
        ops::sum(ops::mul(d, d)).backward();
        opt.step(lr);
        const double grad = 2 * (hw - 2);
        hw *= 1 - lr * 0.01;
        m = 0.9 * m + 0.1 * grad;
        v = 0.999 * v + 0.001 * grad * grad;
        hw -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        adam_worst = std::max(adam_worst, std::abs(w.value()[0] - hw));
    }
    return {worst == 0.0 && start && adam_worst <= 1e-12,
            fmt("cosine max deviation %.1e over %d epochs (epoch 0 = %g), AdamW max deviation %.1e over 10 steps", worst,
                total, cosine_lr(0, total, lr0, lr_min), adam_worst)};
}

// ---- 8 -----------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
    }
    return out;
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "cgcce_acceptance_8";
    fs::remove_all(dir);
    SynthSpec spec = desk_spec(20, 8);
    (void)synth_generate(spec, (dir / "a").string());
    (void)synth_generate(spec, (dir / "b").string());
    const auto ta = read_tree(dir / "a"), tb = read_tree(dir / "b");
    const bool synth_same = !ta.empty() && ta == tb;

    ScenePair scene;
    const SynthSample big = synth_render(desk_spec(1, 5), 0);
    scene.a = big.a;
    scene.b = big.b;
    scene.label = from_mask(big.mask);
    scene.id = "scene";
    const auto t1 = tile_images(scene, 32, TileMode::kRandom, 6, 99);
    const auto t2 = tile_images(scene, 32, TileMode::kRandom, 6, 99);
    bool tile_same = t1.size() == 6 && t1.size() == t2.size();
    for (std::size_t i = 0; tile_same && i < t1.size(); ++i) {
        tile_same = t1[i].window == t2[i].window && t1[i].a == t2[i].a && t1[i].b == t2[i].b && t1[i].label == t2[i].label;
    }

    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("id" + std::to_string(i));
    const auto s1 = split(ids, {7, 2, 1}, 4), s2 = split(ids, {7, 2, 1}, 4);
    const bool split_same = s1.splits == s2.splits;
    const bool sizes = s1.ids("train").size() == 70 && s1.ids("val").size() == 20 && s1.ids("test").size() == 10;
    const std::size_t grid = tile_windows(1024, 1024, 256, TileMode::kGrid, 0, 0).size();

    ModelConfig cfg = ModelConfig::toy();
    cfg.stage_channels = {8, 16, 32, 64};
    cfg.tile_size = 32;
    SynthSpec small = desk_spec(6, 9);
    small.tile_size = 32;
    std::vector<BiTemporalSample> tr, va;
    for (int i = 0; i < 6; ++i) (i < 4 ? tr : va).push_back(as_sample(synth_render(small, i)));
    TrainOptions o;
    o.epochs = 3;
    o.batch = 2;
    o.seed = 5;
    const TrainResult r1 = train(cfg, tr, va, o), r2 = train(cfg, tr, va, o);
    bool params_same = r1.best_parameters.size() == r2.best_parameters.size();
    for (std::size_t i = 0; params_same && i < r1.best_parameters.size(); ++i) {
        params_same = std::ranges::equal(r1.best_parameters[i].values(), r2.best_parameters[i].values());
    }
    const bool train_same = r1.history == r2.history && params_same;
    fs::remove_all(dir);
    return {synth_same && tile_same && split_same && sizes && grid == 16 && train_same,
            fmt("synth %s (%zu files), random tiles %s, split %s with sizes %zu/%zu/%zu, grid tiles %zu, train %s",
                synth_same ? "identical" : "DIFFER", ta.size(), tile_same ? "identical" : "DIFFER",
                split_same ? "identical" : "DIFFERS", s1.ids("train").size(), s1.ids("val").size(),
                s1.ids("test").size(), grid, train_same ? "identical" : "DIFFERS")};
}

// ---- 9 -----------------------------------------------------------------------

Outcome reporting() {
    const char* argv[] = {"cgcce", "info", "--preset", "full"};
    std::ostringstream out, err;
    const int code = cli::dispatch(4, argv, out, err);
    const std::string text = out.str();
    const auto value = [&](const std::string& key) {
        const auto pos = text.find("\n" + key + " ");
        return pos == std::string::npos ? -1.0 : std::atof(text.c_str() + pos + key.size() + 2);
    };
    const double params = value("params_m"), flops = value("flops_g");
    const bool reference = text.find("56.67") != std::string::npos && text.find("17.57") != std::string::npos;
    return {code == 0 && params > 0 && flops > 0 && reference,
            fmt("full preset: %.2f M params, %.2f G FLOPs (published reference 56.67 M / 17.57 G, no match required)",
                params, flops)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"angular approximation", angular},
        {"gradient suite", gradients},
        {"metrics oracle", metrics_oracle},
        {"identity pair", identity_pair},
        {"overfit run", overfit},
        {"special-colour desk experiment", desk_experiment},
        {"schedule and optimizer", schedule_optimizer},
        {"pipeline determinism", determinism},
        {"reporting", reporting},
    };
    std::vector<int> pick;
    for (int i = 1; i < argc; ++i) pick.push_back(std::atoi(argv[i]));
    if (pick.empty()) {
        for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) pick.push_back(i);
    }
    bool all = true;
    for (int id : pick) {
        if (id < 1 || id > static_cast<int>(criteria.size())) {
            std::fprintf(stderr, "unknown criterion %d\n", id);
            return 2;
        }
        const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
        Outcome r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        all = all && r.pass;
        std::printf("criterion %d %s: %s: %s\n", id, r.pass ? "PASS" : "FAIL", name, r.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
