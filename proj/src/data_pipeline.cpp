#include "cgcce/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace cgcce {

namespace fs = std::filesystem;
using nlohmann::json;

TileMode parse_tile_mode(const std::string& name) {
    if (name == "grid") return TileMode::kGrid;
    if (name == "random") return TileMode::kRandom;
    throw std::invalid_argument("unknown tile mode '" + name + "' (expected grid or random)");
}

std::vector<Window> tile_windows(std::int64_t height, std::int64_t width, int size, TileMode mode, int count,
                                 std::uint64_t seed) {
    if (size <= 0) throw std::invalid_argument("tile: size must be positive");
    if (height < size || width < size) {
        throw ShapeError("tile: input " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than " +
                         std::to_string(size));
    }
    std::vector<Window> out;
    if (mode == TileMode::kGrid) {
        for (std::int64_t y = 0; y + size <= height; y += size) {
            for (std::int64_t x = 0; x + size <= width; x += size) out.push_back({y, x, size});
        }
        return out;
    }
    if (count <= 0) throw std::invalid_argument("tile: random mode needs a positive count");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int64_t> ys(0, height - size), xs(0, width - size);
    for (int i = 0; i < count; ++i) {
        const std::int64_t y = ys(rng);
        out.push_back({y, xs(rng), size});
    }
    return out;
}

std::vector<Tile> tile_images(const ScenePair& scene, int size, TileMode mode, int count, std::uint64_t seed) {
    if (scene.a.height != scene.b.height || scene.a.width != scene.b.width || scene.a.height != scene.label.height ||
        scene.a.width != scene.label.width) {
        throw ShapeError("tile: " + scene.id + " has A, B and label of different sizes");
    }
    std::vector<Tile> tiles;
    for (const Window& w : tile_windows(scene.a.height, scene.a.width, size, mode, count, seed)) {
        Tile t;
        t.window = w;
        t.a = crop(scene.a, w.y, w.x, w.size, w.size);
        t.b = crop(scene.b, w.y, w.x, w.size, w.size);
        t.label = crop(scene.label, w.y, w.x, w.size, w.size);
        t.id = scene.id + "_" + std::to_string(w.y) + "_" + std::to_string(w.x);
        tiles.push_back(std::move(t));
    }
    return tiles;
}

BiTemporalSample to_sample(const Tile& t) { return {to_tensor(t.a), to_tensor(t.b), to_mask(t.label), t.id}; }

std::vector<BiTemporalSample> tile(const ScenePair& scene, int size, TileMode mode, int count, std::uint64_t seed) {
    std::vector<BiTemporalSample> out;
    for (const Tile& t : tile_images(scene, size, mode, count, seed)) out.push_back(to_sample(t));
    return out;
}

const std::vector<std::string>& DatasetManifest::ids(const std::string& split) const {
    return splits[static_cast<std::size_t>(split_index(split))];
}

int split_index(const std::string& split) {
    for (int i = 0; i < 3; ++i) {
        if (split == kSplitNames[static_cast<std::size_t>(i)]) return i;
    }
    throw std::invalid_argument("unknown split '" + split + "' (expected train, val or test)");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("split: ratios must be positive");
        total += r;
    }
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double quota = static_cast<double>(n) * ratios[i] / total;
        sizes[i] = static_cast<std::size_t>(std::floor(quota));
        rem[i] = quota - static_cast<double>(sizes[i]);
        used += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
    return sizes;
}

DatasetManifest split(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed) {
    if (ids.empty()) throw std::invalid_argument("split: no ids");
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
        throw std::invalid_argument("split: duplicate ids");
    }
    const auto sizes = split_sizes(ids.size(), ratios);
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    DatasetManifest m;
    m.ratios = ratios;
    m.seed = seed;
    auto it = ids.begin();
    for (std::size_t i = 0; i < 3; ++i) {
        m.splits[i].assign(it, it + static_cast<std::ptrdiff_t>(sizes[i]));
        it += static_cast<std::ptrdiff_t>(sizes[i]);
    }
    return m;
}

void save_manifest(const DatasetManifest& m) {
    json j;
    j["tile_size"] = m.tile_size;
    j["ratios"] = m.ratios;
    j["seed"] = m.seed;
    for (std::size_t i = 0; i < 3; ++i) j["splits"][kSplitNames[i]] = m.splits[i];
    if (!m.spec.is_null()) j["spec"] = m.spec;
    fs::create_directories(m.root);
    const std::string path = (fs::path(m.root) / "manifest.json").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "manifest.json";
    std::ifstream in(p);
    if (!in) throw IoError("cannot read manifest " + p.string());
    DatasetManifest m;
    try {
        const json j = json::parse(in);
        m.tile_size = j.at("tile_size").get<int>();
        m.ratios = j.at("ratios").get<std::array<double, 3>>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (std::size_t i = 0; i < 3; ++i) m.splits[i] = j.at("splits").at(kSplitNames[i]).get<std::vector<std::string>>();
        if (j.contains("spec")) m.spec = j.at("spec");
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + p.string() + ": " + e.what());
    }
    m.root = p.parent_path().empty() ? std::string(".") : p.parent_path().string();
    return m;
}

std::string sample_path(const std::string& root, const std::string& split, const char* kind, const std::string& id) {
    return (fs::path(root) / split / kind / (id + ".png")).string();
}

void check_manifest(const DatasetManifest& m) {
    std::set<std::string> seen;
    std::vector<std::string> dup, missing;
    for (std::size_t i = 0; i < 3; ++i) {
        for (const std::string& id : m.splits[i]) {
            if (!seen.insert(id).second) dup.push_back(id);
            for (const char* kind : {"A", "B", "label"}) {
                if (!fs::exists(sample_path(m.root, kSplitNames[i], kind, id))) {
                    missing.push_back(std::string(kSplitNames[i]) + "/" + kind + "/" + id);
                }
            }
        }
    }
    const auto list = [](const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size() && i < 20; ++i) s += (i ? ", " : "") + v[i];
        if (v.size() > 20) s += ", ... (" + std::to_string(v.size()) + " total)";
        return s;
    };
    if (!dup.empty()) throw std::invalid_argument("manifest: ids in more than one split: " + list(dup));
    if (!missing.empty()) throw IoError("manifest: missing files: " + list(missing));
}

void write_sample(const std::string& root, const std::string& split, const std::string& id, const Image8& a,
                  const Image8& b, const Image8& label) {
    for (const char* kind : {"A", "B", "label"}) fs::create_directories(fs::path(root) / split / kind);
    write_png(sample_path(root, split, "A", id), a);
    write_png(sample_path(root, split, "B", id), b);
    write_png(sample_path(root, split, "label", id), label);
}

std::vector<BiTemporalSample> load_split(const DatasetManifest& m, const std::string& split) {
    const auto& ids = m.ids(split);
    std::vector<std::string> missing;
    for (const std::string& id : ids) {
        for (const char* kind : {"A", "B", "label"}) {
            if (!fs::exists(sample_path(m.root, split, kind, id))) {
                missing.push_back(id);
                break;
            }
        }
    }
    if (!missing.empty()) {
        std::string s;
        for (const auto& id : missing) s += (s.empty() ? "" : ", ") + id;
        throw IoError("split " + split + ": missing files for ids " + s);
    }
    std::vector<BiTemporalSample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        BiTemporalSample s{to_tensor(read_png(sample_path(m.root, split, "A", id), 3)),
                           to_tensor(read_png(sample_path(m.root, split, "B", id), 3)),
                           to_mask(read_png(sample_path(m.root, split, "label", id), 1)), id};
        out.push_back(std::move(s));
    }
    return out;
}

// ---- synthetic generator -----------------------------------------------------

namespace {

json rgb_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }
Rgb rgb_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw std::invalid_argument("colour needs three components");
    return {v[0], v[1], v[2]};
}

}  // namespace

void to_json(json& j, const SynthSpec& s) {
    json common = json::array(), special = json::array();
    for (const auto& c : s.common_palette) common.push_back(rgb_json(c));
    for (const auto& c : s.special_palette) special.push_back(rgb_json(c));
    j = json{{"n_samples", s.n_samples},     {"tile_size", s.tile_size},     {"min_buildings", s.min_buildings},
             {"max_buildings", s.max_buildings}, {"min_extent", s.min_extent},   {"max_extent", s.max_extent},
             {"change_prob", s.change_prob}, {"l_shape_prob", s.l_shape_prob}, {"common_palette", common},
             {"special_palette", special},   {"special_ratio", s.special_ratio}, {"jitter", s.jitter},
             {"seed", s.seed},               {"grid", s.grid},               {"ratios", s.ratios}};
}

void from_json(const json& j, SynthSpec& s) {
    SynthSpec d;
    for (const auto& [key, value] : j.items()) {
        if (key == "n_samples") d.n_samples = value.get<int>();
        else if (key == "tile_size") d.tile_size = value.get<int>();
        else if (key == "min_buildings") d.min_buildings = value.get<int>();
        else if (key == "max_buildings") d.max_buildings = value.get<int>();
        else if (key == "min_extent") d.min_extent = value.get<double>();
        else if (key == "max_extent") d.max_extent = value.get<double>();
        else if (key == "change_prob") d.change_prob = value.get<double>();
        else if (key == "l_shape_prob") d.l_shape_prob = value.get<double>();
        else if (key == "special_ratio") d.special_ratio = value.get<double>();
        else if (key == "jitter") d.jitter = value.get<double>();
        else if (key == "seed") d.seed = value.get<std::uint64_t>();
        else if (key == "grid") d.grid = value.get<int>();
        else if (key == "ratios") d.ratios = value.get<std::array<double, 3>>();
        else if (key == "common_palette" || key == "special_palette") {
            auto& pal = key == "common_palette" ? d.common_palette : d.special_palette;
            pal.clear();
            for (const auto& c : value) pal.push_back(rgb_from(c));
        } else {
            throw std::invalid_argument("synth spec: unknown field '" + key + "'");
        }
    }
    s = d;
}

void validate_synth_spec(const SynthSpec& s) {
    const auto fail = [](const std::string& msg) { throw std::invalid_argument("synth spec: " + msg); };
    if (s.n_samples <= 0) fail("n_samples must be positive");
    if (s.tile_size < 16) fail("tile_size must be at least 16");
    if (s.min_buildings < 0 || s.max_buildings < s.min_buildings) fail("building count range is empty");
    if (!(s.min_extent > 0 && s.min_extent <= s.max_extent && s.max_extent < 0.5)) {
        fail("extents must satisfy 0 < min_extent <= max_extent < 0.5");
    }
    if (!(s.change_prob >= 0 && s.change_prob <= 1)) fail("change_prob outside [0,1]");
    if (!(s.l_shape_prob >= 0 && s.l_shape_prob <= 1)) fail("l_shape_prob outside [0,1]");
    if (!(s.special_ratio >= 0 && s.special_ratio <= 1)) fail("special_ratio outside [0,1]");
    if (!(s.jitter >= 0 && s.jitter <= 0.5)) fail("jitter outside [0,0.5]");
    if (s.grid < 1 || s.grid > s.tile_size / 8) fail("grid must be in [1, tile_size/8]");
    if (s.common_palette.empty()) fail("common_palette is empty");
    if (s.special_ratio > 0 && s.special_palette.empty()) fail("special_palette is empty");
    for (const auto& pal : {s.common_palette, s.special_palette}) {
        for (const Rgb& c : pal) {
            for (double v : {c.r, c.g, c.b}) {
                if (!(v >= 0 && v <= 1)) fail("palette colours must lie in [0,1]");
            }
        }
    }
    for (const Rgb& a : s.common_palette) {
        for (const Rgb& b : s.special_palette) {
            const double d = std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
            if (d < 0.1) fail("common and special palettes overlap");
        }
    }
    for (double r : s.ratios) {
        if (!(r > 0)) fail("ratios must be positive");
    }
}

std::string synth_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%05d", index);
    return buf;
}

namespace {

Rect bounds(const std::vector<Rect>& parts) {
    std::int64_t y0 = parts[0].y, x0 = parts[0].x, y1 = y0 + parts[0].h, x1 = x0 + parts[0].w;
    for (const Rect& r : parts) {
        y0 = std::min(y0, r.y);
        x0 = std::min(x0, r.x);
        y1 = std::max(y1, r.y + r.h);
        x1 = std::max(x1, r.x + r.w);
    }
    return {y0, x0, y1 - y0, x1 - x0};
}

bool overlaps(const Rect& a, const Rect& b, std::int64_t margin) {
    return a.y < b.y + b.h + margin && b.y < a.y + a.h + margin && a.x < b.x + b.w + margin &&
           b.x < a.x + a.w + margin;
}

bool inside(const Rect& r, const Rect& p) { return p.y >= r.y && p.y < r.y + r.h && p.x >= r.x && p.x < r.x + r.w; }

/// Planar RGB canvas in [0,1].
struct Canvas {
    std::int64_t size;
    std::vector<double> px;
    explicit Canvas(std::int64_t n) : size(n), px(static_cast<std::size_t>(3 * n * n)) {}
    double& at(int c, std::int64_t y, std::int64_t x) { return px[static_cast<std::size_t>((c * size + y) * size + x)]; }
};

constexpr int kPlacementAttempts = 100;

}  // namespace

SynthSample synth_render(const SynthSpec& spec, int index) {
    validate_synth_spec(spec);
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const auto pick = [&](std::int64_t lo, std::int64_t hi) {  // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
    };

    const std::int64_t n = spec.tile_size;
    const std::int64_t g = spec.grid;
    const auto snap = [g](std::int64_t v) { return (v / g) * g; };

    SynthSample out;
    out.id = synth_id(index);

    // Footprints.
    const std::int64_t lo = std::max<std::int64_t>(g, snap(std::llround(spec.min_extent * n)));
    const std::int64_t hi = std::max(lo, snap(std::llround(spec.max_extent * n)));
    const int count = static_cast<int>(pick(spec.min_buildings, spec.max_buildings));
    std::vector<Rect> boxes;
    for (int b = 0; b < count; ++b) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            std::vector<Rect> parts;
            Rect main{0, 0, snap(pick(lo, hi)), snap(pick(lo, hi))};
            main.h = std::max(main.h, g);
            main.w = std::max(main.w, g);
            if (unit(rng) < spec.l_shape_prob) {
                // Arm hanging off the bottom or right edge, flush with one end.
                const bool below = unit(rng) < 0.5;
                const bool flush_start = unit(rng) < 0.5;
                Rect arm;
                if (below) {
                    arm.w = std::max(g, snap(main.w / 2));
                    arm.h = std::max(g, snap(pick(lo / 2, main.h)));
                    arm.y = main.h;
                    arm.x = flush_start ? 0 : main.w - arm.w;
                } else {
                    arm.h = std::max(g, snap(main.h / 2));
                    arm.w = std::max(g, snap(pick(lo / 2, main.w)));
                    arm.x = main.w;
                    arm.y = flush_start ? 0 : main.h - arm.h;
                }
                parts = {main, arm};
            } else {
                parts = {main};
            }
            const Rect box = bounds(parts);
            if (box.h + 2 > n || box.w + 2 > n) continue;
            const std::int64_t oy = snap(pick(1, n - 1 - box.h));
            const std::int64_t ox = snap(pick(1, n - 1 - box.w));
            if (oy < 1 || ox < 1) continue;
            for (Rect& r : parts) {
                r.y += oy;
                r.x += ox;
            }
            const Rect shifted = bounds(parts);
            if (std::any_of(boxes.begin(), boxes.end(), [&](const Rect& o) { return overlaps(o, shifted, 2); })) {
                continue;
            }
            boxes.push_back(shifted);
            Placement p;
            p.parts = std::move(parts);
            out.placements.push_back(std::move(p));
            placed = true;
        }
        if (!placed) {
            throw std::runtime_error("synth: sample " + out.id + ": building " + std::to_string(b) +
                                     " could not be placed after " + std::to_string(kPlacementAttempts) +
                                     " attempts");
        }
    }

    // States and colours. The special share of changed buildings is rounded
    // randomly so it is unbiased per sample.
    std::vector<std::size_t> changed;
    for (std::size_t i = 0; i < out.placements.size(); ++i) {
        Placement& p = out.placements[i];
        if (unit(rng) < spec.change_prob) {
            p.state = unit(rng) < 0.5 ? BuildingState::kAppeared : BuildingState::kRemoved;
            changed.push_back(i);
        }
    }
    const double quota = spec.special_ratio * static_cast<double>(changed.size());
    std::size_t n_special = static_cast<std::size_t>(std::floor(quota));
    if (unit(rng) < quota - std::floor(quota)) ++n_special;
    std::shuffle(changed.begin(), changed.end(), rng);
    for (std::size_t k = 0; k < n_special; ++k) out.placements[changed[k]].special = true;
    for (Placement& p : out.placements) {
        const auto& pal = p.special ? spec.special_palette : spec.common_palette;
        p.color = pal[static_cast<std::size_t>(pick(0, static_cast<std::int64_t>(pal.size()) - 1))];
    }

    // Background shared by both dates: two ground tones blended by a few
    // low-frequency waves.
    Canvas bg(n);
    const Rgb ground_a{0.30 + uniform(-0.05, 0.05), 0.40 + uniform(-0.05, 0.05), 0.22 + uniform(-0.04, 0.04)};
    const Rgb ground_b{0.50 + uniform(-0.05, 0.05), 0.44 + uniform(-0.05, 0.05), 0.34 + uniform(-0.04, 0.04)};
    constexpr double kPi = 3.14159265358979323846;
    double fy[3], fx[3], ph[3];
    for (int k = 0; k < 3; ++k) {
        fy[k] = 2 * kPi * uniform(-3, 3) / static_cast<double>(n);
        fx[k] = 2 * kPi * uniform(-3, 3) / static_cast<double>(n);
        ph[k] = uniform(0, 2 * kPi);
    }
    for (std::int64_t y = 0; y < n; ++y) {
        for (std::int64_t x = 0; x < n; ++x) {
            double t = 0.5;
            for (int k = 0; k < 3; ++k) t += std::sin(fy[k] * y + fx[k] * x + ph[k]) / 6.0;
            const double grain = uniform(-0.03, 0.03);
            bg.at(0, y, x) = ground_a.r + t * (ground_b.r - ground_a.r) + grain;
            bg.at(1, y, x) = ground_a.g + t * (ground_b.g - ground_a.g) + grain;
            bg.at(2, y, x) = ground_a.b + t * (ground_b.b - ground_a.b) + grain;
        }
    }

    Canvas ca = bg, cb = bg;
    for (const Placement& p : out.placements) {
        const double shade = uniform(0.94, 1.06);
        const Rect box = bounds(p.parts);
        for (std::int64_t y = box.y; y < box.y + box.h; ++y) {
            for (std::int64_t x = box.x; x < box.x + box.w; ++x) {
                const Rect pt{y, x, 1, 1};
                if (std::none_of(p.parts.begin(), p.parts.end(), [&](const Rect& r) { return inside(r, pt); })) continue;
                // Darker rim where a 4-neighbour lies outside the footprint.
                bool rim = false;
                for (auto [dy, dx] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
                    const Rect q{y + dy, x + dx, 1, 1};
                    if (std::none_of(p.parts.begin(), p.parts.end(), [&](const Rect& r) { return inside(r, q); })) {
                        rim = true;
                    }
                }
                const double f = shade * (rim ? 0.8 : 1.0);
                const double grain = uniform(-0.02, 0.02);
                const double v[3] = {p.color.r * f + grain, p.color.g * f + grain, p.color.b * f + grain};
                for (int c = 0; c < 3; ++c) {
                    if (p.state != BuildingState::kAppeared) ca.at(c, y, x) = v[c];
                    if (p.state != BuildingState::kRemoved) cb.at(c, y, x) = v[c];
                }
            }
        }
    }

    // Global photometric change on the second date plus independent sensor
    // noise on each date.
    const double gain = 1.0 + spec.jitter * uniform(-1, 1);
    double shift[3];
    for (double& s : shift) s = 0.5 * spec.jitter * uniform(-1, 1);
    for (std::int64_t i = 0; i < n * n; ++i) {
        for (int c = 0; c < 3; ++c) {
            double& v = cb.px[static_cast<std::size_t>(c * n * n + i)];
            v = gain * v + shift[c];
        }
    }
    for (Canvas* cv : {&ca, &cb}) {
        for (double& v : cv->px) v += uniform(-0.01, 0.01);
    }

    const auto quantize = [n](const Canvas& cv) {
        Image8 img(n, n, 3);
        for (std::int64_t i = 0; i < n * n; ++i) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(cv.px[static_cast<std::size_t>(c * n * n + i)], 0.0, 1.0);
                img.pixels[static_cast<std::size_t>(i * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
        return img;
    };
    out.a = quantize(ca);
    out.b = quantize(cb);

    out.mask = BinaryMask(n, n);
    for (const Placement& p : out.placements) {
        if (p.state == BuildingState::kUnchanged) continue;
        for (const Rect& r : p.parts) {
            for (std::int64_t y = r.y; y < r.y + r.h; ++y) {
                for (std::int64_t x = r.x; x < r.x + r.w; ++x) out.mask.at(y, x) = 1;
            }
        }
    }
    return out;
}

namespace {

const char* state_name(BuildingState s) {
    switch (s) {
        case BuildingState::kAppeared: return "appeared";
        case BuildingState::kRemoved: return "removed";
        default: return "unchanged";
    }
}

BuildingState parse_state(const std::string& s) {
    if (s == "appeared") return BuildingState::kAppeared;
    if (s == "removed") return BuildingState::kRemoved;
    if (s == "unchanged") return BuildingState::kUnchanged;
    throw std::invalid_argument("unknown building state '" + s + "'");
}

}  // namespace

json placements_to_json(const std::vector<Placement>& placements) {
    json arr = json::array();
    for (const Placement& p : placements) {
        json parts = json::array();
        for (const Rect& r : p.parts) parts.push_back({r.y, r.x, r.h, r.w});
        arr.push_back({{"parts", parts}, {"state", state_name(p.state)}, {"special", p.special},
                       {"color", rgb_json(p.color)}});
    }
    return arr;
}

std::vector<Placement> placements_from_json(const json& j) {
    std::vector<Placement> out;
    for (const json& e : j) {
        Placement p;
        for (const json& r : e.at("parts")) {
            const auto v = r.get<std::vector<std::int64_t>>();
            if (v.size() != 4) throw std::invalid_argument("placement rectangle needs y, x, h, w");
            p.parts.push_back({v[0], v[1], v[2], v[3]});
        }
        p.state = parse_state(e.at("state").get<std::string>());
        p.special = e.at("special").get<bool>();
        p.color = rgb_from(e.at("color"));
        out.push_back(std::move(p));
    }
    return out;
}

DatasetManifest synth_generate(const SynthSpec& spec, const std::string& root) {
    validate_synth_spec(spec);
    std::vector<std::string> ids;
    for (int i = 0; i < spec.n_samples; ++i) ids.push_back(synth_id(i));
    DatasetManifest m = split(ids, spec.ratios, spec.seed);
    m.root = root;
    m.tile_size = spec.tile_size;
    m.spec = spec;

    std::vector<int> split_of(static_cast<std::size_t>(spec.n_samples));
    for (int s = 0; s < 3; ++s) {
        for (const std::string& id : m.splits[static_cast<std::size_t>(s)]) {
            split_of[static_cast<std::size_t>(std::stoi(id.substr(1)))] = s;
        }
    }
    json log = json::object();
    for (int i = 0; i < spec.n_samples; ++i) {
        SynthSample smp = synth_render(spec, i);
        write_sample(root, kSplitNames[static_cast<std::size_t>(split_of[static_cast<std::size_t>(i)])], smp.id, smp.a,
                     smp.b, from_mask(smp.mask));
        log[smp.id] = placements_to_json(smp.placements);
    }
    {
        const std::string path = (fs::path(root) / "placements.json").string();
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out << log.dump() << "\n";
    }
    save_manifest(m);
    return m;
}

}  // namespace cgcce
