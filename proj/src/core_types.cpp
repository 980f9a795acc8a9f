#include "cgcce/core_types.hpp"

#include <fstream>

namespace cgcce {

namespace {

std::string indexed(const char* field, int j) { return std::string(field) + "[" + std::to_string(j) + "]"; }

void require_positive(const std::array<int, kNumScales>& values, const char* field) {
    for (int j = 0; j < kNumScales; ++j) {
        if (values[j] <= 0) throw ConfigError(indexed(field, j) + " must be positive");
    }
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig cfg;
    cfg.stage_channels = {64, 128, 320, 512};
    cfg.stage_depths = {3, 4, 6, 3};
    return cfg;
}

ModelConfig validate_config(const ModelConfig& cfg) {
    require_positive(cfg.stage_channels, "stage_channels");
    require_positive(cfg.stage_depths, "stage_depths");
    require_positive(cfg.attn_heads, "attn_heads");
    require_positive(cfg.sra_reduction, "sra_reduction");
    for (int j = 0; j < kNumScales; ++j) {
        if (cfg.stage_channels[j] % cfg.attn_heads[j] != 0) {
            throw ConfigError(indexed("stage_channels", j) + " not divisible by " + indexed("attn_heads", j));
        }
    }
    if (cfg.scem_kernels.empty()) throw ConfigError("scem_kernels must not be empty");
    for (int k : cfg.scem_kernels) {
        if (k <= 0 || k % 2 == 0) throw ConfigError("scem_kernels contains even or non-positive kernel " + std::to_string(k));
    }
    if (cfg.tile_size <= 0 || cfg.tile_size % 32 != 0) {
        throw ConfigError("tile_size " + std::to_string(cfg.tile_size) + " must be a positive multiple of 32");
    }
    for (int j = 0; j < kNumScales; ++j) {
        const int extent = cfg.tile_size / kStrides[j];
        if (extent % cfg.sra_reduction[j] != 0) {
            throw ConfigError(indexed("sra_reduction", j) + " does not divide scale extent " + std::to_string(extent));
        }
    }
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
    return cfg;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"stage_channels", cfg.stage_channels}, {"stage_depths", cfg.stage_depths},
                       {"attn_heads", cfg.attn_heads},         {"sra_reduction", cfg.sra_reduction},
                       {"scem_kernels", cfg.scem_kernels},     {"enable_gccm", cfg.enable_gccm},
                       {"enable_cgrr", cfg.enable_cgrr},       {"enable_scem", cfg.enable_scem},
                       {"enable_cfd", cfg.enable_cfd},         {"tile_size", cfg.tile_size},
                       {"threshold", cfg.threshold}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const char* known[] = {"stage_channels", "stage_depths", "attn_heads",  "sra_reduction",
                                  "scem_kernels",   "enable_gccm",  "enable_cgrr", "enable_scem",
                                  "enable_cfd",     "tile_size",    "threshold"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw ConfigError("unknown config field '" + item.key() + "'");
    }
    auto read = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
        }
    };
    read("stage_channels", cfg.stage_channels);
    read("stage_depths", cfg.stage_depths);
    read("attn_heads", cfg.attn_heads);
    read("sra_reduction", cfg.sra_reduction);
    read("scem_kernels", cfg.scem_kernels);
    read("enable_gccm", cfg.enable_gccm);
    read("enable_cgrr", cfg.enable_cgrr);
    read("enable_scem", cfg.enable_scem);
    read("enable_cfd", cfg.enable_cfd);
    read("tile_size", cfg.tile_size);
    read("threshold", cfg.threshold);
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
    return j.get<ModelConfig>();
}

void save_config(const ModelConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path);
    out << nlohmann::json(cfg).dump(2) << '\n';
}

void check_sample(const BiTemporalSample& s, int tile_size) {
    const auto& a = s.image_t1.shape();
    const auto& b = s.image_t2.shape();
    if (a.size() != 3 || a[0] != 3 || a != b) {
        throw ShapeError("sample " + s.id + ": images must both be 3xHxW, got " + to_string(a) + " and " + to_string(b));
    }
    if (s.mask.height != a[1] || s.mask.width != a[2]) throw ShapeError("sample " + s.id + ": mask extent differs");
    if (a[1] != tile_size || a[2] != tile_size) {
        throw ShapeError("sample " + s.id + ": expected " + std::to_string(tile_size) + "x" + std::to_string(tile_size) +
                         " tile, got " + to_string(a));
    }
    for (auto v : s.mask.values) {
        if (v > 1) throw std::invalid_argument("sample " + s.id + ": mask value " + std::to_string(v) + " not in {0,1}");
    }
}

void check_pyramid(const FeaturePyramid& pyramid, const ModelConfig& cfg, std::int64_t height, std::int64_t width) {
    for (int j = 0; j < kNumScales; ++j) {
        const Var& s = pyramid.scales[j];
        if (!s.defined()) throw ShapeError("pyramid scale " + std::to_string(j + 1) + " missing");
        const Shape& sh = s.shape();
        if (sh.size() != 4 || sh[1] != cfg.stage_channels[j] || sh[2] != height / kStrides[j] ||
            sh[3] != width / kStrides[j]) {
            throw ShapeError("pyramid scale " + std::to_string(j + 1) + " has shape " + to_string(sh));
        }
    }
}

}  // namespace cgcce
