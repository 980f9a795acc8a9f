#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgcce/autograd.hpp"

namespace cgcce {

inline constexpr int kNumScales = 4;
inline constexpr std::array<int, kNumScales> kStrides{4, 8, 16, 32};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Network hyper-parameters and module switches. Serialized as a flat JSON
/// object whose keys are the field names below.
struct ModelConfig {
    std::array<int, kNumScales> stage_channels{16, 32, 64, 128};
    std::array<int, kNumScales> stage_depths{1, 1, 1, 1};
    std::array<int, kNumScales> attn_heads{1, 2, 4, 8};
    std::array<int, kNumScales> sra_reduction{8, 4, 2, 1};
    std::vector<int> scem_kernels{3, 5, 7};
    bool enable_gccm = true;
    bool enable_cgrr = true;
    bool enable_scem = true;
    bool enable_cfd = true;
    int tile_size = 256;
    double threshold = 0.5;

    static ModelConfig toy();
    /// Widths of common four-stage pyramid transformers.
    static ModelConfig full();

    bool operator==(const ModelConfig&) const = default;
};

/// Returns `cfg` unchanged when every invariant holds; throws ConfigError
/// naming the offending field otherwise.
ModelConfig validate_config(const ModelConfig& cfg);

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);
ModelConfig load_config(const std::string& path);
void save_config(const ModelConfig& cfg, const std::string& path);

struct BinaryMask {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> values;  // row-major, each 0 or 1

    BinaryMask() = default;
    BinaryMask(std::int64_t h, std::int64_t w) : height(h), width(w), values(static_cast<std::size_t>(h * w), 0) {}
    std::uint8_t& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
    std::uint8_t at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
    bool operator==(const BinaryMask&) const = default;
};

/// Co-registered image pair (3xHxW each, values in [0,1]) with its change mask.
struct BiTemporalSample {
    Tensor image_t1;
    Tensor image_t2;
    BinaryMask mask;
    std::string id;
};

/// Throws if the sample breaks the shared-extent, binary-mask or tile-size rules.
void check_sample(const BiTemporalSample& sample, int tile_size);

/// Four encoder scales at strides 4/8/16/32 relative to the input.
struct FeaturePyramid {
    std::array<Var, kNumScales> scales;
};

/// Throws ShapeError unless scale j is batch x stage_channels[j] x (tile/stride_j)^2.
void check_pyramid(const FeaturePyramid& pyramid, const ModelConfig& cfg, std::int64_t height, std::int64_t width);

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    [[nodiscard]] std::int64_t total() const noexcept { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

}  // namespace cgcce
