#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgcce/core_types.hpp"
#include "cgcce/image_io.hpp"

namespace cgcce {

// ---- tiling ----------------------------------------------------------------

enum class TileMode { kGrid, kRandom };

TileMode parse_tile_mode(const std::string& name);

struct Window {
    std::int64_t y = 0;
    std::int64_t x = 0;
    std::int64_t size = 0;
    bool operator==(const Window&) const = default;
};

/// Grid: non-overlapping row-major windows (remainders dropped). Random:
/// `count` windows drawn from a generator seeded with `seed`.
std::vector<Window> tile_windows(std::int64_t height, std::int64_t width, int size, TileMode mode, int count,
                                 std::uint64_t seed);

/// A large co-registered pair; `label` has one channel.
struct ScenePair {
    Image8 a;
    Image8 b;
    Image8 label;
    std::string id;
};

struct Tile {
    Image8 a;
    Image8 b;
    Image8 label;
    Window window;
    std::string id;  // <scene id>_<y>_<x>
};

std::vector<Tile> tile_images(const ScenePair& scene, int size, TileMode mode, int count, std::uint64_t seed);
BiTemporalSample to_sample(const Tile& tile);
std::vector<BiTemporalSample> tile(const ScenePair& scene, int size, TileMode mode, int count, std::uint64_t seed);

// ---- splits and manifests ---------------------------------------------------

inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

struct DatasetManifest {
    std::string root;  // directory holding the split folders
    std::array<std::vector<std::string>, 3> splits;
    int tile_size = 256;
    std::array<double, 3> ratios{7, 2, 1};
    std::uint64_t seed = 0;
    nlohmann::json spec;  // generator settings, if synthetic

    [[nodiscard]] const std::vector<std::string>& ids(const std::string& split) const;
};

int split_index(const std::string& split);

/// Largest-remainder apportionment of n items.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Seeded shuffle, then contiguous train/val/test partition.
DatasetManifest split(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Written to <root>/manifest.json. On load, `root` becomes the file's directory.
void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);
/// Disjoint splits and every A/B/label file present; throws listing offenders.
void check_manifest(const DatasetManifest& manifest);

std::string sample_path(const std::string& root, const std::string& split, const char* kind, const std::string& id);
void write_sample(const std::string& root, const std::string& split, const std::string& id, const Image8& a,
                  const Image8& b, const Image8& label);
std::vector<BiTemporalSample> load_split(const DatasetManifest& manifest, const std::string& split);

// ---- synthetic generator -----------------------------------------------------

struct Rgb {
    double r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

struct SynthSpec {
    int n_samples = 64;
    int tile_size = 256;
    int min_buildings = 3;
    int max_buildings = 7;
    double min_extent = 0.08;  // building side, as a fraction of the tile
    double max_extent = 0.22;
    double change_prob = 0.5;
    double l_shape_prob = 0.3;
    std::vector<Rgb> common_palette{
        {0.55, 0.55, 0.55}, {0.62, 0.32, 0.26}, {0.74, 0.66, 0.52}, {0.40, 0.46, 0.56}, {0.30, 0.30, 0.33}};
    std::vector<Rgb> special_palette{{0.35, 0.10, 0.45}, {0.97, 0.97, 0.95}};
    double special_ratio = 0.3;
    double jitter = 0.1;
    std::uint64_t seed = 0;
    int grid = 1;  // building coordinates snap to this many pixels
    std::array<double, 3> ratios{7, 2, 1};

    bool operator==(const SynthSpec&) const = default;
};

void to_json(nlohmann::json& j, const SynthSpec& spec);
void from_json(const nlohmann::json& j, SynthSpec& spec);
void validate_synth_spec(const SynthSpec& spec);

struct Rect {
    std::int64_t y = 0, x = 0, h = 0, w = 0;
    bool operator==(const Rect&) const = default;
};

enum class BuildingState { kUnchanged, kAppeared, kRemoved };

struct Placement {
    std::vector<Rect> parts;  // one rectangle, or two forming an L
    BuildingState state = BuildingState::kUnchanged;
    bool special = false;
    Rgb color;
};

struct SynthSample {
    std::string id;
    Image8 a;
    Image8 b;
    BinaryMask mask;
    std::vector<Placement> placements;
};

std::string synth_id(int index);
/// Depends only on (spec, index).
SynthSample synth_render(const SynthSpec& spec, int index);
/// Renders every sample, splits by spec.ratios, writes images, the manifest
/// and placements.json under `root`.
DatasetManifest synth_generate(const SynthSpec& spec, const std::string& root);

nlohmann::json placements_to_json(const std::vector<Placement>& placements);
std::vector<Placement> placements_from_json(const nlohmann::json& j);

}  // namespace cgcce
