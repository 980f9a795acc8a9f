#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgcce/core_types.hpp"

namespace cgcce {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit raster, row-major with interleaved channels (1 or 3).
struct Image8 {
    std::int64_t height = 0;
    std::int64_t width = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(std::int64_t h, std::int64_t w, int c)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h * w * c), 0) {}
    std::uint8_t& at(std::int64_t y, std::int64_t x, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    bool operator==(const Image8&) const = default;
};

/// Grayscale and palette inputs are expanded; alpha is dropped.
Image8 read_png(const std::string& path, int channels);
void write_png(const std::string& path, const Image8& image);

/// 3 x H x W in [0,1].
Tensor to_tensor(const Image8& rgb);
Image8 from_tensor(const Tensor& chw);

/// Pixels >= 128 count as change.
BinaryMask to_mask(const Image8& gray);
/// {0,1} -> {0,255}.
Image8 from_mask(const BinaryMask& mask);

Image8 crop(const Image8& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w);

}  // namespace cgcce
