#include "cgcce/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace cgcce {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("read_png: channels must be 1 or 3");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read " + path + ": " + img.message);
    }
    img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 out(img.height, img.width, channels);
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode " + path + ": " + msg);
    }
    return out;
}

void write_png(const std::string& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path + " for writing");
    if (!png_image_write_to_stdio(&img, f.get(), 0, image.pixels.data(), 0, nullptr)) {
        throw IoError("cannot encode " + path + ": " + img.message);
    }
}

Tensor to_tensor(const Image8& rgb) {
    if (rgb.channels != 3) throw ShapeError("to_tensor: expected 3 channels");
    Tensor t({3, rgb.height, rgb.width});
    const std::int64_t plane = rgb.height * rgb.width;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) t[c * plane + i] = rgb.pixels[static_cast<std::size_t>(i * 3 + c)] / 255.0;
    }
    return t;
}

Image8 from_tensor(const Tensor& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("from_tensor: expected 3xHxW, got " + to_string(chw.shape()));
    Image8 out(chw.dim(1), chw.dim(2), 3);
    const std::int64_t plane = out.height * out.width;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::lround(std::clamp(chw[c * plane + i], 0.0, 1.0) * 255.0);
            out.pixels[static_cast<std::size_t>(i * 3 + c)] = static_cast<std::uint8_t>(v);
        }
    }
    return out;
}

BinaryMask to_mask(const Image8& gray) {
    if (gray.channels != 1) throw ShapeError("to_mask: expected 1 channel");
    BinaryMask m(gray.height, gray.width);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = gray.pixels[i] >= 128 ? 1 : 0;
    return m;
}

Image8 from_mask(const BinaryMask& mask) {
    Image8 out(mask.height, mask.width, 1);
    for (std::size_t i = 0; i < mask.values.size(); ++i) out.pixels[i] = mask.values[i] ? 255 : 0;
    return out;
}

Image8 crop(const Image8& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
    if (y < 0 || x < 0 || y + h > image.height || x + w > image.width) {
        throw ShapeError("crop: window exceeds " + std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    Image8 out(h, w, image.channels);
    const auto row = static_cast<std::size_t>(w * image.channels);
    for (std::int64_t r = 0; r < h; ++r) {
        const auto src = static_cast<std::size_t>(((y + r) * image.width + x) * image.channels);
        std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(src), row,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::int64_t>(row)));
    }
    return out;
}

}  // namespace cgcce
