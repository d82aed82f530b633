#pragma once

#include "meshgs/common.hpp"

#include <filesystem>
#include <vector>

namespace meshgs {

/// Interleaved RGB image with double channels, row-major from the top-left
/// pixel.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    Vec3 pixel(int x, int y) const {
        const size_t o = (static_cast<size_t>(y) * width + x) * 3;
        return {data[o], data[o + 1], data[o + 2]};
    }
    void set_pixel(int x, int y, const Vec3& c) {
        const size_t o = (static_cast<size_t>(y) * width + x) * 3;
        data[o] = c.x();
        data[o + 1] = c.y();
        data[o + 2] = c.z();
    }
    bool same_shape(const Image& other) const { return width == other.width && height == other.height; }
};

/// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded to the nearest
/// level on write; reading yields exact multiples of 1/255.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Little-endian 32-bit float PFM ("PF" header, bottom-to-top rows).
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

/// Dispatches on extension (.png or .pfm).
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

} // namespace meshgs
