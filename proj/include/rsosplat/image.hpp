#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace rsosplat {

/// Row-major interleaved RGB image with channel values nominally in [0, 1].
struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    ImageRGB() = default;
    ImageRGB(int w, int h, double fill = 0.0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * width + x) * 3;
    }

    double& at(int x, int y, int c) { return pixels[offset(x, y) + c]; }
    double at(int x, int y, int c) const { return pixels[offset(x, y) + c]; }

    Eigen::Map<Eigen::Vector3d> rgb(int x, int y) { return Eigen::Map<Eigen::Vector3d>(&pixels[offset(x, y)]); }
    Eigen::Map<const Eigen::Vector3d> rgb(int x, int y) const {
        return Eigen::Map<const Eigen::Vector3d>(&pixels[offset(x, y)]);
    }

    void fill(const Eigen::Vector3d& color);
    bool same_size(const ImageRGB& other) const {
        return width == other.width && height == other.height;
    }
    bool in_unit_range() const;

    friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Reads an 8-bit (or 16-bit, reduced to 8) PNG. Gray and palette images are
/// expanded to RGB; alpha is discarded.
ImageRGB read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG, clamping and rounding each channel.
void write_png(const std::filesystem::path& path, const ImageRGB& image);

/// Quantizes to 8 bits and back, i.e. the values a PNG round-trip yields.
ImageRGB quantize_8bit(const ImageRGB& image);

} // namespace rsosplat
