#pragma once

#include <string>
#include <vector>

namespace gsrig {

// Row-major H x W x C image of doubles, linear RGB in [0,1] for renders.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

    double& at(int x, int y, int c) {
        return data[(size_t(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const {
        return data[(size_t(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
};

// 8-bit PNG I/O. Values are clamped to [0,1] and scaled by 255 on save;
// loads divide by 255. No transfer function is applied here.
void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);

// Display encoding for render outputs: x^(1/2.2) then 8-bit PNG.
void save_png_srgb(const Image& img, const std::string& path);

// Lossless dump: magic "GSIF", u32 width/height/channels, f32 data, all
// little-endian.
void save_f32(const Image& img, const std::string& path);
Image load_f32(const std::string& path);

}  // namespace gsrig
