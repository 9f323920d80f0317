#include "gsrig/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "gsrig/types.hpp"

namespace gsrig {

namespace {

uint8_t to_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

void write_png_bytes(const Image& img, const std::string& path, bool srgb) {
    cv::Mat m(img.height, img.width,
              img.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (img.channels == 1) {
                m.at<uint8_t>(y, x) = to_byte(img.at(x, y, 0));
            } else {
                cv::Vec3b px;  // BGR
                for (int c = 0; c < 3; ++c) {
                    double v = img.at(x, y, c);
                    if (srgb) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2);
                    px[2 - c] = to_byte(v);
                }
                m.at<cv::Vec3b>(y, x) = px;
            }
        }
    if (!cv::imwrite(path, m))
        throw LoadError("failed to write PNG: " + path);
}

}  // namespace

void save_png(const Image& img, const std::string& path) {
    write_png_bytes(img, path, false);
}

void save_png_srgb(const Image& img, const std::string& path) {
    write_png_bytes(img, path, true);
}

Image load_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw LoadError("failed to read PNG: " + path);
    const int c = m.channels() >= 3 ? 3 : 1;
    Image img(m.cols, m.rows, c);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            if (c == 1) {
                img.at(x, y, 0) = m.at<uint8_t>(y, x) / 255.0;
            } else {
                cv::Vec3b px = m.at<cv::Vec3b>(y, x);
                for (int k = 0; k < 3; ++k)
                    img.at(x, y, k) = px[2 - k] / 255.0;
            }
        }
    return img;
}

void save_f32(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for write: " + path);
    f.write("GSIF", 4);
    const uint32_t dims[3] = {uint32_t(img.width), uint32_t(img.height),
                              uint32_t(img.channels)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    std::vector<float> buf(img.data.begin(), img.data.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
    if (!f) throw LoadError("write failed: " + path);
}

Image load_f32(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open: " + path);
    char magic[4];
    uint32_t dims[3];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!f || std::memcmp(magic, "GSIF", 4) != 0)
        throw LoadError("bad float image header: " + path);
    Image img{int(dims[0]), int(dims[1]), int(dims[2])};
    std::vector<float> buf(img.data.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           std::streamsize(buf.size() * sizeof(float)));
    if (!f) throw LoadError("truncated float image: " + path);
    std::copy(buf.begin(), buf.end(), img.data.begin());
    return img;
}

}  // namespace gsrig
