#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "gsrig/image.hpp"
#include "gsrig/types.hpp"

using namespace gsrig;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

Image random_image(int w, int h, int c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, c);
    for (double& v : img.data) v = u(rng);
    return img;
}

}  // namespace

TEST_CASE("f32 dump round trip is exact at f32") {
    const Image img = random_image(13, 7, 3, 5);
    const auto path = tmp_file("gsrig_img.f32");
    save_f32(img, path.string());
    const Image back = load_f32(path.string());
    REQUIRE(back.width == 13);
    REQUIRE(back.height == 7);
    REQUIRE(back.channels == 3);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(back.data[i] == double(float(img.data[i])));
    fs::remove(path);
}

TEST_CASE("png round trip quantizes to 8 bits") {
    const Image img = random_image(16, 16, 3, 6);
    const auto path = tmp_file("gsrig_img.png");
    save_png(img, path.string());
    const Image back = load_png(path.string());
    REQUIRE(back.width == 16);
    REQUIRE(back.channels == 3);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
    fs::remove(path);
}

TEST_CASE("single channel png round trip") {
    Image img(8, 8, 1);
    img.at(3, 4, 0) = 1.0;
    const auto path = tmp_file("gsrig_mask.png");
    save_png(img, path.string());
    const Image back = load_png(path.string());
    REQUIRE(back.channels == 1);
    CHECK(back.at(3, 4, 0) == 1.0);
    CHECK(back.at(0, 0, 0) == 0.0);
    fs::remove(path);
}

TEST_CASE("load errors name the file") {
    CHECK_THROWS_AS(load_png("/nonexistent/no.png"), LoadError);
    CHECK_THROWS_AS(load_f32("/nonexistent/no.f32"), LoadError);

    const auto path = tmp_file("gsrig_bad.f32");
    std::ofstream(path) << "not a float image";
    CHECK_THROWS_AS(load_f32(path.string()), LoadError);
    fs::remove(path);
}

TEST_CASE("srgb save applies display encoding") {
    Image img(11, 11, 3, 0.5);
    const auto path = tmp_file("gsrig_srgb.png");
    save_png_srgb(img, path.string());
    const Image back = load_png(path.string());
    CHECK(back.at(5, 5, 0) ==
          doctest::Approx(std::round(std::pow(0.5, 1 / 2.2) * 255) / 255.0));
    fs::remove(path);
}
