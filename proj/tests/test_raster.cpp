#include <doctest.h>

#include <random>

#include "gsrig/raster.hpp"

using namespace gsrig;

namespace {

Camera test_camera(int w = 32, int h = 32) {
    Camera c;
    c.width = w;
    c.height = h;
    c.fx = c.fy = 0.8 * w;
    c.cx = 0.5 * (w - 1);
    c.cy = 0.5 * (h - 1);
    return c;
}

std::vector<ProjectedSplat> random_scene(std::mt19937_64& rng, const Camera& cam,
                                         int max_splats) {
    std::uniform_int_distribution<int> count(1, max_splats);
    std::uniform_real_distribution<double> ux(-0.7, 0.7), uz(1.5, 4.0),
        uo(0.05, 0.95), uc(0, 1), uls(std::log(0.05), std::log(0.5));
    std::normal_distribution<double> n;
    const int m = count(rng);
    std::vector<ProjectedSplat> out;
    for (int i = 0; i < m; ++i) {
        Vec4 q(n(rng), n(rng), n(rng), n(rng));
        q /= q.norm();
        const Vec3 ls(uls(rng), uls(rng), uls(rng));
        auto s = project(Vec3(ux(rng), ux(rng), uz(rng)),
                         covariance_from_params(q, ls), cam);
        REQUIRE(s.has_value());
        s->color = Vec3(uc(rng), uc(rng), uc(rng));
        s->opacity = uo(rng);
        s->source_index = i;
        out.push_back(*s);
    }
    return out;
}

}  // namespace

TEST_CASE("projection applies the pinhole model and dilation") {
    Camera cam = test_camera();
    const Vec3 p(0.5, -0.25, 2.0);
    const auto s = project(p, Mat3::Zero(), cam);
    REQUIRE(s.has_value());
    CHECK(s->mean2d[0] == doctest::Approx(cam.fx * 0.25 + cam.cx));
    CHECK(s->mean2d[1] == doctest::Approx(cam.fy * -0.125 + cam.cy));
    CHECK(s->depth == 2.0);
    // Zero 3D covariance still leaves the 0.3 screen-space dilation.
    CHECK(s->cov2d(0, 0) == doctest::Approx(0.3));
    CHECK(s->cov2d(1, 1) == doctest::Approx(0.3));
    CHECK(s->cov2d(0, 1) == 0.0);
}

TEST_CASE("points behind the near plane are culled") {
    Camera cam = test_camera();
    CHECK(!project(Vec3(0, 0, 0.0), Mat3::Identity(), cam).has_value());
    CHECK(!project(Vec3(0, 0, -1.0), Mat3::Identity(), cam).has_value());
    CHECK(project(Vec3(0, 0, 0.02), Mat3::Identity(), cam).has_value());
}

TEST_CASE("single opaque splat renders its color at the center") {
    Camera cam = test_camera();
    auto s = project(Vec3(0, 0, 2), 0.01 * Mat3::Identity(), cam);
    s->color = Vec3(1, 0.5, 0.25);
    s->opacity = 0.95;
    const RenderOutput out = render({*s}, cam);
    // Pixel centers sample at i + 0.5, so the projected mean (15.5, 15.5)
    // lands exactly on pixel (15, 15).
    const int cx = 15, cy = 15;
    // At the mean, alpha ~ opacity.
    CHECK(out.image.at(cx, cy, 0) == doctest::Approx(0.95).epsilon(0.05));
    CHECK(out.image.at(cx, cy, 1) ==
          doctest::Approx(out.image.at(cx, cy, 0) * 0.5).epsilon(1e-9));
    // Far corner: outside the 3-sigma support, exactly background.
    CHECK(out.image.at(0, 0, 0) == 0.0);
    CHECK(out.transmittance.at(0, 0, 0) == 1.0);
}

TEST_CASE("blending is order correct front to back") {
    Camera cam = test_camera();
    auto front = project(Vec3(0, 0, 2), 0.04 * Mat3::Identity(), cam);
    auto back = project(Vec3(0, 0, 3), 0.04 * Mat3::Identity(), cam);
    front->color = Vec3(1, 0, 0);
    front->opacity = 0.6;
    back->color = Vec3(0, 1, 0);
    back->opacity = 0.9;
    front->source_index = 0;
    back->source_index = 1;
    const int cx = cam.width / 2, cy = cam.height / 2;
    // Insertion order must not matter, depth must.
    const RenderOutput a = render({*front, *back}, cam);
    const RenderOutput b = render({*back, *front}, cam);
    for (int c = 0; c < 3; ++c)
        CHECK(a.image.at(cx, cy, c) == b.image.at(cx, cy, c));
    CHECK(a.image.at(cx, cy, 0) > a.image.at(cx, cy, 1));  // red in front
}

TEST_CASE("alpha is capped at 0.99") {
    Camera cam = test_camera();
    auto s = project(Vec3(0, 0, 2), 0.04 * Mat3::Identity(), cam);
    s->color = Vec3(1, 1, 1);
    s->opacity = 5.0;  // malformed on purpose; cap still bounds it
    const RenderOutput out = render({*s}, cam);
    const int cx = cam.width / 2, cy = cam.height / 2;
    CHECK(out.image.at(cx, cy, 0) <= 0.99 + 1e-12);
    CHECK(out.transmittance.at(cx, cy, 0) >= 0.01 - 1e-12);
}

TEST_CASE("tiled renderer matches the brute-force reference") {
    std::mt19937_64 rng(51);
    Camera cam = test_camera();
    for (int scene = 0; scene < 30; ++scene) {
        const auto splats = random_scene(rng, cam, 64);
        const RenderOutput tiled = render(splats, cam);
        const RenderOutput ref = render_reference(splats, cam);
        double max_diff = 0;
        for (size_t i = 0; i < tiled.image.data.size(); ++i)
            max_diff = std::max(max_diff, std::abs(tiled.image.data[i] -
                                                   ref.image.data[i]));
        CHECK(max_diff <= 1e-5);
    }
}

TEST_CASE("equal depths break ties by source index") {
    Camera cam = test_camera();
    auto a = project(Vec3(0, 0, 2), 0.04 * Mat3::Identity(), cam);
    auto b = project(Vec3(0, 0, 2), 0.04 * Mat3::Identity(), cam);
    a->color = Vec3(1, 0, 0);
    b->color = Vec3(0, 1, 0);
    a->opacity = b->opacity = 0.7;
    a->source_index = 0;
    b->source_index = 1;
    const RenderOutput r1 = render({*a, *b}, cam);
    const RenderOutput r2 = render({*b, *a}, cam);
    const int cx = cam.width / 2, cy = cam.height / 2;
    // Lower source index blends first regardless of submission order.
    CHECK(r1.image.at(cx, cy, 0) == r2.image.at(cx, cy, 0));
    CHECK(r1.image.at(cx, cy, 0) > r1.image.at(cx, cy, 1));
}

TEST_CASE("raster_op output matches the plain renderer") {
    Camera cam = test_camera(16, 16);
    ad::Tape tape;
    ad::Tensor pos(2, 3), quat(2, 4), ls(2, 3), op(2, 1), col(2, 3);
    pos(0, 2) = 2.0;
    pos(1, 0) = 0.2;
    pos(1, 2) = 2.5;
    quat(0, 0) = quat(1, 0) = 1.0;
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c) ls(i, c) = std::log(0.15);
    op(0, 0) = 0.8;
    op(1, 0) = 0.5;
    col(0, 0) = 1.0;
    col(1, 1) = 1.0;
    RasterStats stats;
    ad::Tape::Id out = raster_op(tape, tape.leaf(pos), tape.leaf(quat),
                                 tape.leaf(ls), tape.leaf(op), tape.leaf(col),
                                 cam, &stats);

    std::vector<ProjectedSplat> splats;
    for (int i = 0; i < 2; ++i) {
        auto s = project(Vec3(pos(i, 0), pos(i, 1), pos(i, 2)),
                         covariance_from_params(
                             Vec4(quat(i, 0), quat(i, 1), quat(i, 2), quat(i, 3)),
                             Vec3(ls(i, 0), ls(i, 1), ls(i, 2))),
                         cam);
        s->color = Vec3(col(i, 0), col(i, 1), col(i, 2));
        s->opacity = op(i, 0);
        s->source_index = i;
        splats.push_back(*s);
    }
    const RenderOutput want = render(splats, cam);
    for (size_t i = 0; i < want.image.data.size(); ++i)
        CHECK(tape.val(out).v[i] == want.image.data[i]);

    // Backward fills the densification stats.
    tape.backward(tape.mean(out));
    CHECK(stats.visible.size() == 2);
    CHECK(stats.visible[0] == 1);
    CHECK(stats.grad_mean2d_norm.size() == 2);
    CHECK(stats.grad_mean2d_norm[0] > 0.0);
}

TEST_CASE("transmittance stop terminates the walk") {
    Camera cam = test_camera();
    // Ten stacked near-opaque splats: transmittance underruns 1e-4 and the
    // pixel saturates without the remaining splats contributing.
    std::vector<ProjectedSplat> splats;
    for (int i = 0; i < 10; ++i) {
        auto s = project(Vec3(0, 0, 2.0 + 0.1 * i), 0.04 * Mat3::Identity(), cam);
        s->color = Vec3(i < 5 ? 1.0 : 0.0, 0, 0);
        s->opacity = 0.98;
        s->source_index = i;
        splats.push_back(*s);
    }
    const RenderOutput out = render(splats, cam);
    const int cx = cam.width / 2, cy = cam.height / 2;
    CHECK(out.transmittance.at(cx, cy, 0) < 1e-4);
    CHECK(out.image.at(cx, cy, 0) > 0.99);
}
