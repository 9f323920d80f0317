#include <doctest.h>

#include <filesystem>
#include <random>

#include "gsrig/mesh.hpp"

using namespace gsrig;
namespace fs = std::filesystem;

namespace {

MorphableMesh fixture_mesh(uint64_t seed = 3) {
    return make_icosphere_head(2, 4, 1.0, seed);
}

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    q /= q.norm();
    return quat_to_matrix(q);
}

}  // namespace

TEST_CASE("icosphere vertex counts follow 10*4^s + 2") {
    CHECK(make_icosphere_head(0, 1, 1.0, 1).vertex_count() == 12);
    CHECK(make_icosphere_head(1, 1, 1.0, 1).vertex_count() == 42);
    CHECK(make_icosphere_head(2, 1, 1.0, 1).vertex_count() == 162);
    CHECK(make_icosphere_head(3, 1, 1.0, 1).vertex_count() == 642);
}

TEST_CASE("icosphere mesh is consistent and unit-ish radius") {
    const MorphableMesh m = fixture_mesh();
    CHECK_NOTHROW(m.check_consistent());
    CHECK(m.expression_count() == 4);
    for (const auto& v : m.vertices_can)
        CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero gamma is the canonical configuration") {
    const MorphableMesh m = fixture_mesh();
    const auto verts = evaluate_mesh(m, {0, 0, 0, 0}, {0, 0, 0, 0});
    for (size_t i = 0; i < m.vertex_count(); ++i)
        CHECK((verts[i] - m.vertices_can[i]).norm() == 0.0);
    const auto vd = vertex_deformations(m, {0, 0, 0, 0}, {0, 0, 0, 0});
    for (const auto& d : vd.delta_v) CHECK(d.norm() == 0.0);
}

TEST_CASE("expression blendshapes combine linearly") {
    const MorphableMesh m = fixture_mesh();
    const std::array<double, 4> no_pose{0, 0, 0, 0};
    const auto a = evaluate_mesh(m, {0.7, 0, 0, 0}, no_pose);
    const auto b = evaluate_mesh(m, {0, -0.4, 0, 0}, no_pose);
    const auto ab = evaluate_mesh(m, {0.7, -0.4, 0, 0}, no_pose);
    for (size_t i = 0; i < m.vertex_count(); ++i) {
        const Vec3 expect =
            a[i] + b[i] - m.vertices_can[i];  // superposition of deltas
        CHECK((ab[i] - expect).norm() < 1e-12);
    }
}

TEST_CASE("head pose is a rigid rotation about the head pivot") {
    const MorphableMesh m = fixture_mesh();
    const std::array<double, 4> pose{0.3, -0.2, 0.1, 0.0};
    const auto verts = evaluate_mesh(m, {0, 0, 0, 0}, pose);
    const Mat3 r = axis_angle_to_matrix(Vec3(0.3, -0.2, 0.1));
    for (size_t i = 0; i < m.vertex_count(); ++i) {
        const Vec3 expect = m.head_pivot + r * (m.vertices_can[i] - m.head_pivot);
        CHECK((verts[i] - expect).norm() < 1e-12);
    }
}

TEST_CASE("jaw opening moves only weighted vertices") {
    const MorphableMesh m = fixture_mesh();
    const auto verts = evaluate_mesh(m, {0, 0, 0, 0}, {0, 0, 0, 0.4});
    for (size_t i = 0; i < m.vertex_count(); ++i) {
        const double moved = (verts[i] - m.vertices_can[i]).norm();
        if (m.jaw_weights[i] == 0.0)
            CHECK(moved == 0.0);
        // Rigid per-vertex rotation keeps the distance to the jaw pivot.
        CHECK((verts[i] - m.jaw_pivot).norm() ==
              doctest::Approx((m.vertices_can[i] - m.jaw_pivot).norm())
                  .epsilon(1e-12));
    }
}

TEST_CASE("dwavg weights by inverse distance") {
    const std::vector<Vec3> deltas = {{1, 0, 0}, {0, 1, 0}};
    SUBCASE("equal distances average evenly") {
        const Vec3 r = dwavg(deltas, {2.0, 2.0});
        CHECK((r - Vec3(0.5, 0.5, 0)).norm() < 1e-9);
    }
    SUBCASE("closer neighbor dominates") {
        // The denominator stabilizer shifts the weights by about 1e-8.
        const Vec3 r = dwavg(deltas, {1.0, 3.0});
        CHECK((r - Vec3(0.75, 0.25, 0)).norm() < 1e-7);
    }
    SUBCASE("exact hit short-circuits") {
        const Vec3 r = dwavg(deltas, {0.0, 3.0});
        CHECK((r - Vec3(1, 0, 0)).norm() == 0.0);
    }
}

TEST_CASE("kabsch recovers random proper rotations") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 100; ++t) {
        const Mat3 r = random_rotation(rng);
        const Vec3 shift(u(rng), u(rng), u(rng));
        std::vector<Vec3> src, dst;
        for (int i = 0; i < 10; ++i) {
            const Vec3 p(u(rng), u(rng), u(rng));
            src.push_back(p);
            dst.push_back(r * p + shift);
        }
        const KabschResult res = kabsch(src, dst);
        CHECK(!res.degenerate);
        CHECK((res.rotation - r).norm() < 1e-9);
    }
}

TEST_CASE("kabsch corrects reflections to det +1") {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(-1, 1);
    Mat3 mirror = Mat3::Identity();
    mirror(2, 2) = -1;
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 10; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng));
        src.push_back(p);
        dst.push_back(mirror * p);
    }
    const KabschResult res = kabsch(src, dst);
    CHECK(res.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("kabsch flags rank-deficient neighborhoods") {
    // Collinear points: cross-covariance rank 1.
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 5; ++i) {
        src.emplace_back(i, 0, 0);
        dst.emplace_back(0, i, 0);
    }
    const KabschResult res = kabsch(src, dst);
    CHECK(res.degenerate);
    CHECK((res.rotation - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("mesh save and load round trip") {
    const MorphableMesh m = fixture_mesh(9);
    const auto dir = fs::temp_directory_path() / "gsrig_mesh_rt";
    save_mesh(m, dir.string());
    const MorphableMesh back = load_mesh(dir.string());
    REQUIRE(back.vertex_count() == m.vertex_count());
    REQUIRE(back.expression_count() == m.expression_count());
    REQUIRE(back.faces.size() == m.faces.size());
    for (size_t i = 0; i < m.vertex_count(); ++i) {
        CHECK((back.vertices_can[i].cast<float>() -
               m.vertices_can[i].cast<float>()).norm() == 0.0f);
        CHECK(back.jaw_weights[i] == double(float(m.jaw_weights[i])));
    }
    CHECK(back.faces == m.faces);
    fs::remove_all(dir);
}

TEST_CASE("load_mesh on a missing directory names it") {
    CHECK_THROWS_AS(load_mesh("/nonexistent/mesh"), LoadError);
}
