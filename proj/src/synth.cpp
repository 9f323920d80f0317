#include "gsrig/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "gsrig/field.hpp"
#include "gsrig/image.hpp"
#include "gsrig/kdtree.hpp"
#include "gsrig/mesh.hpp"
#include "gsrig/raster.hpp"

namespace gsrig {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

Camera make_orbit_camera(double angle, double radius, double height, int width,
                         int height_px) {
    Camera cam;
    cam.width = width;
    cam.height = height_px;
    // 50 degree horizontal field of view keeps the unit head inside frame
    // from every orbit radius in the configured range.
    cam.fx = cam.fy = 0.5 * width / std::tan(25.0 * M_PI / 180.0);
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height_px - 1);

    const Vec3 eye(radius * std::sin(angle), height, radius * std::cos(angle));
    const Vec3 target = Vec3::Zero();
    const Vec3 up(0, 1, 0);
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = up.cross(z).normalized();
    const Vec3 y = z.cross(x);
    Mat4 w2c = Mat4::Identity();
    w2c.block<1, 3>(0, 0) = x.transpose();
    w2c.block<1, 3>(1, 0) = y.transpose();
    w2c.block<1, 3>(2, 0) = z.transpose();
    w2c.block<3, 1>(0, 3) = Vec3(-x.dot(eye), -y.dot(eye), -z.dot(eye));
    cam.world_to_camera = w2c;
    return cam;
}

json camera_to_json(const Camera& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["near_clip"] = c.near_clip;
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) m[4 * r + col] = c.world_to_camera(r, col);
    j["world_to_camera"] = m;
    return j;
}

// Smooth seeded color field so neighboring splats share similar colors.
struct ColorField {
    Vec3 freq[3];
    double phase[3];

    explicit ColorField(std::mt19937_64& rng) {
        std::uniform_real_distribution<double> uf(0.6, 1.8), up(0.0, 2.0 * M_PI);
        for (int c = 0; c < 3; ++c) {
            freq[c] = Vec3(uf(rng), uf(rng), uf(rng));
            phase[c] = up(rng);
        }
    }
    Vec3 at(const Vec3& p) const {
        Vec3 out;
        for (int c = 0; c < 3; ++c) {
            const double v = 0.5 + 0.35 * std::sin(freq[c].dot(p) + phase[c]);
            out[c] = std::clamp(v, 0.05, 0.95);
        }
        return out;
    }
};

struct GammaWalk {
    std::vector<std::vector<double>> exp;          // frames x E
    std::vector<std::array<double, 4>> pose;       // head rx, ry, rz, jaw

    GammaWalk(int frames, int e_dim, std::mt19937_64& rng) {
        std::normal_distribution<double> n01(0.0, 1.0);
        const double yaw_lim = 40.0 * M_PI / 180.0;
        const double jaw_lim = 25.0 * M_PI / 180.0;
        std::vector<double> ge(e_dim, 0.0);
        std::array<double, 4> gp{0, 0, 0, 0};
        for (int f = 0; f < frames; ++f) {
            exp.push_back(ge);
            pose.push_back(gp);
            for (int e = 0; e < e_dim; ++e)
                ge[e] = std::clamp(ge[e] + 0.12 * n01(rng), -1.0, 1.0);
            gp[0] = std::clamp(gp[0] + 0.05 * n01(rng), -yaw_lim, yaw_lim);
            gp[1] = std::clamp(gp[1] + 0.05 * n01(rng), -yaw_lim, yaw_lim);
            gp[3] = std::clamp(gp[3] + 0.03 * n01(rng), 0.0, jaw_lim);
        }
    }
};

// Deformed-mesh silhouette, rasterized by barycentric fill and dilated
// by 2 px (Chebyshev), 1-channel with 1 = head.
Image render_mask(const MorphableMesh& mesh, const std::vector<Vec3>& verts,
                  const Camera& cam) {
    Image mask(cam.width, cam.height, 1, 0.0);
    std::vector<Eigen::Vector2d> proj(verts.size());
    std::vector<uint8_t> in_front(verts.size());
    const Mat3 R = cam.rotation();
    const Vec3 t = cam.translation();
    for (size_t i = 0; i < verts.size(); ++i) {
        const Vec3 p = R * verts[i] + t;
        in_front[i] = p.z() >= cam.near_clip;
        if (in_front[i])
            proj[i] = {cam.fx * p.x() / p.z() + cam.cx,
                       cam.fy * p.y() / p.z() + cam.cy};
    }
    for (const auto& face : mesh.faces) {
        if (!in_front[face[0]] || !in_front[face[1]] || !in_front[face[2]])
            continue;
        const Eigen::Vector2d a = proj[face[0]], b = proj[face[1]],
                              c = proj[face[2]];
        const int x0 = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}))));
        const int x1 = std::min(cam.width - 1,
                                int(std::ceil(std::max({a.x(), b.x(), c.x()}))));
        const int y0 = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}))));
        const int y1 = std::min(cam.height - 1,
                                int(std::ceil(std::max({a.y(), b.y(), c.y()}))));
        const double den =
            (b.y() - c.y()) * (a.x() - c.x()) + (c.x() - b.x()) * (a.y() - c.y());
        if (std::abs(den) < 1e-12) continue;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double w0 = ((b.y() - c.y()) * (x - c.x()) +
                                   (c.x() - b.x()) * (y - c.y())) / den;
                const double w1 = ((c.y() - a.y()) * (x - c.x()) +
                                   (a.x() - c.x()) * (y - c.y())) / den;
                const double w2 = 1.0 - w0 - w1;
                if (w0 >= 0 && w1 >= 0 && w2 >= 0) mask.at(x, y, 0) = 1.0;
            }
    }
    for (int pass = 0; pass < 2; ++pass) {
        Image grown = mask;
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
                if (mask.at(x, y, 0) == 0.0) continue;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx >= 0 && nx < mask.width && ny >= 0 && ny < mask.height)
                            grown.at(nx, ny, 0) = 1.0;
                    }
            }
        mask = grown;
    }
    return mask;
}

}  // namespace

void generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    const fs::path d(out_dir);
    std::error_code ec;
    fs::create_directories(d / "frames", ec);
    fs::create_directories(d / "masks", ec);
    fs::create_directories(d / "mesh", ec);
    if (!fs::is_directory(d / "frames"))
        throw LoadError("cannot create output directory: " + out_dir);

    std::mt19937_64 rng(cfg.seed);
    const MorphableMesh mesh = make_icosphere_head(
        cfg.icosphere_subdivision, cfg.expression_count, cfg.head_radius, rng());
    save_mesh(mesh, (d / "mesh").string());

    // Reference world: one splat per mesh vertex plus a static backdrop
    // plane and floor, all well outside the near-mesh gate.
    const ColorField color_field(rng);
    std::vector<Vec3> positions(mesh.vertices_can);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < cfg.background_points; ++i) {
        Vec3 p;
        if (u01(rng) < 0.6)
            p = Vec3(-4.0 + 8.0 * u01(rng), -1.6 + 4.2 * u01(rng),
                     -2.5 - 0.05 * u01(rng));
        else
            p = Vec3(-3.0 + 6.0 * u01(rng), -1.6 - 0.05 * u01(rng),
                     -2.5 + 3.3 * u01(rng));
        positions.push_back(p);
    }
    const size_t n = positions.size();
    std::vector<Vec3> colors(n);
    for (size_t i = 0; i < n; ++i) colors[i] = color_field.at(positions[i]);

    // Splat size from local density (log mean distance to 3 neighbors),
    // with mild seeded anisotropy so orientation is visible.
    KdTree point_tree(positions);
    std::vector<Vec3> log_scales(n);
    std::uniform_real_distribution<double> aniso(-0.3, 0.3);
    for (size_t i = 0; i < n; ++i) {
        const auto nn = point_tree.knn(positions[i], 4);
        const double mean_d =
            (nn.distances[1] + nn.distances[2] + nn.distances[3]) / 3.0;
        const double base = std::log(std::max(mean_d, 1e-6));
        log_scales[i] = Vec3(base + aniso(rng), base + aniso(rng), base + aniso(rng));
    }
    const double ref_opacity = 0.9;

    // Camera table: frontal orbit arc for training, offset angles held out
    // for Setting 2.
    std::uniform_real_distribution<double> ur(cfg.orbit_radius_min,
                                              cfg.orbit_radius_max);
    std::uniform_real_distribution<double> uh(cfg.orbit_height_min,
                                              cfg.orbit_height_max);
    // A frontal arc keeps every camera clear of the backdrop and floor.
    const double arc = 80.0 * M_PI / 180.0;
    std::vector<Camera> cameras;
    for (int j = 0; j < cfg.train_cameras; ++j) {
        const double a = -arc / 2 + arc * (j + 0.25) / cfg.train_cameras;
        cameras.push_back(make_orbit_camera(a, ur(rng), uh(rng), cfg.width,
                                            cfg.height));
    }
    for (int j = 0; j < cfg.setting2_cameras; ++j) {
        const double a = -arc / 2 + arc * (j + 0.75) / cfg.setting2_cameras;
        cameras.push_back(make_orbit_camera(a, ur(rng), uh(rng), cfg.width,
                                            cfg.height));
    }

    const int total_frames =
        cfg.train_frames + cfg.setting1_frames + cfg.setting2_frames;
    GammaWalk walk(total_frames, cfg.expression_count, rng);
    const int pose_src = std::min(10, cfg.train_frames - 1);

    // Ground-truth deformation reuses the production binding machinery so
    // the stored frames are exactly reachable from a zero-initialized
    // field: mesh splats sit on vertices (one-hot weights), background
    // splats are outside the gate and stay put.
    DeformationConfig dcfg;
    const double far_threshold = dcfg.d_factor * mesh.bounding_radius();
    KdTree vertex_tree(mesh.vertices_can);
    const auto bindings = bind_points(positions, vertex_tree, dcfg, far_threshold);

    json manifest;
    manifest["version"] = 1;
    manifest["expression_dim"] = cfg.expression_count;
    manifest["mesh_dir"] = "mesh";
    manifest["train_frame_count"] = cfg.train_frames;
    manifest["setting1_camera_index"] = 0;
    manifest["setting2_pose_frame"] = pose_src;
    manifest["splits"] = {{"train", cfg.train_frames},
                          {"setting1", cfg.setting1_frames},
                          {"setting2", cfg.setting2_frames}};
    for (const auto& c : cameras) manifest["cameras"].push_back(camera_to_json(c));

    {
        // Init points cover only the background; the trainer seeds the head
        // region from the mesh vertices itself.
        const size_t v = mesh.vertex_count();
        std::vector<float> buf;
        buf.reserve((n - v) * 6);
        for (size_t i = v; i < n; ++i) {
            for (int k = 0; k < 3; ++k) buf.push_back(float(positions[i][k]));
            for (int k = 0; k < 3; ++k) buf.push_back(float(colors[i][k]));
        }
        std::ofstream f(d / "points.f32", std::ios::binary);
        f.write(reinterpret_cast<const char*>(buf.data()),
                std::streamsize(buf.size() * sizeof(float)));
        if (!f) throw LoadError("cannot write: " + (d / "points.f32").string());
        manifest["init_points"] = {{"file", "points.f32"}, {"count", n - v}};
    }

    manifest["frames"] = json::array();
    for (int f = 0; f < total_frames; ++f) {
        std::string split = "train";
        int camera_index = f % cfg.train_cameras;
        std::vector<double> gamma_exp = walk.exp[f];
        std::array<double, 4> gamma_pose = walk.pose[f];
        if (f >= cfg.train_frames + cfg.setting1_frames) {
            split = "setting2";
            gamma_pose = walk.pose[pose_src];
            camera_index = cfg.train_cameras +
                           (f - cfg.train_frames - cfg.setting1_frames) %
                               cfg.setting2_cameras;
        } else if (f >= cfg.train_frames) {
            split = "setting1";
            camera_index = 0;
        }
        if (f == 0) {  // canonical anchor
            std::fill(gamma_exp.begin(), gamma_exp.end(), 0.0);
            gamma_pose = {0, 0, 0, 0};
        }

        const auto verts = evaluate_mesh(mesh, gamma_exp, gamma_pose);
        const auto fbd = frame_binding_data(bindings, mesh, verts, far_threshold);
        const int k = dcfg.k;
        std::vector<ProjectedSplat> splats;
        const Camera& cam = cameras[camera_index];
        for (size_t i = 0; i < n; ++i) {
            Vec3 offset = Vec3::Zero();
            for (int j = 0; j < k; ++j)
                offset += fbd.mu.v[i * k + j] *
                          Vec3(fbd.deltas.v[i * 3 * k + 3 * j],
                               fbd.deltas.v[i * 3 * k + 3 * j + 1],
                               fbd.deltas.v[i * 3 * k + 3 * j + 2]);
            const Vec4 q(fbd.q_mesh.v[4 * i], fbd.q_mesh.v[4 * i + 1],
                         fbd.q_mesh.v[4 * i + 2], fbd.q_mesh.v[4 * i + 3]);
            auto splat = project(positions[i] + offset,
                                 covariance_from_params(q, log_scales[i]), cam);
            if (!splat) continue;
            splat->color = colors[i];
            splat->opacity = ref_opacity;
            splat->source_index = int(i);
            splats.push_back(*splat);
        }
        const Image image = render_reference(splats, cam).image;
        const std::string stem = frame_stem(f);
        save_f32(image, (d / "frames" / (stem + ".f32")).string());
        save_png(image, (d / "frames" / (stem + ".png")).string());
        save_png(render_mask(mesh, verts, cam),
                 (d / "masks" / (stem + ".png")).string());

        json params;
        params["exp"] = gamma_exp;
        params["pose"] = {gamma_pose[0], gamma_pose[1], gamma_pose[2],
                          gamma_pose[3]};
        params["camera_index"] = camera_index;
        std::ofstream pf(d / "frames" / (stem + ".params.json"));
        pf << params.dump(2) << "\n";

        manifest["frames"].push_back({{"index", f}, {"split", split}});
    }

    std::ofstream mf(d / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw LoadError("cannot write: " + (d / "manifest.json").string());
}

}  // namespace gsrig
