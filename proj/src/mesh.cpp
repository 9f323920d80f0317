#include "gsrig/mesh.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

namespace gsrig {

namespace fs = std::filesystem;
using nlohmann::json;

void MorphableMesh::check_consistent() const {
    const size_t v = vertices_can.size();
    if (v < 4) throw SchemaError("mesh: V must be >= 4");
    for (const auto& f : faces)
        for (uint32_t i : f)
            if (i >= v) throw SchemaError("mesh: face index out of range");
    for (const auto& bs : blendshapes)
        if (bs.size() != v) throw SchemaError("mesh: blendshape size != V");
    if (jaw_weights.size() != v) throw SchemaError("mesh: jaw_weights size != V");
}

double MorphableMesh::bounding_radius() const {
    Vec3 centroid = Vec3::Zero();
    for (const auto& v : vertices_can) centroid += v;
    centroid /= double(vertices_can.size());
    double r = 0;
    for (const auto& v : vertices_can) r = std::max(r, (v - centroid).norm());
    return r;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
    const double theta = aa.norm();
    if (theta < 1e-12) return Mat3::Identity();
    return Eigen::AngleAxisd(theta, aa / theta).toRotationMatrix();
}

std::vector<Vec3> evaluate_mesh(const MorphableMesh& mesh,
                                const std::vector<double>& gamma_exp,
                                const std::array<double, 4>& gamma_pose) {
    if (gamma_exp.size() != mesh.expression_count())
        throw ShapeError("evaluate_mesh: gamma_exp length != blendshape count");
    const size_t v_count = mesh.vertex_count();

    std::vector<Vec3> v(mesh.vertices_can);
    for (size_t e = 0; e < gamma_exp.size(); ++e) {
        if (gamma_exp[e] == 0.0) continue;
        for (size_t i = 0; i < v_count; ++i)
            v[i] += gamma_exp[e] * mesh.blendshapes[e][i];
    }

    const double jaw_angle = gamma_pose[3];
    if (jaw_angle != 0.0) {
        // Jaw opens about the x axis through the jaw pivot, blended by the
        // per-vertex weight.
        for (size_t i = 0; i < v_count; ++i) {
            const double w = mesh.jaw_weights[i];
            if (w == 0.0) continue;
            const Mat3 r = axis_angle_to_matrix(Vec3(jaw_angle * w, 0, 0));
            v[i] = mesh.jaw_pivot + r * (v[i] - mesh.jaw_pivot);
        }
    }

    const Vec3 head_aa(gamma_pose[0], gamma_pose[1], gamma_pose[2]);
    if (head_aa.squaredNorm() > 0.0) {
        const Mat3 r = axis_angle_to_matrix(head_aa);
        for (auto& p : v) p = mesh.head_pivot + r * (p - mesh.head_pivot);
    }
    return v;
}

VertexDeformation vertex_deformations(const MorphableMesh& mesh,
                                      const std::vector<double>& gamma_exp,
                                      const std::array<double, 4>& gamma_pose) {
    std::vector<Vec3> v = evaluate_mesh(mesh, gamma_exp, gamma_pose);
    VertexDeformation d;
    d.delta_v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i)
        d.delta_v[i] = v[i] - mesh.vertices_can[i];
    return d;
}

Vec3 dwavg(const std::vector<Vec3>& deltas, const std::vector<double>& distances) {
    if (deltas.size() != distances.size())
        throw ShapeError("dwavg: deltas/distances length mismatch");
    constexpr double kEps = 1e-8;
    for (size_t i = 0; i < distances.size(); ++i)
        if (distances[i] == 0.0) return deltas[i];
    Vec3 num = Vec3::Zero();
    double den = 0;
    for (size_t i = 0; i < deltas.size(); ++i) {
        const double w = 1.0 / (distances[i] + kEps);
        num += w * deltas[i];
        den += w;
    }
    return num / den;
}

KabschResult kabsch(const std::vector<Vec3>& source,
                    const std::vector<Vec3>& target) {
    if (source.size() != target.size() || source.size() < 3)
        throw ArgumentError("kabsch: needs >= 3 corresponded points");
    Vec3 sc = Vec3::Zero(), tc = Vec3::Zero();
    for (size_t i = 0; i < source.size(); ++i) {
        sc += source[i];
        tc += target[i];
    }
    sc /= double(source.size());
    tc /= double(source.size());

    Mat3 h = Mat3::Zero();
    for (size_t i = 0; i < source.size(); ++i)
        h += (source[i] - sc) * (target[i] - tc).transpose();

    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();

    KabschResult res;
    if (sv[1] <= 1e-12 + 1e-9 * sv[0]) {
        res.degenerate = true;  // rank < 2, rotation ill-determined
        return res;
    }
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1 : 1;
    res.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    return res;
}

namespace {

struct IcoBuilder {
    std::vector<Vec3> verts;
    std::vector<std::array<uint32_t, 3>> faces;
    std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint_cache;

    uint32_t midpoint(uint32_t a, uint32_t b) {
        auto key = std::minmax(a, b);
        auto it = midpoint_cache.find(key);
        if (it != midpoint_cache.end()) return it->second;
        Vec3 m = (verts[a] + verts[b]).normalized();
        verts.push_back(m);
        uint32_t idx = uint32_t(verts.size() - 1);
        midpoint_cache.emplace(key, idx);
        return idx;
    }

    void subdivide() {
        std::vector<std::array<uint32_t, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            uint32_t a = midpoint(f[0], f[1]);
            uint32_t b = midpoint(f[1], f[2]);
            uint32_t c = midpoint(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        faces = std::move(next);
    }
};

}  // namespace

MorphableMesh make_icosphere_head(int subdivision, int expression_count,
                                  double radius, uint64_t seed) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    IcoBuilder b;
    b.verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
               {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
               {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : b.verts) v.normalize();
    b.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivision; ++s) b.subdivide();

    MorphableMesh mesh;
    mesh.vertices_can.reserve(b.verts.size());
    for (const auto& v : b.verts) mesh.vertices_can.push_back(radius * v);
    mesh.faces = std::move(b.faces);

    // Radial bump blendshapes centered at seeded directions on the sphere.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double amp = 0.08 * radius;
    const double rho = 0.45 * radius;
    mesh.blendshapes.resize(expression_count);
    for (int e = 0; e < expression_count; ++e) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        dir.normalize();
        const Vec3 center = radius * dir;
        auto& bs = mesh.blendshapes[e];
        bs.resize(mesh.vertices_can.size());
        for (size_t i = 0; i < mesh.vertices_can.size(); ++i) {
            const Vec3& v = mesh.vertices_can[i];
            const double g =
                std::exp(-(v - center).squaredNorm() / (2 * rho * rho));
            bs[i] = amp * g * v.normalized();
        }
    }

    // Jaw region: lower-front vertices, smooth falloff. Front is +z, up +y.
    mesh.head_pivot = Vec3(0, -1.2 * radius, 0);
    mesh.jaw_pivot = Vec3(0, -0.1 * radius, 0.1 * radius);
    mesh.jaw_weights.resize(mesh.vertices_can.size());
    for (size_t i = 0; i < mesh.vertices_can.size(); ++i) {
        const Vec3& v = mesh.vertices_can[i];
        const double down = std::max(0.0, -v.y() / radius - 0.25);
        const double front = std::max(0.0, v.z() / radius);
        mesh.jaw_weights[i] = std::clamp(3.0 * down * front, 0.0, 1.0);
    }
    return mesh;
}

namespace {

template <typename T>
void write_blob(const fs::path& p, const std::vector<T>& data) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw LoadError("cannot open for write: " + p.string());
    f.write(reinterpret_cast<const char*>(data.data()),
            std::streamsize(data.size() * sizeof(T)));
    if (!f) throw LoadError("write failed: " + p.string());
}

template <typename T>
std::vector<T> read_blob(const fs::path& p, size_t count) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw LoadError("cannot open: " + p.string());
    std::vector<T> data(count);
    f.read(reinterpret_cast<char*>(data.data()),
           std::streamsize(count * sizeof(T)));
    if (!f) throw LoadError("truncated blob: " + p.string());
    return data;
}

std::vector<float> flatten_vec3(const std::vector<Vec3>& v) {
    std::vector<float> out;
    out.reserve(v.size() * 3);
    for (const auto& p : v)
        for (int k = 0; k < 3; ++k) out.push_back(float(p[k]));
    return out;
}

std::vector<Vec3> unflatten_vec3(const std::vector<float>& v) {
    std::vector<Vec3> out(v.size() / 3);
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
    return out;
}

}  // namespace

void save_mesh(const MorphableMesh& mesh, const std::string& dir) {
    mesh.check_consistent();
    fs::create_directories(dir);
    const fs::path d(dir);

    write_blob(d / "vertices.f32", flatten_vec3(mesh.vertices_can));
    std::vector<uint32_t> face_idx;
    face_idx.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces)
        for (uint32_t i : f) face_idx.push_back(i);
    write_blob(d / "faces.u32", face_idx);
    std::vector<float> bs_flat;
    for (const auto& bs : mesh.blendshapes) {
        auto one = flatten_vec3(bs);
        bs_flat.insert(bs_flat.end(), one.begin(), one.end());
    }
    write_blob(d / "blendshapes.f32", bs_flat);
    write_blob(d / "jaw_weights.f32",
               std::vector<float>(mesh.jaw_weights.begin(), mesh.jaw_weights.end()));

    json m;
    m["format_version"] = 1;
    m["vertex_count"] = mesh.vertex_count();
    m["face_count"] = mesh.faces.size();
    m["expression_count"] = mesh.expression_count();
    m["head_pivot"] = {mesh.head_pivot[0], mesh.head_pivot[1], mesh.head_pivot[2]};
    m["jaw_pivot"] = {mesh.jaw_pivot[0], mesh.jaw_pivot[1], mesh.jaw_pivot[2]};
    m["files"] = {{"vertices", "vertices.f32"},
                  {"faces", "faces.u32"},
                  {"blendshapes", "blendshapes.f32"},
                  {"jaw_weights", "jaw_weights.f32"}};
    std::ofstream f(d / "manifest.json");
    f << m.dump(2) << "\n";
    if (!f) throw LoadError("write failed: " + (d / "manifest.json").string());
}

MorphableMesh load_mesh(const std::string& dir) {
    const fs::path d(dir);
    std::ifstream f(d / "manifest.json");
    if (!f) throw LoadError("cannot open: " + (d / "manifest.json").string());
    json m;
    try {
        f >> m;
    } catch (const json::exception& e) {
        throw LoadError("corrupt mesh manifest: " + std::string(e.what()));
    }
    const size_t v = m.at("vertex_count");
    const size_t fc = m.at("face_count");
    const size_t e = m.at("expression_count");

    MorphableMesh mesh;
    mesh.vertices_can = unflatten_vec3(
        read_blob<float>(d / std::string(m.at("files").at("vertices")), v * 3));
    auto face_idx =
        read_blob<uint32_t>(d / std::string(m.at("files").at("faces")), fc * 3);
    mesh.faces.resize(fc);
    for (size_t i = 0; i < fc; ++i)
        mesh.faces[i] = {face_idx[3 * i], face_idx[3 * i + 1], face_idx[3 * i + 2]};
    auto bs_flat = read_blob<float>(
        d / std::string(m.at("files").at("blendshapes")), e * v * 3);
    mesh.blendshapes.resize(e);
    for (size_t k = 0; k < e; ++k)
        mesh.blendshapes[k] = unflatten_vec3(std::vector<float>(
            bs_flat.begin() + k * v * 3, bs_flat.begin() + (k + 1) * v * 3));
    auto jw = read_blob<float>(
        d / std::string(m.at("files").at("jaw_weights")), v);
    mesh.jaw_weights.assign(jw.begin(), jw.end());
    for (int k = 0; k < 3; ++k) {
        mesh.head_pivot[k] = m.at("head_pivot")[k];
        mesh.jaw_pivot[k] = m.at("jaw_pivot")[k];
    }
    mesh.check_consistent();
    return mesh;
}

}  // namespace gsrig
