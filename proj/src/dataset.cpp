#include "gsrig/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace gsrig {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> Dataset::split_indices(const std::string& split) const {
    std::vector<int> idx;
    for (size_t i = 0; i < frames.size(); ++i)
        if (frames[i].split == split) idx.push_back(int(i));
    return idx;
}

namespace {

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw LoadError("cannot open: " + p.string());
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw LoadError("corrupt JSON in " + p.string() + ": " + e.what());
    }
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.width = j.at("width");
    c.height = j.at("height");
    c.near_clip = j.value("near_clip", 0.01);
    const auto& m = j.at("world_to_camera");
    if (m.size() != 16) throw SchemaError("camera: world_to_camera needs 16 values");
    for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) c.world_to_camera(r, col) = m[4 * r + col];
    return c;
}

std::string frame_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

}  // namespace

Camera camera_from_json_array(const std::vector<double>& v) {
    json j;
    j["fx"] = v.at(0);
    j["fy"] = v.at(1);
    j["cx"] = v.at(2);
    j["cy"] = v.at(3);
    j["width"] = int(v.at(4));
    j["height"] = int(v.at(5));
    j["world_to_camera"] = std::vector<double>(v.begin() + 6, v.begin() + 22);
    return camera_from_json(j);
}

Dataset load_dataset(const std::string& dir) {
    const fs::path d(dir);
    const fs::path manifest_path = d / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw LoadError("cannot open: " + manifest_path.string());
    std::string manifest_bytes((std::istreambuf_iterator<char>(mf)),
                               std::istreambuf_iterator<char>());
    json m;
    try {
        m = json::parse(manifest_bytes);
    } catch (const json::exception& e) {
        throw LoadError("corrupt JSON in " + manifest_path.string() + ": " +
                        e.what());
    }

    Dataset ds;
    ds.fingerprint = fnv1a(manifest_bytes);
    ds.expression_dim = m.at("expression_dim");
    ds.mesh = load_mesh((d / std::string(m.value("mesh_dir", "mesh"))).string());
    if (int(ds.mesh.expression_count()) != ds.expression_dim)
        throw SchemaError("dataset: expression_dim disagrees with mesh blendshapes");

    for (const auto& cj : m.at("cameras"))
        ds.cameras.push_back(camera_from_json(cj));

    const auto& pts = m.at("init_points");
    const size_t n_points = pts.at("count");
    {
        const fs::path pf = d / std::string(pts.at("file"));
        std::ifstream f(pf, std::ios::binary);
        if (!f) throw LoadError("cannot open: " + pf.string());
        std::vector<float> buf(n_points * 6);
        f.read(reinterpret_cast<char*>(buf.data()),
               std::streamsize(buf.size() * sizeof(float)));
        if (!f) throw LoadError("truncated point file: " + pf.string());
        for (size_t i = 0; i < n_points; ++i) {
            ds.init_points.emplace_back(buf[6 * i], buf[6 * i + 1], buf[6 * i + 2]);
            ds.init_colors.emplace_back(buf[6 * i + 3], buf[6 * i + 4],
                                        buf[6 * i + 5]);
        }
    }

    const auto& frames = m.at("frames");
    if (frames.empty()) throw LoadError("no frames");
    for (const auto& fj : frames) {
        FrameRecord fr;
        fr.frame_index = fj.at("index");
        fr.split = fj.at("split");
        const std::string stem = frame_stem(fr.frame_index);

        const json params = read_json(d / "frames" / (stem + ".params.json"));
        fr.gamma_exp = params.at("exp").get<std::vector<double>>();
        if (int(fr.gamma_exp.size()) != ds.expression_dim)
            throw SchemaError("frame " + stem +
                              ": exp dimension disagrees with expression_dim");
        const auto& pose = params.at("pose");
        if (pose.size() != 4) throw SchemaError("frame " + stem + ": pose needs 4 values");
        for (int i = 0; i < 4; ++i) fr.gamma_pose[i] = pose[i];
        fr.camera_index = params.at("camera_index");
        if (fr.camera_index < 0 || fr.camera_index >= int(ds.cameras.size()))
            throw SchemaError("frame " + stem + ": camera index out of range");
        fr.camera = ds.cameras[fr.camera_index];

        const fs::path f32_path = d / "frames" / (stem + ".f32");
        if (fs::exists(f32_path))
            fr.image = load_f32(f32_path.string());
        else
            fr.image = load_png((d / "frames" / (stem + ".png")).string());

        const fs::path mask_path = d / "masks" / (stem + ".png");
        if (fs::exists(mask_path)) fr.mask = load_png(mask_path.string());

        ds.frames.push_back(std::move(fr));
    }
    return ds;
}

}  // namespace gsrig
