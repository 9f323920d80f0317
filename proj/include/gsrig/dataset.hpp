#pragma once

#include <array>
#include <string>
#include <vector>

#include "gsrig/image.hpp"
#include "gsrig/mesh.hpp"
#include "gsrig/types.hpp"

namespace gsrig {

struct FrameRecord {
    Image image;  // linear RGB in [0,1]
    Camera camera;
    int camera_index = 0;
    std::vector<double> gamma_exp;
    std::array<double, 4> gamma_pose{};  // head axis-angle + jaw angle
    int frame_index = 0;
    std::string split;  // train | setting1 | setting2
    Image mask;         // head mask, 1 channel; empty if absent
    bool has_mask() const { return mask.width > 0; }
};

struct Dataset {
    std::vector<FrameRecord> frames;
    MorphableMesh mesh;
    std::vector<Vec3> init_points;
    std::vector<Vec3> init_colors;
    std::vector<Camera> cameras;
    int expression_dim = 0;
    uint64_t fingerprint = 0;  // FNV-1a of manifest.json bytes

    std::vector<int> split_indices(const std::string& split) const;
};

// Directory layout: manifest.json, mesh/, points.f32 (N x 6 xyz rgb),
// frames/%05d.{png,f32,params.json}, masks/%05d.png. Float dumps are
// preferred over PNG when present.
Dataset load_dataset(const std::string& dir);

Camera camera_from_json_array(const std::vector<double>& v);

}  // namespace gsrig
