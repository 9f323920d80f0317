#pragma once

#include <string>

#include "gsrig/types.hpp"

namespace gsrig {

struct SynthConfig {
    uint64_t seed = 7;
    int icosphere_subdivision = 3;  // V = 10 * 4^s + 2
    int expression_count = 8;
    int background_points = 1000;  // backdrop plane + floor
    int width = 64;
    int height = 64;
    int train_frames = 200;
    int setting1_frames = 20;  // fixed camera, varied gamma
    int setting2_frames = 20;  // fixed pose, varied camera
    int train_cameras = 6;
    int setting2_cameras = 5;
    double orbit_radius_min = 2.8;
    double orbit_radius_max = 3.4;
    double orbit_height_min = -0.3;
    double orbit_height_max = 0.8;
    double head_radius = 1.0;
};

// Builds the reference world, animates it with smooth random-walk gamma
// sequences and writes a complete dataset directory (mesh, cameras,
// ground-truth frames rendered by the reference renderer, silhouette
// masks, init points). Deterministic under seed.
void generate_dataset(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace gsrig
