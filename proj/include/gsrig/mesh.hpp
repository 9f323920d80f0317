#pragma once

#include <array>
#include <string>
#include <vector>

#include "gsrig/types.hpp"

namespace gsrig {

// Morphable head stand-in: linear expression blendshapes on a canonical
// mesh, a rigid head rotation about a neck pivot and a jaw region rotated
// by a per-vertex-weighted angle.
struct MorphableMesh {
    std::vector<Vec3> vertices_can;            // V x 3
    std::vector<std::array<uint32_t, 3>> faces;
    std::vector<std::vector<Vec3>> blendshapes;  // E x V x 3
    Vec3 head_pivot = Vec3::Zero();
    Vec3 jaw_pivot = Vec3::Zero();
    std::vector<double> jaw_weights;           // V, in [0,1]

    size_t vertex_count() const { return vertices_can.size(); }
    size_t expression_count() const { return blendshapes.size(); }
    void check_consistent() const;

    // Bounding-sphere radius about the vertex centroid, used to derive
    // the far-field threshold D.
    double bounding_radius() const;
};

struct VertexDeformation {
    std::vector<Vec3> delta_v;  // v(gamma) - v_can
};

// gamma_pose = (head rx, ry, rz axis-angle, jaw angle), radians.
std::vector<Vec3> evaluate_mesh(const MorphableMesh& mesh,
                                const std::vector<double>& gamma_exp,
                                const std::array<double, 4>& gamma_pose);

VertexDeformation vertex_deformations(const MorphableMesh& mesh,
                                      const std::vector<double>& gamma_exp,
                                      const std::array<double, 4>& gamma_pose);

// Inverse-distance-weighted average, eps = 1e-8. An exactly zero distance
// short-circuits to that delta.
Vec3 dwavg(const std::vector<Vec3>& deltas, const std::vector<double>& distances);

// Optimal proper rotation aligning source onto target in the least-squares
// sense (centroids removed). Rank-deficient cross-covariance yields the
// identity with degenerate=true.
struct KabschResult {
    Mat3 rotation = Mat3::Identity();
    bool degenerate = false;
};
KabschResult kabsch(const std::vector<Vec3>& source,
                    const std::vector<Vec3>& target);

// Subdivided icosphere with procedural radial-bump blendshapes; the
// default subdivision 3 gives V = 642.
MorphableMesh make_icosphere_head(int subdivision, int expression_count,
                                  double radius, uint64_t seed);

// Mesh directory format: manifest.json plus little-endian f32/u32 blobs.
void save_mesh(const MorphableMesh& mesh, const std::string& dir);
MorphableMesh load_mesh(const std::string& dir);

Mat3 axis_angle_to_matrix(const Vec3& axis_angle);

}  // namespace gsrig
