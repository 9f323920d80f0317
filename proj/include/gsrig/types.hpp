#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsrig {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Error types. load errors name the offending file; shape/argument errors
// describe the mismatch.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Quaternion convention: (w, x, y, z), stored unit-norm.
Mat3 quat_to_matrix(const Vec4& q);
Vec4 matrix_to_quat(const Mat3& r);
Vec4 quat_multiply(const Vec4& a, const Vec4& b);
Vec4 quat_normalized(const Vec4& q);

enum class SourceTag : uint8_t { MeshSeeded = 0, Background = 1, Densified = 2 };

// Canonical-space splats. Opacity lives as a logit, scales as logs and
// orientation as unit quaternions so unconstrained gradient steps keep
// every field valid.
struct GaussianCloud {
    std::vector<Vec3> positions;       // x_can
    std::vector<Vec4> rotations;       // R_can, unit quaternions
    std::vector<Vec3> log_scales;      // S_can = exp(log_scales)
    std::vector<double> opacity_logits;
    std::vector<Vec3> colors;          // linear RGB
    std::vector<SourceTag> source_tags;

    size_t size() const { return positions.size(); }
    void check_consistent() const;
};

struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat4 world_to_camera = Mat4::Identity();
    double near_clip = 0.01;

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
};

// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scale);

}  // namespace gsrig
