#pragma once

#include <optional>
#include <vector>

#include "gsrig/image.hpp"
#include "gsrig/tape.hpp"
#include "gsrig/types.hpp"

namespace gsrig {

// Fixed splatting constants (conventional 3DGS values).
constexpr double kCovDilation = 0.3;     // added to cov2d diagonal
constexpr double kAlphaCap = 0.99;
constexpr double kAlphaSkip = 1.0 / 255.0;
constexpr double kTransmittanceStop = 1e-4;
constexpr int kTileSize = 16;
// A splat's footprint is the 3-sigma ellipse d^T cov2d^-1 d <= 9; both
// renderers apply it identically so they agree to float precision.
constexpr double kSupportMahalanobis2 = 9.0;

struct ProjectedSplat {
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();  // pixels
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
    double depth = 0;  // camera-space z
    Vec3 color = Vec3::Zero();
    double opacity = 0;  // in (0,1)
    int source_index = 0;
};

// Returns nullopt when the point is culled by the near plane.
std::optional<ProjectedSplat> project(const Vec3& position, const Mat3& cov3d,
                                      const Camera& camera);

struct RenderOutput {
    Image image;          // H x W x 3
    Image transmittance;  // H x W x 1, final T per pixel
};

// Saved forward state consumed by render_backward.
struct RenderForwardState {
    Camera camera;
    std::vector<ProjectedSplat> splats;
    std::vector<std::vector<int>> tile_lists;  // sorted indices per tile
    int tiles_x = 0, tiles_y = 0;
    bool valid = false;
};

// Tiled forward: per-tile binning, front-to-back depth sort (ties by
// source_index), capped alpha blending against a black background.
RenderOutput render(const std::vector<ProjectedSplat>& splats,
                    const Camera& camera, RenderForwardState* save = nullptr);

// Oracle: per-pixel global sort over all splats, no tiling, same blending.
RenderOutput render_reference(const std::vector<ProjectedSplat>& splats,
                              const Camera& camera);

struct SplatGrads {
    std::vector<Eigen::Vector2d> mean2d;
    std::vector<Eigen::Matrix2d> cov2d;
    std::vector<Vec3> color;
    std::vector<double> opacity;
};

SplatGrads render_backward(const Image& output_grad,
                           const RenderForwardState& state);

// --- world-space differentiable entry point -------------------------------

// Per-gaussian side channel filled by the backward pass; feeds the
// densification statistics.
struct RasterStats {
    std::vector<double> grad_mean2d_norm;  // ||dL/dmean2d|| per gaussian
    std::vector<uint8_t> visible;          // projected and not culled
};

// Registers the rasterizer as a custom-gradient op. positions (N,3),
// quats (N,4) raw, log_scales (N,3), opacities (N,1) in (0,1),
// colors (N,3); returns the rendered image as an (H*W, 3) tensor.
// Gradients flow to all five inputs. stats may be null.
ad::Tape::Id raster_op(ad::Tape& tape, ad::Tape::Id positions,
                       ad::Tape::Id quats, ad::Tape::Id log_scales,
                       ad::Tape::Id opacities, ad::Tape::Id colors,
                       const Camera& camera, RasterStats* stats = nullptr);

Image tensor_to_image(const ad::Tensor& t, int width, int height);

}  // namespace gsrig
