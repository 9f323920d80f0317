#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "gsrig/kdtree.hpp"
#include "gsrig/mesh.hpp"
#include "gsrig/tape.hpp"
#include "gsrig/types.hpp"

namespace gsrig {

enum class PriorMode { Learnable, Fixed, None };

PriorMode prior_mode_from_string(const std::string& s);
std::string to_string(PriorMode m);

struct DeformationConfig {
    int k = 10;                    // nearest mesh vertices
    double d_factor = 0.15;        // D = d_factor * mesh bounding radius
    int pe_freqs_pos = 10;
    int pe_freqs_def = 4;
    int triplane_resolution = 64;
    int triplane_channels = 16;
    int mlp_hidden = 64;
    double softplus_beta = 10.0;
    PriorMode prior_mode = PriorMode::Learnable;
};

struct Mlp {
    std::vector<ad::Tensor> weights;  // (in, out) row-major
    std::vector<ad::Tensor> biases;   // (1, out)
};

// All learnable deformation parameters plus the normalization frame they
// were built against. Output layers start at zero so the freshly
// initialized field is the identity everywhere (eta = 0, T = 0, R* = I,
// S* = 1) and w equals the masked inverse-distance prior.
struct DeformationField {
    DeformationConfig config;
    double far_threshold = 0;  // D, world units
    Vec3 scene_center = Vec3::Zero();
    double scene_radius = 1;
    int expression_dim = 0;
    int train_frame_count = 0;

    std::array<ad::Tensor, 3> triplane;  // (res*res, ch) each
    Mlp f_head;   // 2 layers, 3*ch -> K
    Mlp g_mlp;    // 2 layers -> corrective translation eta
    ad::Tensor t_codes;  // (train_frames, 16)
    Mlp t_mlp;    // 2 layers, 16 -> 3
    Mlp r_star;   // 4 layers -> axis-angle
    Mlp s_star;   // 4 layers -> raw log scale factors

    int g_input_dim() const;
    void for_each_tensor(const std::function<void(const std::string&, ad::Tensor&)>& fn);
};

DeformationField init_field(const DeformationConfig& cfg, const MorphableMesh& mesh,
                            const std::vector<Vec3>& init_points,
                            int expression_dim, int train_frame_count,
                            uint64_t seed);

// Fixed per-gaussian mesh attachment: canonical-space KNN, inverse-distance
// weights (exact hits collapse to one-hot) and the near-mesh gate.
// Recomputed only when densification adds points.
struct GaussianBinding {
    std::vector<int> knn_indices;
    std::vector<double> knn_distances;
    std::vector<double> u;  // inverse-distance weights, sum 1
    double mesh_distance = 0;
    bool near_mesh = false;
};

GaussianBinding bind_point(const Vec3& position, const KdTree& tree,
                           const DeformationConfig& cfg, double far_threshold);
std::vector<GaussianBinding> bind_points(const std::vector<Vec3>& positions,
                                         const KdTree& tree,
                                         const DeformationConfig& cfg,
                                         double far_threshold);

// Per-frame mesh-derived constants for a bound point set: stacked neighbor
// deformations, their inverse-distance average, and the Kabsch rotation of
// the neighborhood (identity outside the near gate). None of these carry
// gradients.
struct FrameBindingData {
    ad::Tensor deltas;       // (N, 3K)
    ad::Tensor dwavg;        // (N, 3)
    ad::Tensor mu;           // (N, K) mask * u
    ad::Tensor q_mesh;       // (N, 4) unit quaternions, identity when far
    ad::Tensor fixed_prior;  // (N, 3) distance-decayed dwavg (fixed mode)
    int degenerate_kabsch = 0;
};

FrameBindingData frame_binding_data(const std::vector<GaussianBinding>& bindings,
                                    const MorphableMesh& mesh,
                                    const std::vector<Vec3>& deformed_vertices,
                                    double far_threshold);

// Tape ids for every field tensor, re-registered each step.
struct FieldIds {
    std::array<ad::Tape::Id, 3> triplane;
    std::vector<ad::Tape::Id> f_head_w, f_head_b;
    std::vector<ad::Tape::Id> g_w, g_b;
    ad::Tape::Id t_codes;
    std::vector<ad::Tape::Id> t_w, t_b;
    std::vector<ad::Tape::Id> r_w, r_b;
    std::vector<ad::Tape::Id> s_w, s_b;
};
FieldIds register_field(ad::Tape& tape, DeformationField& field);

struct DeformOutputs {
    ad::Tape::Id weights = -1;   // (N,K), learnable mode only
    ad::Tape::Id deform = -1;    // (N,3) full Def including eta and T
    ad::Tape::Id x_def = -1;     // (N,3)
    ad::Tape::Id eta = -1;       // (N,3)
    ad::Tape::Id t_vec = -1;     // (1,3), zero at inference
    ad::Tape::Id q_prime = -1;   // (N,4) R' = R_mesh * R*
    ad::Tape::Id q_def = -1;     // (N,4)
    ad::Tape::Id s_raw = -1;     // (N,3), S* = exp(s_raw)
    ad::Tape::Id log_scale_def = -1;  // (N,3)
};

// Full canonical -> deformed transform for a batch of points.
// positions/quats/log_scales are tape nodes (params or constants);
// train_frame_row < 0 renders with T = 0 (reanimation).
DeformOutputs deform_forward(ad::Tape& tape, const DeformationField& field,
                             const FieldIds& ids, ad::Tape::Id positions,
                             ad::Tape::Id quats, ad::Tape::Id log_scales,
                             const FrameBindingData& fbd,
                             const std::vector<double>& gamma_exp,
                             const std::array<double, 4>& gamma_pose,
                             int train_frame_row);

}  // namespace gsrig
