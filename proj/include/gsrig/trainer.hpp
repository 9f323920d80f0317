#pragma once

#include <random>
#include <string>
#include <vector>

#include "gsrig/dataset.hpp"
#include "gsrig/field.hpp"
#include "gsrig/kdtree.hpp"
#include "gsrig/losses.hpp"
#include "gsrig/optim.hpp"
#include "gsrig/raster.hpp"

namespace gsrig {

struct TrainConfig {
    int iterations = 5000;
    int densify_until = 1250;
    int densify_interval = 100;
    double densify_grad_threshold = 2e-4;
    double prune_opacity_threshold = 5e-3;
    double split_scale_fraction = 0.01;  // of scene extent
    uint64_t seed = 1;
    PriorMode prior_mode = PriorMode::Learnable;
    int log_every = 50;

    // Per-group learning rates (positions and the field decay
    // geometrically, the rest stay constant).
    ad::LrSchedule lr_positions{7e-4, 8e-6, 20000};
    ad::LrSchedule lr_field{5e-4, 1e-5, 40000};
    double lr_rotations = 1e-3;
    double lr_log_scales = 5e-3;
    double lr_opacity = 5e-2;
    double lr_colors = 2.5e-3;
};

// Whole optimization state. Cloud parameters live as flat tensors so they
// plug straight into the tape and Adam; source tags ride alongside.
struct TrainerState {
    TrainConfig config;
    ad::Tensor positions;       // (N,3)
    ad::Tensor rotations;       // (N,4) unit quaternions
    ad::Tensor log_scales;      // (N,3)
    ad::Tensor opacity_logits;  // (N,1)
    ad::Tensor colors;          // (N,3)
    std::vector<SourceTag> source_tags;

    DeformationField field;
    MorphableMesh mesh;
    KdTree vertex_tree;
    std::vector<GaussianBinding> bindings;
    std::vector<GaussianBinding> vertex_bindings;  // for the mesh-match loss
    std::vector<int> far_indices;

    ad::Adam adam;
    std::mt19937_64 rng;
    int iteration = 0;
    double scene_extent = 1;
    std::vector<int> train_frames;  // dataset frame indices

    // Mean 2D position-gradient magnitude since the last densification.
    std::vector<double> grad2d_accum;
    std::vector<int> grad2d_count;

    size_t gaussian_count() const { return size_t(positions.rows); }
    GaussianCloud cloud() const;
};

struct StepResult {
    LossBreakdown breakdown;
    int frame_index = 0;
};

struct DensifyResult {
    int cloned = 0, split = 0, pruned = 0;
};

TrainerState init_trainer(const Dataset& dataset, const TrainConfig& config);

// One forward/backward/update on a uniformly sampled training frame.
StepResult train_step(TrainerState& state, const Dataset& dataset);

// As train_step but on a caller-chosen frame, without advancing the RNG.
StepResult train_step_on_frame(TrainerState& state, const Dataset& dataset,
                               int frame_index);

DensifyResult densify_and_prune(TrainerState& state);

// Full loop: steps, periodic densification, JSON-line log (one line every
// log_every iterations) appended to log_stream when non-null.
void train(TrainerState& state, const Dataset& dataset,
           std::ostream* log_stream);

// Renders the current model for arbitrary drive parameters with T = 0.
// frame_row >= 0 selects a learned per-frame code instead (training replay).
Image render_model(TrainerState& state, const std::vector<double>& gamma_exp,
                   const std::array<double, 4>& gamma_pose,
                   const Camera& camera, int frame_row = -1);

// Checkpoint directory: manifest.json (version, config, tensor table) plus
// raw little-endian f32 blobs. Parameters are quantized to f32 in memory
// on save so save -> load -> render is bitwise.
void save_checkpoint(TrainerState& state, const std::string& dir,
                     uint64_t dataset_fingerprint);
TrainerState load_checkpoint(const std::string& dir, const Dataset& dataset);

struct DriveEntry {
    std::vector<double> gamma_exp;
    std::array<double, 4> gamma_pose{};
    Camera camera;
};
std::vector<Image> reanimate(TrainerState& state,
                             const std::vector<DriveEntry>& drive);

}  // namespace gsrig
