#pragma once

#include <map>
#include <string>
#include <vector>

#include "gsrig/tape.hpp"

namespace gsrig {

struct LossWeights {
    double w_l1 = 0.8;
    double w_dssim = 0.2;
    double lambda_mesh = 1.0;
    double lambda_global_def = 1e-1;
    double lambda_eta = 1e-3;
    double lambda_t = 1e-3;
    double lambda_global_rot = 1e-1;
    double lambda_global_scale = 1.0;
};

// Mean absolute difference over all pixels and channels.
ad::Tape::Id l1_loss(ad::Tape& t, ad::Tape::Id pred, ad::Tape::Id gt);

// (1 - SSIM)/2 with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, valid windows only, channel-averaged.
ad::Tape::Id dssim_loss(ad::Tape& t, ad::Tape::Id pred, ad::Tape::Id gt,
                        int width, int height);

// mean over rows of the squared row norm.
ad::Tape::Id mean_sq_norm_rows(ad::Tape& t, ad::Tape::Id x);

// ||Def - delta_v||^2 averaged over mesh vertices; delta_v is constant.
ad::Tape::Id mesh_match_loss(ad::Tape& t, ad::Tape::Id deform_at_vertices,
                              const ad::Tensor& delta_v);

struct FarFieldLosses {
    ad::Tape::Id global_def = -1;
    ad::Tape::Id global_rot = -1;
    ad::Tape::Id global_scale = -1;
    bool far_set_empty = false;
};

// far_indices selects rows with canonical mesh distance >= D; the scale
// term averages over every point.
FarFieldLosses far_field_losses(ad::Tape& t, ad::Tape::Id deform,
                                ad::Tape::Id q_prime, ad::Tape::Id s_raw,
                                const std::vector<int>& far_indices);

struct SmallTermLosses {
    ad::Tape::Id eta = -1;
    ad::Tape::Id t_frame = -1;
};
SmallTermLosses small_term_losses(ad::Tape& t, ad::Tape::Id eta,
                                  ad::Tape::Id t_vec);

struct LossTerms {
    ad::Tape::Id l1 = -1;
    ad::Tape::Id dssim = -1;
    ad::Tape::Id mesh = -1;
    ad::Tape::Id global_def = -1;
    ad::Tape::Id eta = -1;
    ad::Tape::Id t_frame = -1;
    ad::Tape::Id global_rot = -1;
    ad::Tape::Id global_scale = -1;
};

using LossBreakdown = std::map<std::string, double>;

// Weighted sum; any non-finite term raises TrainingError naming it. Terms
// left at -1 contribute zero (and are logged as 0 in the breakdown).
ad::Tape::Id total_loss(ad::Tape& t, const LossTerms& terms,
                        const LossWeights& w, LossBreakdown* breakdown);

std::vector<double> ssim_window(int size, double sigma);

}  // namespace gsrig
