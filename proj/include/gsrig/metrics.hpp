#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsrig/dataset.hpp"
#include "gsrig/image.hpp"
#include "gsrig/trainer.hpp"

namespace gsrig {

// 10 * log10(1 / MSE) on [0,1] images, capped at 100 dB. The mask, when
// given, is a 1-channel image selecting pixels (> 0.5 = included).
double psnr(const Image& pred, const Image& gt, const Image* mask = nullptr);

// Plain SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// valid windows, averaged over channels.
double ssim(const Image& pred, const Image& gt);

struct FrameMetrics {
    int frame_index = 0;
    double psnr_full = 0, ssim_full = 0;
    double psnr_masked = 0;  // NaN when the frame has no mask
};

struct EvalReport {
    std::string split;
    std::string prior_mode;
    std::vector<FrameMetrics> frames;
    double mean_psnr_full = 0, mean_ssim_full = 0, mean_psnr_masked = 0;
    // Reserved so external tooling can merge perceptual metrics later.
    std::optional<double> mean_lpips, mean_dists;

    std::string to_json() const;
};

// Renders every frame of the split through the model (T = 0) and scores it
// against the stored ground truth.
EvalReport evaluate(TrainerState& state, const Dataset& dataset,
                    const std::string& split);

struct AblationReport {
    std::vector<EvalReport> reports;  // learnable, fixed, none
    std::vector<std::string> failures;

    std::string to_json() const;
};

// Trains one model per prior mode with identical seed and config and
// evaluates each on the Setting-1 held-out frames. A training abort is
// recorded in failures and the remaining modes still run.
AblationReport ablation_run(const Dataset& dataset, const TrainConfig& config,
                            const std::string& split = "setting1");

}  // namespace gsrig
