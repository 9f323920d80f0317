#include "gsrig/metrics.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "gsrig/losses.hpp"

namespace gsrig {

using nlohmann::json;

double psnr(const Image& pred, const Image& gt, const Image* mask) {
    if (pred.width != gt.width || pred.height != gt.height ||
        pred.channels != gt.channels)
        throw ShapeError("psnr: image shapes differ");
    if (mask && (mask->width != pred.width || mask->height != pred.height))
        throw ShapeError("psnr: mask shape differs from images");
    double sum = 0;
    size_t count = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (mask && mask->at(x, y, 0) <= 0.5) continue;
            for (int c = 0; c < pred.channels; ++c) {
                const double d = pred.at(x, y, c) - gt.at(x, y, c);
                sum += d * d;
                ++count;
            }
        }
    if (count == 0) throw ArgumentError("psnr: mask selects no pixels");
    const double mse = sum / double(count);
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& pred, const Image& gt) {
    if (pred.width != gt.width || pred.height != gt.height ||
        pred.channels != gt.channels)
        throw ShapeError("ssim: image shapes differ");
    constexpr int kWin = 11;
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    if (pred.width < kWin || pred.height < kWin)
        throw ArgumentError("ssim: image smaller than the 11x11 window");
    static const std::vector<double> kernel = ssim_window(kWin, 1.5);

    double total = 0;
    size_t windows = 0;
    for (int c = 0; c < pred.channels; ++c)
        for (int y = 0; y + kWin <= pred.height; ++y)
            for (int x = 0; x + kWin <= pred.width; ++x) {
                double m1 = 0, m2 = 0, s11 = 0, s22 = 0, s12 = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double w = kernel[i * kWin + j];
                        const double a = pred.at(x + j, y + i, c);
                        const double b = gt.at(x + j, y + i, c);
                        m1 += w * a;
                        m2 += w * b;
                        s11 += w * a * a;
                        s22 += w * b * b;
                        s12 += w * a * b;
                    }
                s11 -= m1 * m1;
                s22 -= m2 * m2;
                s12 -= m1 * m2;
                total += ((2 * m1 * m2 + kC1) * (2 * s12 + kC2)) /
                         ((m1 * m1 + m2 * m2 + kC1) * (s11 + s22 + kC2));
                ++windows;
            }
    return total / double(windows);
}

namespace {

json report_to_json(const EvalReport& r) {
    json j;
    j["split"] = r.split;
    j["prior_mode"] = r.prior_mode;
    j["mean_psnr_full"] = r.mean_psnr_full;
    j["mean_ssim_full"] = r.mean_ssim_full;
    j["mean_psnr_masked"] = r.mean_psnr_masked;
    j["mean_lpips"] = r.mean_lpips ? json(*r.mean_lpips) : json(nullptr);
    j["mean_dists"] = r.mean_dists ? json(*r.mean_dists) : json(nullptr);
    j["frames"] = json::array();
    for (const auto& f : r.frames)
        j["frames"].push_back({{"frame_index", f.frame_index},
                               {"psnr_full", f.psnr_full},
                               {"ssim_full", f.ssim_full},
                               {"psnr_masked", f.psnr_masked}});
    return j;
}

}  // namespace

std::string EvalReport::to_json() const { return report_to_json(*this).dump(2); }

EvalReport evaluate(TrainerState& state, const Dataset& dataset,
                    const std::string& split) {
    EvalReport report;
    report.split = split;
    report.prior_mode = to_string(state.config.prior_mode);
    const auto indices = dataset.split_indices(split);
    if (indices.empty())
        throw ArgumentError("evaluate: split '" + split + "' has no frames");

    double sp = 0, ss = 0, sm = 0;
    int masked_frames = 0;
    for (int idx : indices) {
        const FrameRecord& fr = dataset.frames[idx];
        const Image rendered =
            render_model(state, fr.gamma_exp, fr.gamma_pose, fr.camera, -1);
        FrameMetrics fm;
        fm.frame_index = fr.frame_index;
        fm.psnr_full = psnr(rendered, fr.image);
        fm.ssim_full = ssim(rendered, fr.image);
        if (fr.has_mask()) {
            fm.psnr_masked = psnr(rendered, fr.image, &fr.mask);
            sm += fm.psnr_masked;
            ++masked_frames;
        } else {
            fm.psnr_masked = std::numeric_limits<double>::quiet_NaN();
        }
        sp += fm.psnr_full;
        ss += fm.ssim_full;
        report.frames.push_back(fm);
    }
    report.mean_psnr_full = sp / double(indices.size());
    report.mean_ssim_full = ss / double(indices.size());
    report.mean_psnr_masked =
        masked_frames ? sm / masked_frames : std::numeric_limits<double>::quiet_NaN();
    return report;
}

std::string AblationReport::to_json() const {
    json j;
    j["reports"] = json::array();
    for (const auto& r : reports) j["reports"].push_back(report_to_json(r));
    j["failures"] = failures;
    return j.dump(2);
}

AblationReport ablation_run(const Dataset& dataset, const TrainConfig& config,
                            const std::string& split) {
    AblationReport out;
    for (PriorMode mode :
         {PriorMode::Learnable, PriorMode::Fixed, PriorMode::None}) {
        TrainConfig cfg = config;
        cfg.prior_mode = mode;
        try {
            TrainerState state = init_trainer(dataset, cfg);
            train(state, dataset, nullptr);
            out.reports.push_back(evaluate(state, dataset, split));
        } catch (const std::exception& e) {
            out.failures.push_back(to_string(mode) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace gsrig
