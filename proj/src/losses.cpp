#include "gsrig/losses.hpp"

#include <cmath>

namespace gsrig {

using ad::Tape;
using ad::Tensor;

Tape::Id l1_loss(Tape& t, Tape::Id pred, Tape::Id gt) {
    return t.mean(t.abs(t.sub(pred, gt)));
}

std::vector<double> ssim_window(int size, double sigma) {
    std::vector<double> g(size);
    double sum = 0;
    for (int i = 0; i < size; ++i) {
        const double d = i - (size - 1) / 2.0;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        sum += g[i];
    }
    for (auto& x : g) x /= sum;
    std::vector<double> k(size_t(size) * size);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) k[i * size + j] = g[i] * g[j];
    return k;
}

Tape::Id dssim_loss(Tape& t, Tape::Id pred, Tape::Id gt, int width, int height) {
    constexpr int kWin = 11;
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    if (width < kWin || height < kWin)
        throw ArgumentError("dssim_loss: image smaller than the 11x11 window");
    static const std::vector<double> kernel = ssim_window(kWin, 1.5);

    auto filt = [&](Tape::Id x) {
        return t.filter2d(x, height, width, kernel, kWin, kWin);
    };
    Tape::Id mu1 = filt(pred);
    Tape::Id mu2 = filt(gt);
    Tape::Id mu1_sq = t.square(mu1);
    Tape::Id mu2_sq = t.square(mu2);
    Tape::Id mu12 = t.mul(mu1, mu2);
    Tape::Id s11 = t.sub(filt(t.square(pred)), mu1_sq);
    Tape::Id s22 = t.sub(filt(t.square(gt)), mu2_sq);
    Tape::Id s12 = t.sub(filt(t.mul(pred, gt)), mu12);

    Tape::Id num = t.mul(t.add_scalar(t.scale(mu12, 2.0), kC1),
                         t.add_scalar(t.scale(s12, 2.0), kC2));
    Tape::Id den = t.mul(t.add_scalar(t.add(mu1_sq, mu2_sq), kC1),
                         t.add_scalar(t.add(s11, s22), kC2));
    Tape::Id ssim_mean = t.mean(t.div(num, den));
    return t.scale(t.add_scalar(t.scale(ssim_mean, -1.0), 1.0), 0.5);
}

Tape::Id mean_sq_norm_rows(Tape& t, Tape::Id x) {
    const int rows = t.val(x).rows;
    return t.scale(t.sum(t.square(x)), 1.0 / rows);
}

Tape::Id mesh_match_loss(Tape& t, Tape::Id deform_at_vertices,
                          const Tensor& delta_v) {
    return mean_sq_norm_rows(t, t.sub(deform_at_vertices, t.constant(delta_v)));
}

FarFieldLosses far_field_losses(Tape& t, Tape::Id deform, Tape::Id q_prime,
                                Tape::Id s_raw,
                                const std::vector<int>& far_indices) {
    FarFieldLosses out;
    if (far_indices.empty()) {
        out.far_set_empty = true;
        out.global_def = t.constant(Tensor::scalar(0.0));
        out.global_rot = t.constant(Tensor::scalar(0.0));
    } else {
        out.global_def = mean_sq_norm_rows(t, t.select_rows(deform, far_indices));
        // ||R' - I||_F^2 = 8 * |vec(q')|^2 for a unit quaternion.
        Tape::Id vec = t.slice_cols(t.select_rows(q_prime, far_indices), 1, 4);
        out.global_rot = t.scale(mean_sq_norm_rows(t, vec), 8.0);
    }
    const int rows = t.val(s_raw).rows;
    out.global_scale = t.scale(
        t.sum(t.abs(t.add_scalar(t.exp(s_raw), -1.0))), 1.0 / rows);
    return out;
}

SmallTermLosses small_term_losses(Tape& t, Tape::Id eta, Tape::Id t_vec) {
    SmallTermLosses out;
    out.eta = mean_sq_norm_rows(t, eta);
    out.t_frame = t.sum(t.square(t_vec));
    return out;
}

Tape::Id total_loss(Tape& t, const LossTerms& terms, const LossWeights& w,
                    LossBreakdown* breakdown) {
    struct Entry {
        const char* name;
        Tape::Id id;
        double weight;
    };
    const Entry entries[] = {
        {"l1", terms.l1, w.w_l1},
        {"dssim", terms.dssim, w.w_dssim},
        {"mesh", terms.mesh, w.lambda_mesh},
        {"global_def", terms.global_def, w.lambda_global_def},
        {"eta", terms.eta, w.lambda_eta},
        {"t", terms.t_frame, w.lambda_t},
        {"global_rot", terms.global_rot, w.lambda_global_rot},
        {"global_scale", terms.global_scale, w.lambda_global_scale},
    };
    Tape::Id total = t.constant(Tensor::scalar(0.0));
    for (const Entry& e : entries) {
        double v = 0;
        if (e.id >= 0) {
            v = t.val(e.id).v[0];
            if (!std::isfinite(v))
                throw TrainingError(std::string("non-finite loss term: ") + e.name);
            total = t.add(total, t.scale(e.id, e.weight));
        }
        if (breakdown) (*breakdown)[e.name] = v;
    }
    if (breakdown) (*breakdown)["total"] = t.val(total).v[0];
    return total;
}

}  // namespace gsrig
