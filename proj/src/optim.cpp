#include "gsrig/optim.hpp"

#include <cmath>

namespace gsrig::ad {

double lr_at(const LrSchedule& s, int step) {
    if (step < 0) throw ArgumentError("lr_at: step must be >= 0");
    if (s.lr_start == s.lr_end) return s.lr_start;
    const double f = std::min(step, s.decay_steps) / double(s.decay_steps);
    return s.lr_start * std::pow(s.lr_end / s.lr_start, f);
}

void Adam::step(const std::string& name, Tensor& param, const Tensor& grad,
                double lr) {
    if (!param.same_shape(grad)) throw ShapeError("adam: param/grad shape mismatch");
    for (double g : grad.v)
        if (!std::isfinite(g)) {
            ++rejected_;
            return;
        }

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    Moments& mo = state_[name];
    if (mo.m.size() != param.size()) {
        mo.m.assign(param.size(), 0.0);
        mo.v.assign(param.size(), 0.0);
        mo.t = 0;
    }
    ++mo.t;
    const double bc1 = 1.0 - std::pow(kBeta1, mo.t);
    const double bc2 = 1.0 - std::pow(kBeta2, mo.t);
    for (size_t i = 0; i < param.size(); ++i) {
        const double g = grad.v[i];
        mo.m[i] = kBeta1 * mo.m[i] + (1 - kBeta1) * g;
        mo.v[i] = kBeta2 * mo.v[i] + (1 - kBeta2) * g * g;
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        param.v[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
}

}  // namespace gsrig::ad
