#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gsrig/tape.hpp"

namespace gsrig::ad {

// lr(step) = start * (end/start)^(min(step, decay_steps)/decay_steps).
struct LrSchedule {
    double lr_start = 1e-3;
    double lr_end = 1e-3;
    int decay_steps = 1;
};
double lr_at(const LrSchedule& schedule, int step);

// Bias-corrected Adam, beta1=0.9 beta2=0.999 eps=1e-8. Non-finite
// gradients reject the step for that tensor and bump rejected_steps.
class Adam {
   public:
    struct Moments {
        std::vector<double> m, v;
        int t = 0;
    };

    void step(const std::string& name, Tensor& param, const Tensor& grad,
              double lr);

    // Densification resizes clouds; moments for a renamed/resized tensor
    // restart from zero.
    void reset(const std::string& name) { state_.erase(name); }
    void reset_all() { state_.clear(); }

    std::map<std::string, Moments>& state() { return state_; }
    const std::map<std::string, Moments>& state() const { return state_; }
    int64_t rejected_steps() const { return rejected_; }

   private:
    std::map<std::string, Moments> state_;
    int64_t rejected_ = 0;
};

}  // namespace gsrig::ad
