#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gsrig {

struct GradCheckResult {
    std::string op;
    int instances = 0;
    double max_rel_err = 0;
    bool pass = false;
};

// Central finite differences against the tape backward for every
// registered op plus the full rasterizer, on small random instances
// (scenes of at most 8 splats, 16x16 images). Relative tolerance 1e-4.
std::vector<GradCheckResult> run_gradcheck(uint64_t seed, int instances = 20);

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace gsrig
