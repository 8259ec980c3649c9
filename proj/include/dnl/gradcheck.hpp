#pragma once

// Finite-difference verification of the full model's joint-loss gradient.

#include <cstdint>
#include <string>
#include <vector>

#include "dnl/network.hpp"

namespace dnl {

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t entries_per_tensor = 3;  // sampled entries per parameter tensor
    double step = 1e-5;                  // central difference step
    double tolerance = 1e-4;             // max relative error
    double floor = 1e-6;                 // relative error denominator floor
    double gamma = 0.5;                  // γ used instead of its init value, so attention gradients are non-trivial
};

struct GradcheckGroup {
    std::string name;
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation changed the ReLU activation pattern
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    double max_rel_error = 0;
    std::string worst;  // parameter with the largest error
    bool passed = false;
};

// |a − n| / max(|a|, |n|, floor)
double gradcheck_relative_error(double analytic, double numeric, double floor);

GradcheckReport run_gradcheck(const NetConfig& cfg, const GradcheckOptions& opt);

}  // namespace dnl
