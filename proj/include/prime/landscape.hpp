#pragma once

#include <cstddef>
#include <string>

#include "prime/losses.hpp"

namespace prime {

struct LandscapeConfig {
    std::size_t points = 201;  // per axis
    double lo = -1.0;
    double hi = 1.0;
    MarginConfig margin;
};

/// Grid coordinate i of n points over [lo, hi], exact at both ends.
double grid_value(std::size_t i, std::size_t n, double lo, double hi);

/// CSV with header `mode,s_qp,s_qn,loss,d_sap,d_san,region`: the full
/// (s_qp, s_qn) grid for the fixed-margin kernel, then for the clipped
/// dynamic kernel.
std::string loss_landscape_csv(const LandscapeConfig& cfg);

}  // namespace prime
