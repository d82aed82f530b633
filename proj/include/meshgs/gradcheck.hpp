#pragma once

#include "meshgs/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace meshgs {

/// One analytic-versus-central-difference comparison. The relative error of
/// a probe is |a - f| / max(|a|, |f|, 1e-3 * max|a| over the whole gradient),
/// so entries that are negligible next to the gradient's largest component
/// are compared on that scale.
struct GradcheckEntry {
    std::string name;
    Index probes = 0;
    double max_rel_error = 0.0;
    double threshold = 1e-4;
    bool passed() const { return max_rel_error < threshold; }
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double seconds = 0.0;
    bool all_passed() const;
    std::string to_json() const;
};

/// Runs every gradient suite: trilinear sampling, isosurface vertex to node,
/// face binding, hash encoding and network, SH colors, background
/// attributes, refined Gaussians, rasterizer backward, loss adjoints and an
/// end-to-end node-value probe through the joint loss. scale is "tiny"
/// (few probes) or "full".
GradcheckReport run_gradcheck(const std::string& scale = "tiny", std::uint64_t seed = 0, double threshold = 1e-4);

} // namespace meshgs
