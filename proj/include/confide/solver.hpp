#pragma once

#include <optional>
#include <stdexcept>

#include "confide/pde.hpp"

namespace confide {

struct UnstableError : std::runtime_error {
    UnstableError(int step, Signal partial_rollout)
        : std::runtime_error("rollout unstable at step " + std::to_string(step)),
          first_bad_step(step),
          partial(std::move(partial_rollout)) {}

    int first_bad_step;  // index of the first slice that blew up
    Signal partial;      // slices strictly before first_bad_step
};

struct StabilityReport {
    bool ok = true;
    int slice = -1;        // first offending slice
    int64_t point = -1;    // flat index within that slice (field-major)
};

// Forward-Euler rollout: u[j+1] = u[j] + dt * rhs_eval(u[j]). Dirichlet
// endpoints stay at exactly 0; periodic grids update every point. Returns
// n_steps+1 slices (slice 0 is `init`). Throws UnstableError on blowup.
Signal solve_explicit(const CoefficientEstimate& est, const GridSpec& grid,
                      const std::vector<Tensor>& init, int n_steps);

// Flags the first non-finite entry or |value| above the family threshold.
StabilityReport check_stability(const Signal& s, FamilyId family);

}  // namespace confide
