#pragma once

#include "rbsde/penalization.hpp"

namespace rbsde {

struct FixedPointConfig {
    double beta = 0.0;  // 0 => 4 * gamma^2 * T * n
    double tol = 1e-8;
    int max_iter = 50;
};

struct FixedPointTrace {
    int iterates = 0;
    std::vector<double> deltas;  // beta-weighted sup distances
    double beta = 0.0;
    double contraction_estimate = 0.0;  // geometric fit, valid with >= 3 iterates
    bool geometric = true;              // false when delta ratio > 1 twice
};

struct CoupledResult {
    DiscreteSolution solution;
    FixedPointTrace trace;
};

// Fixed point of y -> first component of the reflected solve with the
// generator's y-argument frozen at y. Requires (A5) and the (A4) uniqueness
// regime; beta must exceed 2 * gamma^2 * T * n.
CoupledResult solve_coupled_rbsde(const RbsdeProblem& problem,
                                  const Numerics& numerics,
                                  const StoppingRule& stopping,
                                  const FixedPointConfig& fp = {});

}  // namespace rbsde
