#pragma once

#include "rbsde/types.hpp"

namespace rbsde {

struct SwitchingStrategy;  // switching.hpp

// Solution of the backward ODE system in the deterministic regime (Z == 0).
struct DetSolution {
    TimeGrid grid;
    std::vector<Eigen::VectorXd> y;      // per node, n-vector
    std::vector<Eigen::VectorXd> k_cum;  // per node, cumulative from t0, non-decreasing

    double slack_sup(const CostMatrix& k) const;
};

struct DetGridConfig {
    double stiffness_cap = 0.5;  // refuse when m * dt exceeds this
};

// Penalized system as a backward ODE, classical RK4 with fixed step.
// Requires: deterministic dynamics, constant terminal, time-deterministic h, f.
DetSolution solve_penalized_ode(const RbsdeProblem& problem, double m,
                                const TimeGrid& grid, const DetGridConfig& cfg = {});

// Dynamic-programming oracle for the switching value: dynamics step then the
// switching projection, iterated to a fixed point per node.
std::vector<Eigen::VectorXd> dp_switching_value(const RbsdeProblem& problem,
                                                const TimeGrid& grid);

// Value of a fixed grid-snapped strategy, backward scalar ODE with jumps at
// the switch nodes. Returns U^a(t0).
double solve_switched_ode(const RbsdeProblem& problem, const SwitchingStrategy& a,
                          const TimeGrid& grid);

}  // namespace rbsde
