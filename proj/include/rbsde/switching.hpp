#pragma once

#include "rbsde/penalization.hpp"
#include "rbsde/types.hpp"

#include <optional>

namespace rbsde {

// Grid-snapped switching strategy. Mode alpha0 is active on (t0, tau_1]; the
// j-th entry switches to switches[j].mode at node switches[j].node. The
// terminal marker tau_N = T is implicit.
struct SwitchingStrategy {
    int start_node = 0;
    int start_mode = 0;
    struct Switch {
        int node;
        int mode;
    };
    std::vector<Switch> switches;

    int num_switches() const { return static_cast<int>(switches.size()); }
    // Mode active on the interval (t_k, t_{k+1}].
    int mode_on_interval(int k) const;
    int final_mode() const;
    std::string digest(const TimeGrid& grid) const;

    // Throws StructuralError when inadmissible (nodes out of order/out of
    // range, repeated consecutive modes, or a switch at the terminal node).
    void check_admissible(const TimeGrid& grid, int n_modes) const;
};

// Cumulative switching cost A^a as a right-continuous step function on the
// grid nodes; A(t0) = 0 unless a switch sits at the start node.
std::vector<double> cost_process(const SwitchingStrategy& a, const CostMatrix& k,
                                 const TimeGrid& grid);

// Total cost paid along the strategy (all switches, including one at t0).
double total_cost(const SwitchingStrategy& a, const CostMatrix& k);

// Scalar switched BSDE solved in the shifted variable U~ = U + A^a.
// Deterministic regime delegates to detgrid. Returns U^a(t0).
// shared_states may hold the state paths already simulated from shared_paths;
// callers evaluating many strategies on one bundle should pass both.
double solve_switched_bsde(const RbsdeProblem& problem, const SwitchingStrategy& a,
                           const Numerics& numerics,
                           const PathBundle* shared_paths = nullptr,
                           const StatePaths* shared_states = nullptr);

// Every deterministic grid-snapped strategy with at most max_switches
// switches at strictly increasing nodes in {0, ..., steps-1}.
std::vector<SwitchingStrategy> enumerate_strategies(const TimeGrid& grid, int n_modes,
                                                    int start_mode, int max_switches,
                                                    std::size_t cap = 100000);

struct StrategyValue {
    SwitchingStrategy strategy;
    double value = 0.0;
};

struct RepresentationReport {
    int mode = 0;
    double y0 = 0.0;
    double oracle_min = 0.0;
    SwitchingStrategy minimizer;
    double gap = 0.0;  // y0 - oracle_min
    std::vector<StrategyValue> table;
    bool lower_bound_ok = true;  // y0 <= U^a(0) + tol for every strategy tried
    double worst_lower_bound_violation = 0.0;
};

enum class VerificationMode { Enumerate, DynamicProgramming };

struct VerificationConfig {
    VerificationMode mode = VerificationMode::Enumerate;
    int max_switches = 2;
    double tol = 1e-3;
    std::size_t cap = 100000;
    int workers = 1;
};

RepresentationReport verify_representation(const RbsdeProblem& problem,
                                           const DiscreteSolution& solution,
                                           int start_mode,
                                           const VerificationConfig& vcfg,
                                           const Numerics& numerics);

struct ExtractionConfig {
    double boundary_tol = 0.0;  // <= 0: auto from slack and value increments
    int max_switch_count = 100;
};

struct ExtractionResult {
    SwitchingStrategy strategy;        // deterministic regime, or path 0
    std::vector<SwitchingStrategy> per_path;  // stochastic regime
    double u_star0 = 0.0;              // certified U^{a*}(t0)
    double certification_gap = 0.0;    // Y_i(0) - U^{a*}(0)
};

// Forward scan for the optimal strategy of a certified solution, plus
// re-certification of U^{a*}(0) through the switched solver.
ExtractionResult extract_optimal_strategy(const RbsdeProblem& problem,
                                          const DiscreteSolution& solution,
                                          int start_mode,
                                          const ExtractionConfig& cfg,
                                          const Numerics& numerics,
                                          const PathBundle* shared_paths = nullptr);

}  // namespace rbsde
