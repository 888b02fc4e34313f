#pragma once

#include "rbsde/switching.hpp"

namespace rbsde {

// Risk-sensitive switching problem for a functional SDE: running costs l_i,
// measure-change drifts b_i, diffusion sigma, switching costs, terminal xi.
struct RiskProblem {
    double horizon = 1.0;
    int n = 1;
    int d = 1;
    Eigen::VectorXd x0;
    std::function<Eigen::MatrixXd(double t, const Eigen::MatrixXd& past)> sigma;
    std::function<Eigen::VectorXd(int mode, double t, const Eigen::VectorXd& x)> b;
    std::function<double(int mode, double t, const Eigen::VectorXd& x)> l;
    CostMatrix cost;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x_T)> xi;
    double xi_bound = 0.0;

    double b_bound = 0.0;        // declared sup bound for |b_i|
    double l_bound = 0.0;        // declared sup bound for |l_i|
    double path_lipschitz = 0.0; // declared (H2) constant

    bool deterministic = false;  // b == 0, l deterministic in t, xi constant

    void check() const;
};

// phi_i(t, x, z) = l_i(t, x) + <z, b_i(t, x)> + 1/2 |z|^2 as a GeneratorSpec.
GeneratorSpec build_risk_generator(const RiskProblem& rp);

// The reflected problem driven by the risk generator.
RbsdeProblem build_risk_rbsde(const RiskProblem& rp);

struct CostEstimate {
    double estimate = 0.0;
    double se = 0.0;
};

// J(a) by simulation under P with Girsanov reweighting; left-endpoint Riemann
// sums for the running-cost integral.
CostEstimate estimate_cost(const RiskProblem& rp, const SwitchingStrategy& a,
                           const PathBundle& paths);

// Same estimator but with pathwise mode schedules (frozen per-path strategies
// from a stochastic extraction).
CostEstimate estimate_cost_pathwise(const RiskProblem& rp,
                                    const std::vector<SwitchingStrategy>& per_path,
                                    const PathBundle& paths);

struct StrategyCostRow {
    SwitchingStrategy strategy;
    double log_j = 0.0;
    double se = 0.0;  // on the J scale
};

struct RiskReport {
    int start_mode = 0;
    double y0 = 0.0;
    double log_j_star = 0.0;
    double se = 0.0;             // of the J(a*) estimate, on the J scale
    double gap = 0.0;            // log J(a*) - Y_i(0)
    int lower_bound_violations = 0;
    int strategies_tested = 0;
    std::vector<StrategyCostRow> per_strategy;
};

struct RiskVerificationConfig {
    int start_mode = 0;
    int max_switches = 2;
    int random_strategies = 100;
    std::uint64_t strategy_seed = 7;
    std::size_t cap = 100000;
    StoppingRule stopping;
    ExtractionConfig extraction;
};

// Solves the reflected system with the risk generator, extracts a*, and
// checks log J(a*) against Y_i(0) plus the lower bound over a strategy family.
RiskReport verify_risk_optimality(const RiskProblem& rp, const Numerics& numerics,
                                  const RiskVerificationConfig& cfg);

}  // namespace rbsde
