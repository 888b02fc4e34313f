#pragma once

#include "rbsde/mc.hpp"
#include "rbsde/model.hpp"
#include "rbsde/types.hpp"

#include <memory>
#include <optional>

namespace rbsde {

struct Numerics {
    int num_paths = 10000;
    int steps = 100;
    std::uint64_t seed = 0;
    bool seed_set = false;
    BasisSpec basis;
    double ridge_lambda = 1e-8;
    double z_clip = 0.0;        // 0 => 10 * gamma * (1 + terminal bound)
    int picard_max = 50;
    double picard_tol = 0.0;    // 0 => 1e-10 deterministic, 1e-8 stochastic
    double m_start = 1.0;
    double stiffness_cap = 0.0; // 0 => 0.5 deterministic, 5 stochastic
    int workers = 1;

    double effective_picard_tol(bool deterministic) const {
        return picard_tol > 0.0 ? picard_tol : (deterministic ? 1e-10 : 1e-8);
    }
    double effective_stiffness_cap(bool deterministic) const {
        return stiffness_cap > 0.0 ? stiffness_cap : (deterministic ? 0.5 : 5.0);
    }
    double effective_z_clip(const RbsdeProblem& p) const {
        return z_clip > 0.0 ? z_clip
                            : 10.0 * p.gen.gamma * (1.0 + p.terminal.bound);
    }
};

struct SolutionDiagnostics {
    double m = 0.0;
    double slack_sup = 0.0;
    Eigen::VectorXd skorokhod_residual;  // per mode
    int picard_iters_max = 0;
    double clip_activation_rate = 0.0;
    double bmo_diagnostic = 0.0;  // max_k path-average of remaining sum |Z|^2 dt
    bool terminal_match = true;
};

// Grid solution of the penalized system: deterministic node vectors or
// pathwise realizations plus the generating paths.
struct DiscreteSolution {
    TimeGrid grid;
    int n = 1;
    bool deterministic = true;

    // Deterministic regime.
    std::vector<Eigen::VectorXd> y_det;
    std::vector<Eigen::VectorXd> k_cum_det;

    // Stochastic regime: per node, num_paths x n (y, k_cum) and per node per
    // mode num_paths x d (z).
    std::vector<Eigen::MatrixXd> y_mc;
    std::vector<Eigen::MatrixXd> k_cum_mc;
    std::vector<std::vector<Eigen::MatrixXd>> z_mc;
    std::shared_ptr<const PathBundle> paths;
    std::shared_ptr<const StatePaths> states;

    SolutionDiagnostics diagnostics;

    Eigen::VectorXd y0() const;        // node-0 value (path mean in MC mode)
    Eigen::VectorXd y_at(int node) const;
    double slack_sup(const CostMatrix& k) const;
};

// Values held fixed inside the generator's y-argument (coupled fixed point).
struct FrozenValues {
    std::vector<Eigen::VectorXd> det;   // per node
    std::vector<Eigen::MatrixXd> mc;    // per node, num_paths x n
    bool empty() const { return det.empty() && mc.empty(); }
};

// phi^m_i = g_i(t, y_i, z_i) - m sum_l (y_i - y_l - k_{i,l})^+.
double penalized_driver(const GeneratorSpec& gen, const CostMatrix& k, double m,
                        double t, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& z_i, int i,
                        const Eigen::VectorXd& x = Eigen::VectorXd());

DiscreteSolution solve_penalized_bsde(
    const RbsdeProblem& problem, double m, const Numerics& numerics,
    std::shared_ptr<const PathBundle> shared_paths = nullptr,
    const FrozenValues* frozen = nullptr);

struct PenaltySweepReport {
    std::vector<double> m_values;
    std::vector<double> slack_sups;
    std::vector<Eigen::VectorXd> y0s;
    std::vector<double> y_sup_norms;  // uniform-bound echo per m
    int monotonicity_violations = 0;
    double max_violation_magnitude = 0.0;
    double slope = 0.0;  // log slack_sup vs log m
    bool converged = false;
    bool complete = true;  // false when a per-m solve failed
    std::string failure;
};

PenaltySweepReport penalty_sweep(const RbsdeProblem& problem,
                                 const std::vector<double>& m_values,
                                 const Numerics& numerics);

// Trapezoid re-accumulation of K^m from the solved values.
std::vector<Eigen::VectorXd> extract_increasing_process(const DiscreteSolution& sol,
                                                        const RbsdeProblem& problem,
                                                        double m);

// Riemann-Stieltjes sum of (Y_i - obstacle_i) dK_i per mode, path-averaged.
Eigen::VectorXd skorokhod_residual(const DiscreteSolution& sol, const CostMatrix& k);

struct StoppingRule {
    double m_max = 1024.0;
    double slack_tol = 1e-3;
};

// Doubles m from numerics.m_start until the slack certificate holds.
DiscreteSolution solve_rbsde(const RbsdeProblem& problem, const Numerics& numerics,
                             const StoppingRule& stopping);

}  // namespace rbsde
