#pragma once

#include "rbsde/rng.hpp"
#include "rbsde/types.hpp"

#include <memory>

namespace rbsde {

// Brownian increments arranged per step: dw[k] is num_paths x d.
struct PathBundle {
    TimeGrid grid;
    int num_paths = 0;
    int d = 1;
    std::uint64_t seed = 0;
    std::vector<Eigen::MatrixXd> dw;
};

struct StatePaths {
    TimeGrid grid;
    int num_paths = 0;
    int d = 1;
    std::vector<Eigen::MatrixXd> x;  // per node, num_paths x d
};

PathBundle simulate_brownian(const TimeGrid& grid, int num_paths, int d,
                             std::uint64_t seed);

// Euler-Maruyama for X_{k+1} = X_k + sigma(t_k, past)(dW_k + drift_k dt).
// sigma receives the discrete past path of the individual trajectory as a
// (k+1) x d matrix. The optional drift is evaluated per step and path.
StatePaths simulate_functional_sde(
    const std::function<Eigen::MatrixXd(double t, const Eigen::MatrixXd& past)>& sigma,
    const Eigen::VectorXd& x0, const PathBundle& paths,
    const std::function<Eigen::VectorXd(double t, const Eigen::MatrixXd& past)>& drift =
        nullptr);

// Discrete stochastic exponential of b_{a(.)} . W along each path. The mode
// schedule gives the active mode on interval (t_k, t_{k+1}].
std::vector<double> girsanov_weights(
    const std::function<Eigen::VectorXd(int mode, double t, const Eigen::VectorXd& x)>& b,
    const std::vector<int>& mode_schedule, const StatePaths& states,
    const PathBundle& paths);

// --- regression ------------------------------------------------------------

struct BasisSpec {
    int degree = 3;
};

// Multi-index exponents for the design matrix. Full total-degree polynomials
// for d <= 2; for larger d, per-coordinate powers up to 2 plus pairwise
// products (curse-of-dimension guard).
std::vector<std::vector<int>> basis_exponents(int d, int degree);

struct FittedRegression {
    int d = 1;
    std::vector<std::vector<int>> exponents;
    Eigen::VectorXd coeffs;
    bool ridge_used = false;

    double evaluate(const Eigen::VectorXd& x) const;
    Eigen::VectorXd evaluate_all(const Eigen::MatrixXd& features) const;
};

Eigen::MatrixXd build_design(const Eigen::MatrixXd& features,
                             const std::vector<std::vector<int>>& exponents);

// Least squares of targets on the basis, rank-revealing QR with a ridge
// fallback on rank deficiency (flagged, never silent).
FittedRegression regress_conditional_expectation(const Eigen::VectorXd& targets,
                                                 const Eigen::MatrixXd& features,
                                                 const BasisSpec& basis,
                                                 double ridge_lambda = 1e-8);

// Fitted values for several target columns sharing one design matrix; the
// factorization is done once, so this is the cheap form for per-step loops.
Eigen::MatrixXd fit_conditional_expectations(const Eigen::MatrixXd& targets,
                                             const Eigen::MatrixXd& features,
                                             const BasisSpec& basis,
                                             double ridge_lambda = 1e-8);

}  // namespace rbsde
