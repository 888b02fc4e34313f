#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbsde {

// Structural problems (bad shapes, missing fields) vs. numerical failures.
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int steps = 1;
    std::vector<double> nodes;

    static TimeGrid uniform(double t0, double T, int steps);

    double dt(int k) const { return nodes[k + 1] - nodes[k]; }
    int num_nodes() const { return static_cast<int>(nodes.size()); }
    void check() const;
};

struct CostMatrix {
    int n = 0;
    Eigen::MatrixXd k;

    CostMatrix() = default;
    CostMatrix(int n_, Eigen::MatrixXd k_) : n(n_), k(std::move(k_)) {}
    static CostMatrix uniform(int n, double off_diag);
};

// Split generator g_i(t, y, z) = h_i(t, y) + f(t, z) [+ <z, b_i(t, x)>].
// h receives the full value vector; in the diagonal case it must read only y[i].
// x is the forward state at t (empty in the deterministic regime).
struct GeneratorSpec {
    int n = 1;
    double gamma = 1.0;
    bool coupled = false;
    std::function<double(int i, double t, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& x)>
        h;
    std::function<double(double t, const Eigen::VectorXd& z)> f;
    // Optional mode-dependent linear-in-z term, returns b_i(t, x) in R^d.
    std::function<Eigen::VectorXd(int i, double t, const Eigen::VectorXd& x)> linear_z;

    bool has_linear_z() const { return static_cast<bool>(linear_z); }
};

struct TerminalCondition {
    // Maps the terminal forward state to an n-vector (state ignored when constant).
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x_T)> xi;
    double bound = 0.0;

    static TerminalCondition constant(Eigen::VectorXd value);
};

struct Dynamics {
    enum class Kind { Deterministic, Markovian };
    Kind kind = Kind::Deterministic;
    Eigen::VectorXd x0;
    // sigma(t, past) with past = (k+1) x d matrix of states up to t_k; functional
    // coefficients may read the whole past, Markovian ones just the last row.
    std::function<Eigen::MatrixXd(double t, const Eigen::MatrixXd& past)> sigma;

    bool deterministic() const { return kind == Kind::Deterministic; }
};

struct RbsdeProblem {
    double horizon = 1.0;
    int n = 1;
    int d = 1;
    CostMatrix cost;
    GeneratorSpec gen;
    TerminalCondition terminal;
    Dynamics dynamics;

    void check_shapes() const;
};

// --- small numeric helpers ------------------------------------------------

// Order-independent summation: pairwise reduction so results do not depend on
// how work was split across workers.
double pairwise_sum(const double* data, std::size_t len);
double pairwise_sum(const std::vector<double>& v);
double pairwise_mean(const std::vector<double>& v);

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};
MeanSe mean_and_se(const std::vector<double>& v);

// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

inline double pos_part(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace rbsde
