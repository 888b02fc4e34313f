#include "rbsde/detgrid.hpp"

#include "rbsde/switching.hpp"

#include <cmath>
#include <sstream>

namespace rbsde {

namespace {

const Eigen::VectorXd kNoState;

void require_deterministic(const RbsdeProblem& problem) {
    if (!problem.dynamics.deterministic())
        throw StructuralError("detgrid: problem is not in the deterministic regime");
}

// Right-hand side of dY/dt = -rhs, rhs_i = h_i + f(t,0) - m * penalty_i.
Eigen::VectorXd penalized_rhs(const RbsdeProblem& p, double m, double t,
                              const Eigen::VectorXd& y) {
    const int n = p.n;
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(p.d);
    const double f0 = p.gen.f(t, z0);
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
        double pen = 0.0;
        for (int l = 0; l < n; ++l) pen += pos_part(y(i) - y(l) - p.cost.k(i, l));
        rhs(i) = p.gen.h(i, t, y, kNoState) + f0 - m * pen;
    }
    return rhs;
}

Eigen::VectorXd penalty_rate(const RbsdeProblem& p, double m,
                             const Eigen::VectorXd& y) {
    Eigen::VectorXd r(p.n);
    for (int i = 0; i < p.n; ++i) {
        double pen = 0.0;
        for (int l = 0; l < p.n; ++l) pen += pos_part(y(i) - y(l) - p.cost.k(i, l));
        r(i) = m * pen;
    }
    return r;
}

}  // namespace

double DetSolution::slack_sup(const CostMatrix& k) const {
    double s = 0.0;
    for (const auto& v : y)
        for (int i = 0; i < k.n; ++i)
            for (int j = 0; j < k.n; ++j)
                if (i != j) s = std::max(s, pos_part(v(i) - v(j) - k.k(i, j)));
    return s;
}

DetSolution solve_penalized_ode(const RbsdeProblem& problem, double m,
                                const TimeGrid& grid, const DetGridConfig& cfg) {
    require_deterministic(problem);
    grid.check();

    double max_dt = 0.0;
    for (int k = 0; k < grid.steps; ++k) max_dt = std::max(max_dt, grid.dt(k));
    if (m * max_dt > cfg.stiffness_cap) {
        std::ostringstream os;
        os << "solve_penalized_ode: m*dt = " << m * max_dt << " exceeds cap "
           << cfg.stiffness_cap << "; need at least "
           << static_cast<int>(std::ceil(m * (grid.T - grid.t0) / cfg.stiffness_cap))
           << " steps";
        throw SolverError(os.str());
    }

    const int K = grid.steps;
    DetSolution sol;
    sol.grid = grid;
    sol.y.resize(K + 1);
    sol.k_cum.resize(K + 1);

    const Eigen::VectorXd x_empty;
    sol.y[K] = problem.terminal.xi(x_empty);
    if (sol.y[K].size() != problem.n)
        throw StructuralError("solve_penalized_ode: terminal dimension mismatch");

    // Backward RK4 from T to t0.
    for (int k = K - 1; k >= 0; --k) {
        const double t1 = grid.nodes[k + 1];
        const double dt = grid.dt(k);
        const Eigen::VectorXd& y1 = sol.y[k + 1];
        // Step with h = -dt: dY/dt = -rhs.
        const Eigen::VectorXd f1 = penalized_rhs(problem, m, t1, y1);
        const Eigen::VectorXd f2 =
            penalized_rhs(problem, m, t1 - 0.5 * dt, y1 + 0.5 * dt * f1);
        const Eigen::VectorXd f3 =
            penalized_rhs(problem, m, t1 - 0.5 * dt, y1 + 0.5 * dt * f2);
        const Eigen::VectorXd f4 = penalized_rhs(problem, m, t1 - dt, y1 + dt * f3);
        sol.y[k] = y1 + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
    }

    // K accumulates forward by the trapezoid rule on the node values.
    sol.k_cum[0] = Eigen::VectorXd::Zero(problem.n);
    for (int k = 1; k <= K; ++k) {
        const Eigen::VectorXd r0 = penalty_rate(problem, m, sol.y[k - 1]);
        const Eigen::VectorXd r1 = penalty_rate(problem, m, sol.y[k]);
        sol.k_cum[k] = sol.k_cum[k - 1] + 0.5 * grid.dt(k - 1) * (r0 + r1);
    }
    return sol;
}

std::vector<Eigen::VectorXd> dp_switching_value(const RbsdeProblem& problem,
                                                const TimeGrid& grid) {
    require_deterministic(problem);
    grid.check();
    const int n = problem.n;
    const int K = grid.steps;
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(problem.d);

    std::vector<Eigen::VectorXd> v(K + 1);
    const Eigen::VectorXd x_empty;
    v[K] = problem.terminal.xi(x_empty);

    for (int k = K - 1; k >= 0; --k) {
        const double t1 = grid.nodes[k + 1];
        const double dt = grid.dt(k);
        const double f0 = problem.gen.f(t1, z0);
        Eigen::VectorXd cur(n);
        for (int i = 0; i < n; ++i)
            cur(i) = v[k + 1](i) + (problem.gen.h(i, t1, v[k + 1], kNoState) + f0) * dt;
        // Switching projection to a fixed point; (A3) bounds useful chains by
        // n-1 applications.
        for (int sweep = 0; sweep < n - 1; ++sweep) {
            bool changed = false;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double alt = cur(j) + problem.cost.k(i, j);
                    if (alt < cur(i)) {
                        cur(i) = alt;
                        changed = true;
                    }
                }
            if (!changed) break;
        }
        v[k] = cur;
    }
    return v;
}

double solve_switched_ode(const RbsdeProblem& problem, const SwitchingStrategy& a,
                          const TimeGrid& grid) {
    require_deterministic(problem);
    grid.check();
    a.check_admissible(grid, problem.n);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(problem.d);
    const Eigen::VectorXd x_empty;

    auto driver = [&](int mode, double t, double u) {
        // Diagonal generator reads only its own slot.
        Eigen::VectorXd y = Eigen::VectorXd::Constant(problem.n, u);
        return problem.gen.h(mode, t, y, x_empty) + problem.gen.f(t, z0);
    };

    const Eigen::VectorXd xi = problem.terminal.xi(x_empty);
    double u = xi(a.final_mode());

    for (int k = grid.steps - 1; k >= 0; --k) {
        const int mode = a.mode_on_interval(k);
        const double t1 = grid.nodes[k + 1];
        const double dt = grid.dt(k);
        const double f1 = driver(mode, t1, u);
        const double f2 = driver(mode, t1 - 0.5 * dt, u + 0.5 * dt * f1);
        const double f3 = driver(mode, t1 - 0.5 * dt, u + 0.5 * dt * f2);
        const double f4 = driver(mode, t1 - dt, u + dt * f3);
        u += (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
        // Jumps: crossing a switch time backward adds its cost.
        for (auto it = a.switches.rbegin(); it != a.switches.rend(); ++it)
            if (it->node == k) {
                int prev_mode = a.start_mode;
                for (const auto& s : a.switches) {
                    if (&s == &*it) break;
                    prev_mode = s.mode;
                }
                u += problem.cost.k(prev_mode, it->mode);
            }
    }
    return u;
}

}  // namespace rbsde
