#include "rbsde/coupled.hpp"

#include <cmath>
#include <sstream>

namespace rbsde {

namespace {

DiscreteSolution solve_frozen(const RbsdeProblem& problem, const Numerics& numerics,
                              const StoppingRule& stopping,
                              std::shared_ptr<const PathBundle> bundle,
                              const FrozenValues& frozen, double& m_io) {
    double m = m_io;
    while (true) {
        DiscreteSolution sol =
            solve_penalized_bsde(problem, m, numerics, bundle, &frozen);
        if (sol.diagnostics.slack_sup <= stopping.slack_tol) {
            m_io = m;  // warm start for the next iterate
            return sol;
        }
        if (2.0 * m > stopping.m_max)
            throw SolverError("solve_coupled_rbsde: inner solve hit m_max with slack " +
                              std::to_string(sol.diagnostics.slack_sup));
        m *= 2.0;
    }
}

}  // namespace

CoupledResult solve_coupled_rbsde(const RbsdeProblem& problem,
                                  const Numerics& numerics,
                                  const StoppingRule& stopping,
                                  const FixedPointConfig& fp) {
    problem.check_shapes();
    if (!problem.gen.coupled)
        throw StructuralError("solve_coupled_rbsde: generator is not coupled");
    if (!validate_cost_matrix(problem.cost, AssumptionLevel::A4).passed)
        throw StructuralError("solve_coupled_rbsde: cost matrix must satisfy (A4)");

    const double gamma = problem.gen.gamma;
    const double contraction_floor =
        2.0 * gamma * gamma * problem.horizon * problem.n;
    const double beta = fp.beta > 0.0 ? fp.beta : 2.0 * contraction_floor;
    if (!(beta > contraction_floor)) {
        std::ostringstream os;
        os << "solve_coupled_rbsde: beta = " << beta
           << " must exceed 2*gamma^2*T*n = " << contraction_floor;
        throw StructuralError(os.str());
    }

    const TimeGrid grid = TimeGrid::uniform(0.0, problem.horizon, numerics.steps);
    const bool det = problem.dynamics.deterministic();

    std::shared_ptr<PathBundle> bundle;
    if (!det)
        bundle = std::make_shared<PathBundle>(
            simulate_brownian(grid, numerics.num_paths, problem.d, numerics.seed));

    // Initializer: project the terminal mean into the closed domain, constant
    // in time.
    Eigen::VectorXd xi_mean;
    int P = 1;
    if (det) {
        xi_mean = problem.terminal.xi(Eigen::VectorXd());
    } else {
        const StatePaths states = simulate_functional_sde(
            problem.dynamics.sigma, problem.dynamics.x0, *bundle);
        P = bundle->num_paths;
        xi_mean = Eigen::VectorXd::Zero(problem.n);
        for (int p = 0; p < P; ++p)
            xi_mean += problem.terminal.xi(
                states.x[grid.steps].row(p).transpose());
        xi_mean /= P;
    }
    const Eigen::VectorXd y_init = project_to_domain(xi_mean, problem.cost, 1e-10);

    FrozenValues frozen;
    if (det) {
        frozen.det.assign(grid.steps + 1, y_init);
    } else {
        Eigen::MatrixXd rows(P, problem.n);
        rows.rowwise() = y_init.transpose();
        frozen.mc.assign(grid.steps + 1, rows);
    }

    CoupledResult out;
    out.trace.beta = beta;
    double m_warm = numerics.m_start;
    int ratio_exceedances = 0;

    for (int it = 0; it < fp.max_iter; ++it) {
        DiscreteSolution sol =
            solve_frozen(problem, numerics, stopping, bundle, frozen, m_warm);
        ++out.trace.iterates;

        // beta-weighted sup distance to the previous iterate.
        double delta = 0.0;
        for (int k = 0; k <= grid.steps; ++k) {
            const double w = std::exp(beta * grid.nodes[k]);
            if (det) {
                delta = std::max(
                    delta, w * (sol.y_det[k] - frozen.det[k]).lpNorm<Eigen::Infinity>());
            } else {
                delta = std::max(
                    delta, w * (sol.y_mc[k] - frozen.mc[k]).cwiseAbs().maxCoeff());
            }
        }
        if (!out.trace.deltas.empty() && delta > out.trace.deltas.back())
            ++ratio_exceedances;
        out.trace.deltas.push_back(delta);

        if (det)
            frozen.det.assign(sol.y_det.begin(), sol.y_det.end());
        else
            frozen.mc.assign(sol.y_mc.begin(), sol.y_mc.end());

        if (delta <= fp.tol) {
            out.solution = std::move(sol);
            break;
        }
        if (it == fp.max_iter - 1) {
            std::ostringstream os;
            os << "solve_coupled_rbsde: no contraction within " << fp.max_iter
               << " iterates; last deltas:";
            for (double dv : out.trace.deltas) os << " " << dv;
            throw SolverError(os.str());
        }
    }

    out.trace.geometric = ratio_exceedances < 2;
    if (out.trace.iterates >= 3) {
        std::vector<double> ks, ld;
        for (std::size_t k = 0; k < out.trace.deltas.size(); ++k)
            if (out.trace.deltas[k] > 1e-300) {
                ks.push_back(static_cast<double>(k));
                ld.push_back(std::log(out.trace.deltas[k]));
            }
        if (ks.size() >= 2)
            out.trace.contraction_estimate = std::exp(fit_slope(ks, ld));
    }
    return out;
}

}  // namespace rbsde
