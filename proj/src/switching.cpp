#include "rbsde/switching.hpp"

#include "rbsde/detgrid.hpp"

#include <cmath>
#include <future>
#include <sstream>

namespace rbsde {

int SwitchingStrategy::mode_on_interval(int k) const {
    int mode = start_mode;
    for (const auto& s : switches) {
        if (s.node <= k) mode = s.mode;
        else break;
    }
    return mode;
}

int SwitchingStrategy::final_mode() const {
    return switches.empty() ? start_mode : switches.back().mode;
}

std::string SwitchingStrategy::digest(const TimeGrid& grid) const {
    std::ostringstream os;
    os << start_mode + 1 << "@t" << start_node;
    for (const auto& s : switches) os << " -> " << s.mode + 1 << "@t" << s.node;
    os << " -> T";
    (void)grid;
    return os.str();
}

void SwitchingStrategy::check_admissible(const TimeGrid& grid, int n_modes) const {
    if (start_mode < 0 || start_mode >= n_modes)
        throw StructuralError("strategy: start mode out of range");
    int prev_node = start_node;
    int prev_mode = start_mode;
    for (const auto& s : switches) {
        if (s.node < prev_node)
            throw StructuralError("strategy: switch nodes must be non-decreasing");
        if (s.node >= grid.steps)
            throw StructuralError("strategy: switch at or beyond the terminal node");
        if (s.mode < 0 || s.mode >= n_modes)
            throw StructuralError("strategy: mode out of range");
        if (s.mode == prev_mode)
            throw StructuralError("strategy: consecutive modes must differ");
        prev_node = s.node;
        prev_mode = s.mode;
    }
}

std::vector<double> cost_process(const SwitchingStrategy& a, const CostMatrix& k,
                                 const TimeGrid& grid) {
    a.check_admissible(grid, k.n);
    std::vector<double> A(grid.steps + 1, 0.0);
    int prev_mode = a.start_mode;
    for (const auto& s : a.switches) {
        const double c = k.k(prev_mode, s.mode);
        for (int node = s.node; node <= grid.steps; ++node) A[node] += c;
        prev_mode = s.mode;
    }
    return A;
}

double total_cost(const SwitchingStrategy& a, const CostMatrix& k) {
    double c = 0.0;
    int prev_mode = a.start_mode;
    for (const auto& s : a.switches) {
        c += k.k(prev_mode, s.mode);
        prev_mode = s.mode;
    }
    return c;
}

double solve_switched_bsde(const RbsdeProblem& problem, const SwitchingStrategy& a,
                           const Numerics& numerics,
                           const PathBundle* shared_paths,
                           const StatePaths* shared_states) {
    const TimeGrid grid = TimeGrid::uniform(0.0, problem.horizon, numerics.steps);
    a.check_admissible(grid, problem.n);

    if (problem.dynamics.deterministic())
        return solve_switched_ode(problem, a, grid);

    std::shared_ptr<const PathBundle> bundle;
    if (shared_paths)
        bundle = std::shared_ptr<const PathBundle>(shared_paths, [](const PathBundle*) {});
    else
        bundle = std::make_shared<PathBundle>(
            simulate_brownian(grid, numerics.num_paths, problem.d, numerics.seed));
    const int P = bundle->num_paths;
    const int d = problem.d;
    const int K = grid.steps;

    StatePaths local_states;
    if (!shared_states)
        local_states = simulate_functional_sde(problem.dynamics.sigma,
                                               problem.dynamics.x0, *bundle);
    const StatePaths& states = shared_states ? *shared_states : local_states;
    if (states.num_paths != P)
        throw StructuralError("solve_switched_bsde: state/path bundle mismatch");

    const std::vector<double> A = cost_process(a, problem.cost, grid);
    const double a_total = total_cost(a, problem.cost);

    // Shifted variable: U~ = U + A, continuous across switches.
    Eigen::VectorXd u(P);
    const int fm = a.final_mode();
    for (int p = 0; p < P; ++p)
        u(p) = problem.terminal.xi(states.x[K].row(p).transpose())(fm) + a_total;

    const double z_clip = numerics.effective_z_clip(problem);
    const double tol = numerics.effective_picard_tol(false);

    for (int k = K - 1; k >= 0; --k) {
        const double t = grid.nodes[k];
        const double dt = grid.dt(k);
        const int mode = a.mode_on_interval(k);
        const Eigen::MatrixXd& F = states.x[k];

        Eigen::VectorXd Eu(P);
        Eigen::MatrixXd zv(P, d);
        if (k == 0) {
            std::vector<double> tmp(u.data(), u.data() + P);
            Eu.setConstant(pairwise_mean(tmp));
            for (int c = 0; c < d; ++c) {
                std::vector<double> zt(P);
                for (int p = 0; p < P; ++p) zt[p] = u(p) * bundle->dw[k](p, c) / dt;
                zv.col(c).setConstant(pairwise_mean(zt));
            }
        } else {
            Eigen::MatrixXd targets(P, 1 + d);
            targets.col(0) = u;
            for (int c = 0; c < d; ++c)
                targets.col(1 + c) = u.cwiseProduct(bundle->dw[k].col(c)) / dt;
            const Eigen::MatrixXd fitted = fit_conditional_expectations(
                targets, F, numerics.basis, numerics.ridge_lambda);
            Eu = fitted.col(0);
            zv = fitted.rightCols(d);
        }

        Eigen::VectorXd z(d), xp(F.cols()), yrow(problem.n);
        for (int p = 0; p < P; ++p) {
            z = zv.row(p).transpose();
            const double nrm = z.norm();
            if (nrm > z_clip) z *= z_clip / nrm;
            xp = F.row(p).transpose();
            double fixed = problem.gen.f(t, z);
            if (problem.gen.has_linear_z())
                fixed += z.dot(problem.gen.linear_z(mode, t, xp));
            // Picard in the scalar value (driver reads U~ - A through h).
            double uk = Eu(p);
            for (int it = 0; it < numerics.picard_max; ++it) {
                yrow.setConstant(uk - A[k]);
                const double un =
                    Eu(p) + (problem.gen.h(mode, t, yrow, xp) + fixed) * dt;
                if (std::abs(un - uk) <= tol) {
                    uk = un;
                    break;
                }
                uk = un;
                if (it == numerics.picard_max - 1)
                    throw SolverError("solve_switched_bsde: Picard did not converge");
            }
            u(p) = uk;
        }
    }
    // U(t0) with costs at the start node still included: A(t0-) = 0.
    std::vector<double> tmp(u.data(), u.data() + P);
    return pairwise_mean(tmp);
}

namespace {

void enumerate_rec(const TimeGrid& grid, int n_modes, int max_switches,
                   SwitchingStrategy& cur, int next_node, std::size_t cap,
                   std::vector<SwitchingStrategy>& out) {
    if (out.size() > cap)
        throw StructuralError(
            "enumerate_strategies: cap exceeded; use the DP verification path");
    out.push_back(cur);
    if (cur.num_switches() >= max_switches) return;
    const int prev_mode = cur.final_mode();
    for (int node = next_node; node < grid.steps; ++node)
        for (int mode = 0; mode < n_modes; ++mode) {
            if (mode == prev_mode) continue;
            cur.switches.push_back({node, mode});
            enumerate_rec(grid, n_modes, max_switches, cur, node + 1, cap, out);
            cur.switches.pop_back();
        }
}

}  // namespace

std::vector<SwitchingStrategy> enumerate_strategies(const TimeGrid& grid, int n_modes,
                                                    int start_mode, int max_switches,
                                                    std::size_t cap) {
    // Predicted count: sum_s C(nodes, s) (n-1)^s with nodes = steps.
    double count = 0.0;
    double binom = 1.0;
    for (int s = 0; s <= max_switches; ++s) {
        count += binom * std::pow(static_cast<double>(n_modes - 1), s);
        binom *= static_cast<double>(grid.steps - s) / (s + 1);
        if (count > static_cast<double>(cap))
            throw StructuralError(
                "enumerate_strategies: cap exceeded; use the DP verification path");
    }

    std::vector<SwitchingStrategy> out;
    SwitchingStrategy cur;
    cur.start_mode = start_mode;
    enumerate_rec(grid, n_modes, max_switches, cur, 0, cap, out);
    return out;
}

RepresentationReport verify_representation(const RbsdeProblem& problem,
                                           const DiscreteSolution& solution,
                                           int start_mode,
                                           const VerificationConfig& vcfg,
                                           const Numerics& numerics) {
    RepresentationReport rep;
    rep.mode = start_mode;
    rep.y0 = solution.y0()(start_mode);

    if (vcfg.mode == VerificationMode::DynamicProgramming) {
        if (!problem.dynamics.deterministic())
            throw StructuralError(
                "verify_representation: DP oracle needs the deterministic regime");
        const auto v = dp_switching_value(problem, solution.grid);
        rep.oracle_min = v[0](start_mode);
        rep.gap = rep.y0 - rep.oracle_min;
        rep.lower_bound_ok = rep.gap <= vcfg.tol;
        return rep;
    }

    const auto strategies = enumerate_strategies(solution.grid, problem.n, start_mode,
                                                 vcfg.max_switches, vcfg.cap);
    std::vector<double> values(strategies.size());

    // One state simulation serves every strategy on the shared bundle.
    StatePaths states;
    const StatePaths* states_ptr = nullptr;
    if (solution.paths && !problem.dynamics.deterministic()) {
        states = simulate_functional_sde(problem.dynamics.sigma, problem.dynamics.x0,
                                         *solution.paths);
        states_ptr = &states;
    }

    auto eval_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t s = lo; s < hi; ++s)
            values[s] = solve_switched_bsde(problem, strategies[s], numerics,
                                            solution.paths.get(), states_ptr);
    };
    const int workers = std::max(1, vcfg.workers);
    if (workers == 1 || strategies.size() < 2) {
        eval_range(0, strategies.size());
    } else {
        std::vector<std::future<void>> futs;
        const std::size_t chunk = (strategies.size() + workers - 1) / workers;
        for (std::size_t lo = 0; lo < strategies.size(); lo += chunk)
            futs.push_back(std::async(std::launch::async, eval_range, lo,
                                      std::min(lo + chunk, strategies.size())));
        for (auto& f : futs) f.get();
    }

    rep.oracle_min = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        rep.table.push_back({strategies[s], values[s]});
        if (values[s] < rep.oracle_min) {
            rep.oracle_min = values[s];
            rep.minimizer = strategies[s];
        }
        // Part (i): one-sided inequality for every strategy, valid at any
        // enumeration resolution.
        const double viol = rep.y0 - values[s] - vcfg.tol;
        if (viol > 0.0) {
            rep.lower_bound_ok = false;
            rep.worst_lower_bound_violation =
                std::max(rep.worst_lower_bound_violation, viol);
        }
    }
    rep.gap = rep.y0 - rep.oracle_min;
    return rep;
}

namespace {

SwitchingStrategy scan_strategy(const RbsdeProblem& problem,
                                const std::function<double(int node, int mode)>& yval,
                                int steps, int start_mode,
                                const ExtractionConfig& cfg) {
    SwitchingStrategy a;
    a.start_mode = start_mode;
    int cur = start_mode;
    for (int k = 0; k < steps; ++k) {
        // Modes already occupied at this node; a chain revisiting one would
        // cycle, which strict triangle costs rule out.
        std::vector<bool> visited(problem.n, false);
        visited[cur] = true;
        bool again = true;
        while (again) {
            again = false;
            double obstacle = std::numeric_limits<double>::infinity();
            int arg = -1;
            for (int l = 0; l < problem.n; ++l) {
                if (l == cur || visited[l]) continue;
                const double v = yval(k, l) + problem.cost.k(cur, l);
                if (v < obstacle) {
                    obstacle = v;
                    arg = l;
                }
            }
            if (arg >= 0 && yval(k, cur) >= obstacle - cfg.boundary_tol) {
                a.switches.push_back({k, arg});
                cur = arg;
                visited[cur] = true;
                again = true;  // chained switch at the same node
                if (a.num_switches() > cfg.max_switch_count)
                    throw SolverError(
                        "extract_optimal_strategy: switch count exceeded the cap; "
                        "(A4) may fail or boundary_tol is too loose");
            }
        }
    }
    return a;
}

}  // namespace

ExtractionResult extract_optimal_strategy(const RbsdeProblem& problem,
                                          const DiscreteSolution& solution,
                                          int start_mode,
                                          const ExtractionConfig& cfg,
                                          const Numerics& numerics,
                                          const PathBundle* shared_paths) {
    ExtractionResult res;
    const int K = solution.grid.steps;
    const double y0 = solution.y0()(start_mode);

    ExtractionConfig ecfg = cfg;
    if (ecfg.boundary_tol <= 0.0) {
        // Auto rule: twice the certification slack plus twice the largest
        // observed one-step move of the (mean) value curve.
        double step_move = 0.0;
        Eigen::VectorXd prev = solution.y_at(0);
        for (int k = 1; k <= K; ++k) {
            const Eigen::VectorXd curv = solution.y_at(k);
            step_move = std::max(step_move, (curv - prev).cwiseAbs().maxCoeff());
            prev = curv;
        }
        ecfg.boundary_tol = 2.0 * solution.diagnostics.slack_sup + 2.0 * step_move;
    }

    if (solution.deterministic) {
        res.strategy = scan_strategy(
            problem,
            [&](int node, int mode) { return solution.y_det[node](mode); }, K,
            start_mode, ecfg);
        res.u_star0 = solve_switched_bsde(problem, res.strategy, numerics, shared_paths);
        res.certification_gap = y0 - res.u_star0;
        return res;
    }

    const int P = solution.y_mc[0].rows();
    res.per_path.resize(P);
    std::vector<double> vals(P);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(problem.d);
    for (int p = 0; p < P; ++p) {
        res.per_path[p] = scan_strategy(
            problem,
            [&](int node, int mode) { return solution.y_mc[node](p, mode); }, K,
            start_mode, ecfg);
        // Pathwise realized value: expectation of the switched BSDE with the
        // martingale term dropped (mean over paths recovers U^{a*}(0)).
        const auto& a = res.per_path[p];
        double v = problem.terminal
                       .xi(solution.states->x[K].row(p).transpose())(a.final_mode()) +
                   total_cost(a, problem.cost);
        for (int k = 0; k < K; ++k) {
            const int mode = a.mode_on_interval(k);
            const double t = solution.grid.nodes[k];
            const Eigen::VectorXd yrow = solution.y_mc[k].row(p).transpose();
            const Eigen::VectorXd zrow = solution.z_mc[k][mode].row(p).transpose();
            const Eigen::VectorXd xp = solution.states->x[k].row(p).transpose();
            double g = problem.gen.h(mode, t, yrow, xp) + problem.gen.f(t, zrow);
            if (problem.gen.has_linear_z())
                g += zrow.dot(problem.gen.linear_z(mode, t, xp));
            v += g * solution.grid.dt(k);
        }
        vals[p] = v;
    }
    res.strategy = res.per_path[0];
    res.u_star0 = pairwise_mean(vals);
    res.certification_gap = y0 - res.u_star0;
    return res;
}

}  // namespace rbsde
