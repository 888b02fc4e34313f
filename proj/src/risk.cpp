#include "rbsde/risk.hpp"

#include "rbsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rbsde {

void RiskProblem::check() const {
    if (horizon <= 0.0 || n < 1 || d < 1)
        throw StructuralError("risk problem: bad dimensions");
    if (!l) throw StructuralError("risk problem: running cost l missing");
    if (!xi) throw StructuralError("risk problem: terminal condition missing");
    if (!deterministic && !sigma)
        throw StructuralError("risk problem: sigma missing");
    if (l_bound < 0.0 || b_bound < 0.0)
        throw StructuralError("risk problem: declared bounds must be non-negative");
    if (b && !(b_bound > 0.0))
        throw StructuralError("risk problem: b present but its bound is missing");
    if (cost.n != n) throw StructuralError("risk problem: cost matrix mismatch");
}

GeneratorSpec build_risk_generator(const RiskProblem& rp) {
    rp.check();
    GeneratorSpec gen;
    gen.n = rp.n;
    // |l_i| <= l_bound and |1/2 z^2| <= 1/2 (1 + |z|^2).
    gen.gamma = std::max(rp.l_bound, 0.5);
    gen.coupled = false;
    gen.h = [l = rp.l](int i, double t, const Eigen::VectorXd&,
                       const Eigen::VectorXd& x) { return l(i, t, x); };
    gen.f = [](double, const Eigen::VectorXd& z) { return 0.5 * z.squaredNorm(); };
    if (rp.b)
        gen.linear_z = [b = rp.b](int i, double t, const Eigen::VectorXd& x) {
            return b(i, t, x);
        };
    return gen;
}

RbsdeProblem build_risk_rbsde(const RiskProblem& rp) {
    RbsdeProblem p;
    p.horizon = rp.horizon;
    p.n = rp.n;
    p.d = rp.d;
    p.cost = rp.cost;
    p.gen = build_risk_generator(rp);
    p.terminal.xi = rp.xi;
    p.terminal.bound = rp.xi_bound;
    if (rp.deterministic) {
        p.dynamics.kind = Dynamics::Kind::Deterministic;
    } else {
        p.dynamics.kind = Dynamics::Kind::Markovian;
        p.dynamics.x0 = rp.x0;
        p.dynamics.sigma = rp.sigma;
    }
    return p;
}

namespace {

CostEstimate weighted_mean(const std::vector<double>& vals) {
    const MeanSe ms = mean_and_se(vals);
    return {ms.mean, ms.se};
}

double pathwise_payoff_log(const RiskProblem& rp, const SwitchingStrategy& a,
                           const StatePaths& states, const PathBundle& paths, int p) {
    const int K = paths.grid.steps;
    double lint = 0.0, logw = 0.0;
    for (int k = 0; k < K; ++k) {
        const int mode = a.mode_on_interval(k);
        const double t = paths.grid.nodes[k];
        const double dt = paths.grid.dt(k);
        const Eigen::VectorXd xp = states.x[k].row(p).transpose();
        lint += rp.l(mode, t, xp) * dt;
        if (rp.b) {
            const Eigen::VectorXd bv = rp.b(mode, t, xp);
            logw += bv.dot(paths.dw[k].row(p).transpose()) -
                    0.5 * bv.squaredNorm() * dt;
        }
    }
    const double xi = rp.xi(states.x[K].row(p).transpose())(a.final_mode());
    return logw + lint + total_cost(a, rp.cost) + xi;
}

}  // namespace

CostEstimate estimate_cost(const RiskProblem& rp, const SwitchingStrategy& a,
                           const PathBundle& paths) {
    rp.check();
    a.check_admissible(paths.grid, rp.n);
    const StatePaths states =
        rp.deterministic
            ? StatePaths{}
            : simulate_functional_sde(rp.sigma, rp.x0, paths);

    if (rp.deterministic) {
        // Integrand is path-independent: the expectation is exact.
        double lint = 0.0;
        const Eigen::VectorXd x_empty;
        for (int k = 0; k < paths.grid.steps; ++k)
            lint += rp.l(a.mode_on_interval(k), paths.grid.nodes[k], x_empty) *
                    paths.grid.dt(k);
        const double xi = rp.xi(x_empty)(a.final_mode());
        return {std::exp(lint + total_cost(a, rp.cost) + xi), 0.0};
    }

    std::vector<double> vals(paths.num_paths);
    for (int p = 0; p < paths.num_paths; ++p)
        vals[p] = std::exp(pathwise_payoff_log(rp, a, states, paths, p));
    return weighted_mean(vals);
}

CostEstimate estimate_cost_pathwise(const RiskProblem& rp,
                                    const std::vector<SwitchingStrategy>& per_path,
                                    const PathBundle& paths) {
    rp.check();
    if (static_cast<int>(per_path.size()) != paths.num_paths)
        throw StructuralError("estimate_cost_pathwise: one strategy per path required");
    const StatePaths states = simulate_functional_sde(rp.sigma, rp.x0, paths);
    std::vector<double> vals(paths.num_paths);
    for (int p = 0; p < paths.num_paths; ++p)
        vals[p] = std::exp(pathwise_payoff_log(rp, per_path[p], states, paths, p));
    return weighted_mean(vals);
}

namespace {

// Per-mode prefix sums over steps of l dt and the log-weight increment, for
// fast evaluation of many piecewise-constant mode schedules.
struct RiskTables {
    // prefix[i][k][p]: sum over steps j < k.
    std::vector<std::vector<std::vector<double>>> l_prefix;
    std::vector<std::vector<std::vector<double>>> w_prefix;
    Eigen::MatrixXd xi_T;  // num_paths x n
    int num_paths = 0;
    int steps = 0;

    static RiskTables build(const RiskProblem& rp, const StatePaths& states,
                            const PathBundle& paths) {
        RiskTables t;
        const int K = paths.grid.steps;
        const int P = paths.num_paths;
        t.num_paths = P;
        t.steps = K;
        t.l_prefix.assign(rp.n, std::vector<std::vector<double>>(
                                    K + 1, std::vector<double>(P, 0.0)));
        t.w_prefix = t.l_prefix;
        for (int i = 0; i < rp.n; ++i)
            for (int k = 0; k < K; ++k) {
                const double tk = paths.grid.nodes[k];
                const double dt = paths.grid.dt(k);
                auto& lp = t.l_prefix[i];
                auto& wp = t.w_prefix[i];
                for (int p = 0; p < P; ++p) {
                    const Eigen::VectorXd xp = states.x[k].row(p).transpose();
                    lp[k + 1][p] = lp[k][p] + rp.l(i, tk, xp) * dt;
                    double dwlog = 0.0;
                    if (rp.b) {
                        const Eigen::VectorXd bv = rp.b(i, tk, xp);
                        dwlog = bv.dot(paths.dw[k].row(p).transpose()) -
                                0.5 * bv.squaredNorm() * dt;
                    }
                    wp[k + 1][p] = wp[k][p] + dwlog;
                }
            }
        t.xi_T.resize(P, rp.n);
        for (int p = 0; p < P; ++p)
            t.xi_T.row(p) = rp.xi(states.x[K].row(p).transpose()).transpose();
        return t;
    }

    CostEstimate estimate(const RiskProblem& rp, const SwitchingStrategy& a) const {
        // Segment decomposition of the mode schedule.
        std::vector<std::pair<std::pair<int, int>, int>> segs;  // ([k0,k1), mode)
        int mode = a.start_mode;
        int k0 = 0;
        for (const auto& s : a.switches) {
            if (s.node > k0) segs.push_back({{k0, s.node}, mode});
            k0 = s.node;
            mode = s.mode;
        }
        segs.push_back({{k0, steps}, mode});

        const double a_cost = total_cost(a, rp.cost);
        std::vector<double> vals(num_paths);
        for (int p = 0; p < num_paths; ++p) {
            double lint = 0.0, logw = 0.0;
            for (const auto& sg : segs) {
                lint += l_prefix[sg.second][sg.first.second][p] -
                        l_prefix[sg.second][sg.first.first][p];
                logw += w_prefix[sg.second][sg.first.second][p] -
                        w_prefix[sg.second][sg.first.first][p];
            }
            vals[p] = std::exp(logw + lint + a_cost + xi_T(p, a.final_mode()));
        }
        return weighted_mean(vals);
    }
};

std::vector<SwitchingStrategy> strategy_family(const RiskProblem& rp,
                                               const TimeGrid& grid,
                                               const RiskVerificationConfig& cfg) {
    // Thinned candidate nodes for the exhaustive part.
    std::vector<int> cand;
    const int target = 10;
    for (int j = 0; j < std::min(target, grid.steps); ++j)
        cand.push_back(j * grid.steps / std::min(target, grid.steps));

    std::vector<SwitchingStrategy> family;
    std::function<void(SwitchingStrategy&, std::size_t)> rec =
        [&](SwitchingStrategy& cur, std::size_t next) {
            if (family.size() > cfg.cap)
                throw StructuralError("strategy_family: cap exceeded");
            family.push_back(cur);
            if (cur.num_switches() >= cfg.max_switches) return;
            for (std::size_t ci = next; ci < cand.size(); ++ci)
                for (int mode = 0; mode < rp.n; ++mode) {
                    if (mode == cur.final_mode()) continue;
                    cur.switches.push_back({cand[ci], mode});
                    rec(cur, ci + 1);
                    cur.switches.pop_back();
                }
        };
    SwitchingStrategy base;
    base.start_mode = cfg.start_mode;
    rec(base, 0);

    // Random admissible strategies on the full grid.
    CounterRng rng(cfg.strategy_seed);
    for (int r = 0; r < cfg.random_strategies; ++r) {
        SwitchingStrategy a;
        a.start_mode = cfg.start_mode;
        const int ns = 1 + static_cast<int>(rng.uniform(r, 0) * 3.0);
        std::vector<int> nodes;
        for (int s = 0; s < ns; ++s)
            nodes.push_back(std::min(
                grid.steps - 1,
                static_cast<int>(rng.uniform(r, 1 + s) * grid.steps)));
        std::sort(nodes.begin(), nodes.end());
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
        int prev = a.start_mode;
        for (std::size_t s = 0; s < nodes.size(); ++s) {
            if (rp.n < 2) break;
            int mode = static_cast<int>(rng.uniform(r, 100 + s) * (rp.n - 1));
            if (mode >= prev) ++mode;
            a.switches.push_back({nodes[s], mode});
            prev = mode;
        }
        family.push_back(a);
    }
    return family;
}

}  // namespace

RiskReport verify_risk_optimality(const RiskProblem& rp, const Numerics& numerics,
                                  const RiskVerificationConfig& cfg) {
    rp.check();
    if (!validate_cost_matrix(rp.cost, AssumptionLevel::A4).passed)
        throw StructuralError("verify_risk_optimality: cost matrix must satisfy (A4)");

    const RbsdeProblem problem = build_risk_rbsde(rp);
    const TimeGrid grid = TimeGrid::uniform(0.0, rp.horizon, numerics.steps);

    RiskReport rep;
    rep.start_mode = cfg.start_mode;

    DiscreteSolution sol = solve_rbsde(problem, numerics, cfg.stopping);
    rep.y0 = sol.y0()(cfg.start_mode);

    const ExtractionResult ext =
        extract_optimal_strategy(problem, sol, cfg.start_mode, cfg.extraction,
                                 numerics, sol.paths.get());

    PathBundle dummy;
    dummy.grid = grid;
    dummy.num_paths = 1;
    dummy.d = rp.d;

    if (rp.deterministic) {
        const CostEstimate j_star = estimate_cost(rp, ext.strategy, dummy);
        rep.log_j_star = std::log(j_star.estimate);
        rep.se = 0.0;
    } else {
        const CostEstimate j_star = estimate_cost_pathwise(rp, ext.per_path, *sol.paths);
        rep.log_j_star = std::log(j_star.estimate);
        rep.se = j_star.se;
    }
    rep.gap = rep.log_j_star - rep.y0;

    // Lower-bound family over fixed strategies.
    const auto family = strategy_family(rp, grid, cfg);
    rep.strategies_tested = static_cast<int>(family.size());

    const double det_tol = 1e-3;  // penalization + grid allowance
    if (rp.deterministic) {
        for (const auto& a : family) {
            const CostEstimate ce = estimate_cost(rp, a, dummy);
            const double log_j = std::log(ce.estimate);
            rep.per_strategy.push_back({a, log_j, 0.0});
            if (log_j < rep.y0 - det_tol) ++rep.lower_bound_violations;
        }
    } else {
        const int fam_paths = std::min(numerics.num_paths, 20000);
        const PathBundle fb =
            simulate_brownian(grid, fam_paths, rp.d, numerics.seed + 1);
        const StatePaths fs = simulate_functional_sde(rp.sigma, rp.x0, fb);
        const RiskTables tables = RiskTables::build(rp, fs, fb);
        for (const auto& a : family) {
            const CostEstimate ce = tables.estimate(rp, a);
            const double log_j = std::log(ce.estimate);
            const double se_log = ce.se / ce.estimate;
            rep.per_strategy.push_back({a, log_j, ce.se});
            if (log_j < rep.y0 - 3.0 * se_log) ++rep.lower_bound_violations;
        }
    }
    return rep;
}

}  // namespace rbsde
