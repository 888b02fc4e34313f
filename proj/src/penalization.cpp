#include "rbsde/penalization.hpp"

#include "rbsde/detgrid.hpp"

#include <cmath>
#include <sstream>

namespace rbsde {

namespace {

// Piecewise-linear solve of x + w * sum_l (x - c_l)^+ = rhs (w >= 0).
// Left side is strictly increasing, so the root is unique.
double implicit_penalty_solve(double rhs, const std::vector<double>& c, double w) {
    if (w == 0.0 || c.empty()) return rhs;
    std::vector<double> cs = c;
    std::sort(cs.begin(), cs.end());
    const int n = static_cast<int>(cs.size());
    // Try each linear piece: with j thresholds active,
    // x (1 + j w) - w * sum_{l<j} cs[l] = rhs.
    double csum = 0.0;
    for (int j = 0; j <= n; ++j) {
        const double x = (rhs + w * csum) / (1.0 + j * w);
        const double lo = (j == 0) ? -std::numeric_limits<double>::infinity() : cs[j - 1];
        const double hi = (j == n) ? std::numeric_limits<double>::infinity() : cs[j];
        if (x >= lo && x <= hi) return x;
        if (j < n) csum += cs[j];
    }
    // Fall back to the last piece (numerical ties).
    return (rhs + w * (csum)) / (1.0 + n * w);
}

double slack_of_row(const Eigen::VectorXd& y, const CostMatrix& k) {
    double s = 0.0;
    for (int i = 0; i < k.n; ++i)
        for (int j = 0; j < k.n; ++j)
            if (i != j) s = std::max(s, pos_part(y(i) - y(j) - k.k(i, j)));
    return s;
}

Eigen::VectorXd penalty_rate_row(const Eigen::VectorXd& y, const CostMatrix& k,
                                 double m) {
    Eigen::VectorXd r(k.n);
    for (int i = 0; i < k.n; ++i) {
        double pen = 0.0;
        for (int l = 0; l < k.n; ++l) pen += pos_part(y(i) - y(l) - k.k(i, l));
        r(i) = m * pen;
    }
    return r;
}

Eigen::VectorXd clip_z(const Eigen::VectorXd& z, double clip, bool& clipped) {
    const double nrm = z.norm();
    if (nrm <= clip) return z;
    clipped = true;
    return z * (clip / nrm);
}

DiscreteSolution wrap_det_solution(const RbsdeProblem& problem, DetSolution det,
                                   double m) {
    DiscreteSolution sol;
    sol.grid = det.grid;
    sol.n = problem.n;
    sol.deterministic = true;
    sol.y_det = std::move(det.y);
    sol.k_cum_det = std::move(det.k_cum);
    sol.diagnostics.m = m;
    sol.diagnostics.slack_sup = sol.slack_sup(problem.cost);
    sol.diagnostics.skorokhod_residual = skorokhod_residual(sol, problem.cost);
    return sol;
}

RbsdeProblem freeze_generator_det(const RbsdeProblem& problem,
                                  const FrozenValues& frozen,
                                  const TimeGrid& grid) {
    RbsdeProblem p = problem;
    auto base_h = problem.gen.h;
    auto nodes = grid.nodes;
    auto table = frozen.det;
    p.gen.h = [base_h, nodes, table](int i, double t, const Eigen::VectorXd&,
                                     const Eigen::VectorXd& x) {
        // Linear interpolation of the frozen value path in t.
        const auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
        std::size_t k1 = std::min<std::size_t>(
            std::max<std::ptrdiff_t>(1, it - nodes.begin()), nodes.size() - 1);
        const std::size_t k0 = k1 - 1;
        const double w =
            (t - nodes[k0]) / std::max(nodes[k1] - nodes[k0], 1e-300);
        const Eigen::VectorXd y =
            (1.0 - w) * table[k0] + w * table[k1];
        return base_h(i, t, y, x);
    };
    return p;
}

}  // namespace

Eigen::VectorXd DiscreteSolution::y_at(int node) const {
    if (deterministic) return y_det[node];
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> col(y_mc[node].rows());
        for (Eigen::Index p = 0; p < y_mc[node].rows(); ++p) col[p] = y_mc[node](p, i);
        v(i) = pairwise_mean(col);
    }
    return v;
}

Eigen::VectorXd DiscreteSolution::y0() const { return y_at(0); }

double DiscreteSolution::slack_sup(const CostMatrix& k) const {
    double s = 0.0;
    if (deterministic) {
        for (const auto& v : y_det) s = std::max(s, slack_of_row(v, k));
    } else {
        for (const auto& mat : y_mc)
            for (Eigen::Index p = 0; p < mat.rows(); ++p)
                s = std::max(s, slack_of_row(mat.row(p).transpose(), k));
    }
    return s;
}

double penalized_driver(const GeneratorSpec& gen, const CostMatrix& k, double m,
                        double t, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& z_i, int i,
                        const Eigen::VectorXd& x) {
    if (m < 0.0) throw StructuralError("penalized_driver: m must be >= 0");
    double v = gen.h(i, t, y, x) + gen.f(t, z_i);
    if (gen.has_linear_z()) v += z_i.dot(gen.linear_z(i, t, x));
    double pen = 0.0;
    for (int l = 0; l < k.n; ++l) pen += pos_part(y(i) - y(l) - k.k(i, l));
    return v - m * pen;
}

DiscreteSolution solve_penalized_bsde(const RbsdeProblem& problem, double m,
                                      const Numerics& numerics,
                                      std::shared_ptr<const PathBundle> shared_paths,
                                      const FrozenValues* frozen) {
    problem.check_shapes();
    const TimeGrid grid = TimeGrid::uniform(0.0, problem.horizon, numerics.steps);

    if (problem.dynamics.deterministic()) {
        DetGridConfig dcfg;
        dcfg.stiffness_cap = numerics.effective_stiffness_cap(true);
        if (frozen && !frozen->det.empty()) {
            const RbsdeProblem fp = freeze_generator_det(problem, *frozen, grid);
            return wrap_det_solution(problem, solve_penalized_ode(fp, m, grid, dcfg),
                                     m);
        }
        return wrap_det_solution(problem, solve_penalized_ode(problem, m, grid, dcfg),
                                 m);
    }

    const double dt_max = (grid.T - grid.t0) / grid.steps;
    if (m * dt_max > numerics.effective_stiffness_cap(false)) {
        std::ostringstream os;
        os << "solve_penalized_bsde: m*dt = " << m * dt_max << " exceeds cap "
           << numerics.effective_stiffness_cap(false);
        throw SolverError(os.str());
    }

    const int n = problem.n;
    const int d = problem.d;
    const int K = grid.steps;

    DiscreteSolution sol;
    sol.grid = grid;
    sol.n = n;
    sol.deterministic = false;
    sol.diagnostics.m = m;

    std::shared_ptr<const PathBundle> bundle;
    if (shared_paths) {
        bundle = std::move(shared_paths);
    } else {
        bundle = std::make_shared<PathBundle>(
            simulate_brownian(grid, numerics.num_paths, d, numerics.seed));
    }
    const int P = bundle->num_paths;

    auto states = std::make_shared<StatePaths>(simulate_functional_sde(
        problem.dynamics.sigma, problem.dynamics.x0, *bundle));
    sol.paths = bundle;
    sol.states = states;

    sol.y_mc.assign(K + 1, Eigen::MatrixXd::Zero(P, n));
    sol.z_mc.assign(K + 1, std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Zero(P, d)));

    for (int p = 0; p < P; ++p)
        sol.y_mc[K].row(p) = problem.terminal.xi(states->x[K].row(p).transpose()).transpose();

    const double z_clip = numerics.effective_z_clip(problem);
    const double tol = numerics.effective_picard_tol(false);
    long clip_hits = 0, clip_total = 0;

    for (int k = K - 1; k >= 0; --k) {
        const double t = grid.nodes[k];
        const double dt = grid.dt(k);
        const Eigen::MatrixXd& F = states->x[k];

        Eigen::MatrixXd Ey(P, n);
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd ynext = sol.y_mc[k + 1].col(i);
            if (k == 0) {
                // All features coincide at the start: conditional expectation
                // is the plain sample mean.
                std::vector<double> tmp(ynext.data(), ynext.data() + P);
                const double ymean = pairwise_mean(tmp);
                Ey.col(i).setConstant(ymean);
                for (int c = 0; c < d; ++c) {
                    // Centered target: the conditional mean acts as a control
                    // variate, cutting the O(1/dt) variance of the raw target.
                    std::vector<double> zt(P);
                    for (int p = 0; p < P; ++p)
                        zt[p] = (ynext(p) - ymean) * bundle->dw[k](p, c) / dt;
                    sol.z_mc[k][i].col(c).setConstant(pairwise_mean(zt));
                }
            } else {
                const FittedRegression yfit = regress_conditional_expectation(
                    ynext, F, numerics.basis, numerics.ridge_lambda);
                Ey.col(i) = yfit.evaluate_all(F);
                for (int c = 0; c < d; ++c) {
                    // Same centering as at the start node.
                    Eigen::VectorXd zt(P);
                    for (int p = 0; p < P; ++p)
                        zt(p) = (ynext(p) - Ey(p, i)) * bundle->dw[k](p, c) / dt;
                    const FittedRegression zfit = regress_conditional_expectation(
                        zt, F, numerics.basis, numerics.ridge_lambda);
                    sol.z_mc[k][i].col(c) = zfit.evaluate_all(F);
                }
            }
        }

        // Driver contribution that stays fixed across Picard iterations.
        Eigen::MatrixXd fixed(P, n);
        for (int p = 0; p < P; ++p) {
            const Eigen::VectorXd xp = F.row(p).transpose();
            for (int i = 0; i < n; ++i) {
                bool clipped = false;
                const Eigen::VectorXd z =
                    clip_z(sol.z_mc[k][i].row(p).transpose(), z_clip, clipped);
                ++clip_total;
                if (clipped) ++clip_hits;
                double v = problem.gen.f(t, z);
                if (problem.gen.has_linear_z())
                    v += z.dot(problem.gen.linear_z(i, t, xp));
                fixed(p, i) = v;
            }
        }

        // Picard in Y with the penalty handled implicitly per mode
        // (Gauss-Seidel over modes within each path).
        Eigen::MatrixXd Y = Ey;
        Eigen::MatrixXd Yprev = Y;
        double prev_resid = std::numeric_limits<double>::infinity();
        int iter = 0;
        for (; iter < numerics.picard_max; ++iter) {
            double resid = 0.0;
            for (int p = 0; p < P; ++p) {
                Eigen::VectorXd yrow = Y.row(p).transpose();
                const Eigen::VectorXd xp = F.row(p).transpose();
                const Eigen::VectorXd yh =
                    frozen && !frozen->mc.empty() ? frozen->mc[k].row(p).transpose()
                                                  : yrow;
                for (int i = 0; i < n; ++i) {
                    const double hval = problem.gen.h(
                        i, t, frozen && !frozen->mc.empty() ? yh : yrow, xp);
                    const double rhs = Ey(p, i) + (hval + fixed(p, i)) * dt;
                    std::vector<double> c;
                    c.reserve(n - 1);
                    for (int l = 0; l < n; ++l)
                        if (l != i) c.push_back(yrow(l) + problem.cost.k(i, l));
                    const double xnew = implicit_penalty_solve(rhs, c, m * dt);
                    resid = std::max(resid, std::abs(xnew - yrow(i)));
                    yrow(i) = xnew;
                }
                Y.row(p) = yrow.transpose();
            }
            if (resid <= tol) {
                ++iter;
                break;
            }
            if (resid > prev_resid) {
                // Oscillation: damp towards the previous iterate.
                Y = 0.5 * (Y + Yprev);
            }
            Yprev = Y;
            prev_resid = resid;
            if (iter == numerics.picard_max - 1) {
                std::ostringstream os;
                os << "solve_penalized_bsde: Picard did not converge at node " << k
                   << " (residual " << resid << ")";
                throw SolverError(os.str());
            }
        }
        sol.diagnostics.picard_iters_max =
            std::max(sol.diagnostics.picard_iters_max, iter);
        sol.y_mc[k] = Y;
    }
    sol.z_mc[K] = sol.z_mc[K - 1];  // no terminal regression target

    // Forward K accumulation: trapezoid, left endpoint on the last interval.
    sol.k_cum_mc.assign(K + 1, Eigen::MatrixXd::Zero(P, n));
    for (int p = 0; p < P; ++p) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd r_prev =
            penalty_rate_row(sol.y_mc[0].row(p).transpose(), problem.cost, m);
        for (int k = 1; k <= K; ++k) {
            const Eigen::VectorXd r_cur =
                penalty_rate_row(sol.y_mc[k].row(p).transpose(), problem.cost, m);
            if (k == K)
                acc += grid.dt(k - 1) * r_prev;
            else
                acc += 0.5 * grid.dt(k - 1) * (r_prev + r_cur);
            sol.k_cum_mc[k].row(p) = acc.transpose();
            r_prev = r_cur;
        }
    }

    sol.diagnostics.slack_sup = sol.slack_sup(problem.cost);
    sol.diagnostics.clip_activation_rate =
        clip_total > 0 ? static_cast<double>(clip_hits) / clip_total : 0.0;
    sol.diagnostics.skorokhod_residual = skorokhod_residual(sol, problem.cost);

    // Discrete BMO echo: remaining quadratic variation, path-averaged, max
    // over nodes. Reported only.
    {
        std::vector<double> rem(P, 0.0);
        double worst = 0.0;
        for (int k = K - 1; k >= 0; --k) {
            for (int p = 0; p < P; ++p) {
                double q = 0.0;
                for (int i = 0; i < n; ++i)
                    q += sol.z_mc[k][i].row(p).squaredNorm();
                rem[p] += q * grid.dt(k);
            }
            worst = std::max(worst, pairwise_mean(rem));
        }
        sol.diagnostics.bmo_diagnostic = worst;
    }
    return sol;
}

PenaltySweepReport penalty_sweep(const RbsdeProblem& problem,
                                 const std::vector<double>& m_values,
                                 const Numerics& numerics) {
    for (std::size_t i = 1; i < m_values.size(); ++i)
        if (!(m_values[i] > m_values[i - 1]))
            throw StructuralError("penalty_sweep: m_values must be strictly increasing");

    PenaltySweepReport rep;
    const bool det = problem.dynamics.deterministic();

    // Common random numbers across the whole sweep.
    std::shared_ptr<PathBundle> bundle;
    if (!det) {
        const TimeGrid grid = TimeGrid::uniform(0.0, problem.horizon, numerics.steps);
        bundle = std::make_shared<PathBundle>(
            simulate_brownian(grid, numerics.num_paths, problem.d, numerics.seed));
    }

    DiscreteSolution prev;
    bool have_prev = false;
    for (double m : m_values) {
        DiscreteSolution sol;
        try {
            sol = solve_penalized_bsde(problem, m, numerics, bundle);
        } catch (const std::exception& e) {
            rep.complete = false;
            rep.failure = e.what();
            break;
        }
        rep.m_values.push_back(m);
        rep.slack_sups.push_back(sol.diagnostics.slack_sup);
        rep.y0s.push_back(sol.y0());
        double sup = 0.0;
        if (det) {
            for (const auto& v : sol.y_det)
                sup = std::max(sup, v.lpNorm<Eigen::Infinity>());
        } else {
            for (const auto& mat : sol.y_mc)
                sup = std::max(sup, mat.cwiseAbs().maxCoeff());
        }
        rep.y_sup_norms.push_back(sup);

        if (have_prev) {
            // Monotone family: Y^m >= Y^{m'} for m < m'.
            if (det) {
                for (std::size_t k = 0; k < sol.y_det.size(); ++k) {
                    const Eigen::VectorXd diff = prev.y_det[k] - sol.y_det[k];
                    const double worst = diff.minCoeff();
                    if (worst < -1e-9) {
                        ++rep.monotonicity_violations;
                        rep.max_violation_magnitude =
                            std::max(rep.max_violation_magnitude, -worst);
                    }
                }
            } else {
                const int P = prev.y_mc[0].rows();
                for (std::size_t k = 0; k < sol.y_mc.size(); ++k)
                    for (int i = 0; i < problem.n; ++i) {
                        std::vector<double> diff(P);
                        for (int p = 0; p < P; ++p)
                            diff[p] = prev.y_mc[k](p, i) - sol.y_mc[k](p, i);
                        const MeanSe ms = mean_and_se(diff);
                        if (ms.mean < -2.0 * ms.se - 1e-12) {
                            ++rep.monotonicity_violations;
                            rep.max_violation_magnitude =
                                std::max(rep.max_violation_magnitude, -ms.mean);
                        }
                    }
            }
        }
        prev = std::move(sol);
        have_prev = true;
    }

    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < rep.m_values.size(); ++i)
        if (rep.slack_sups[i] > 1e-15) {
            lx.push_back(std::log(rep.m_values[i]));
            ly.push_back(std::log(rep.slack_sups[i]));
        }
    if (lx.size() >= 2) {
        rep.slope = fit_slope(lx, ly);
        rep.converged = rep.slope <= -0.9;
    } else {
        rep.slope = 0.0;
        rep.converged = true;  // slack already (numerically) zero
    }
    return rep;
}

std::vector<Eigen::VectorXd> extract_increasing_process(const DiscreteSolution& sol,
                                                        const RbsdeProblem& problem,
                                                        double m) {
    const int K = sol.grid.steps;
    std::vector<Eigen::VectorXd> k_cum(K + 1, Eigen::VectorXd::Zero(problem.n));
    auto rate_at = [&](int k) {
        if (sol.deterministic)
            return penalty_rate_row(sol.y_det[k], problem.cost, m);
        const int P = sol.y_mc[k].rows();
        Eigen::VectorXd r = Eigen::VectorXd::Zero(problem.n);
        for (int p = 0; p < P; ++p)
            r += penalty_rate_row(sol.y_mc[k].row(p).transpose(), problem.cost, m);
        return Eigen::VectorXd(r / P);
    };
    Eigen::VectorXd r_prev = rate_at(0);
    for (int k = 1; k <= K; ++k) {
        const Eigen::VectorXd r_cur = rate_at(k);
        if (k == K)
            k_cum[k] = k_cum[k - 1] + sol.grid.dt(k - 1) * r_prev;
        else
            k_cum[k] = k_cum[k - 1] + 0.5 * sol.grid.dt(k - 1) * (r_prev + r_cur);
        r_prev = r_cur;
    }
    return k_cum;
}

Eigen::VectorXd skorokhod_residual(const DiscreteSolution& sol, const CostMatrix& cm) {
    const int n = cm.n;
    const int K = sol.grid.steps;
    Eigen::VectorXd res = Eigen::VectorXd::Zero(n);
    if (n < 2) return res;  // no obstacle, K identically zero

    auto obstacle_gap = [&](const Eigen::VectorXd& y, int i) {
        double obs = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (j != i) obs = std::min(obs, y(j) + cm.k(i, j));
        return y(i) - obs;
    };

    if (sol.deterministic) {
        if (sol.k_cum_det.empty()) return res;
        for (int k = 0; k < K; ++k)
            for (int i = 0; i < n; ++i)
                res(i) += obstacle_gap(sol.y_det[k], i) *
                          (sol.k_cum_det[k + 1](i) - sol.k_cum_det[k](i));
    } else {
        if (sol.k_cum_mc.empty()) return res;
        const int P = sol.y_mc[0].rows();
        for (int i = 0; i < n; ++i) {
            std::vector<double> per_path(P, 0.0);
            for (int p = 0; p < P; ++p)
                for (int k = 0; k < K; ++k)
                    per_path[p] += obstacle_gap(sol.y_mc[k].row(p).transpose(), i) *
                                   (sol.k_cum_mc[k + 1](p, i) - sol.k_cum_mc[k](p, i));
            res(i) = pairwise_mean(per_path);
        }
    }
    return res;
}

DiscreteSolution solve_rbsde(const RbsdeProblem& problem, const Numerics& numerics,
                             const StoppingRule& stopping) {
    const ValidationReport a2 =
        validate_cost_matrix(problem.cost, AssumptionLevel::A3);
    if (!a2.passed) {
        std::string msg = "solve_rbsde: cost matrix fails (A2)/(A3):";
        for (const auto& v : a2.violations) msg += " " + v.describe();
        throw StructuralError(msg);
    }

    std::shared_ptr<PathBundle> bundle;
    if (!problem.dynamics.deterministic()) {
        const TimeGrid grid = TimeGrid::uniform(0.0, problem.horizon, numerics.steps);
        bundle = std::make_shared<PathBundle>(
            simulate_brownian(grid, numerics.num_paths, problem.d, numerics.seed));
    }

    double m = numerics.m_start;
    std::vector<std::pair<double, double>> history;  // (m, slack)
    while (true) {
        DiscreteSolution sol = solve_penalized_bsde(problem, m, numerics, bundle);
        history.emplace_back(m, sol.diagnostics.slack_sup);
        if (sol.diagnostics.slack_sup <= stopping.slack_tol) return sol;
        if (2.0 * m > stopping.m_max) {
            std::ostringstream os;
            os << "solve_rbsde: slack " << sol.diagnostics.slack_sup
               << " still above tol " << stopping.slack_tol << " at m_max; sweep:";
            for (auto& [mv, sv] : history) os << " (m=" << mv << ", slack=" << sv << ")";
            throw SolverError(os.str());
        }
        m *= 2.0;
    }
}

}  // namespace rbsde
