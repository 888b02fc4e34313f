#include "rbsde/model.hpp"

#include "rbsde/rng.hpp"

#include <cmath>
#include <sstream>

namespace rbsde {

std::string CostViolation::describe() const {
    std::ostringstream os;
    switch (level) {
        case AssumptionLevel::A2:
            if (i == j)
                os << "(A2) k[" << i + 1 << "][" << i + 1 << "] = " << lhs
                   << " != 0";
            else
                os << "(A2) k[" << i + 1 << "][" << j + 1 << "] = " << lhs
                   << " <= 0";
            break;
        case AssumptionLevel::A3:
            os << "(A3) k[" << i + 1 << "][" << j + 1 << "] + k[" << j + 1 << "]["
               << l + 1 << "] = " << lhs << " < k[" << i + 1 << "][" << l + 1
               << "] = " << rhs;
            break;
        case AssumptionLevel::A4:
            os << "(A4) k[" << i + 1 << "][" << j + 1 << "] + k[" << j + 1 << "]["
               << l + 1 << "] = " << lhs << " <= k[" << i + 1 << "][" << l + 1
               << "] = " << rhs;
            break;
    }
    return os.str();
}

ValidationReport validate_cost_matrix(const CostMatrix& cm, AssumptionLevel level) {
    if (cm.k.rows() != cm.k.cols() || cm.k.rows() != cm.n)
        throw StructuralError("validate_cost_matrix: cost matrix must be square n x n");
    ValidationReport rep;
    const int n = cm.n;
    const auto& k = cm.k;

    for (int i = 0; i < n; ++i) {
        if (k(i, i) != 0.0)
            rep.violations.push_back({AssumptionLevel::A2, i, i, -1, k(i, i), 0.0});
        for (int j = 0; j < n; ++j)
            if (i != j && !(k(i, j) > 0.0))
                rep.violations.push_back({AssumptionLevel::A2, i, j, -1, k(i, j), 0.0});
    }

    if (level == AssumptionLevel::A3 || level == AssumptionLevel::A4) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int l = 0; l < n; ++l) {
                    const double lhs = k(i, j) + k(j, l);
                    const double rhs = k(i, l);
                    if (lhs < rhs)
                        rep.violations.push_back({AssumptionLevel::A3, i, j, l, lhs, rhs});
                    // Strictness only over i != j, j != l; with a coinciding
                    // index the strict form is vacuously false.
                    else if (level == AssumptionLevel::A4 && i != j && j != l &&
                             lhs <= rhs)
                        rep.violations.push_back({AssumptionLevel::A4, i, j, l, lhs, rhs});
                }
    }

    rep.passed = rep.violations.empty();
    return rep;
}

DomainStatus check_domain_membership(const Eigen::VectorXd& y, const CostMatrix& cm,
                                     double tol) {
    if (y.size() != cm.n)
        throw StructuralError("check_domain_membership: dimension mismatch");
    DomainStatus st;
    std::vector<std::pair<int, int>> active, violated;
    for (int i = 0; i < cm.n; ++i)
        for (int j = 0; j < cm.n; ++j) {
            if (i == j) continue;
            const double slack = y(i) - y(j) - cm.k(i, j);
            if (std::abs(slack) <= tol)
                active.emplace_back(i, j);
            else if (slack > tol)
                violated.emplace_back(i, j);
        }
    if (!violated.empty()) {
        st.position = DomainPosition::Outside;
        st.pairs = std::move(violated);
    } else if (!active.empty()) {
        st.position = DomainPosition::Boundary;
        st.pairs = std::move(active);
    }
    return st;
}

Eigen::VectorXd project_to_domain(const Eigen::VectorXd& y, const CostMatrix& cm,
                                  double tol, int max_iter) {
    if (y.size() != cm.n)
        throw StructuralError("project_to_domain: dimension mismatch");
    const int n = cm.n;

    // Half-spaces y_i - y_j <= k_{i,j}; Dykstra keeps one correction per constraint.
    struct HalfSpace {
        int i, j;
        double k;
    };
    std::vector<HalfSpace> hs;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) hs.push_back({i, j, cm.k(i, j)});

    Eigen::VectorXd x = y;
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(static_cast<int>(hs.size()), n);

    auto max_residual = [&](const Eigen::VectorXd& v) {
        double r = 0.0;
        for (const auto& h : hs) r = std::max(r, v(h.i) - v(h.j) - h.k);
        return r;
    };

    if (max_residual(x) <= tol) return x;

    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t c = 0; c < hs.size(); ++c) {
            const auto& h = hs[c];
            Eigen::VectorXd v = x + corr.row(static_cast<int>(c)).transpose();
            const double viol = v(h.i) - v(h.j) - h.k;
            Eigen::VectorXd projected = v;
            if (viol > 0.0) {
                // Euclidean projection onto {v_i - v_j <= k}: move each of the
                // two coordinates by viol/2.
                projected(h.i) -= 0.5 * viol;
                projected(h.j) += 0.5 * viol;
            }
            corr.row(static_cast<int>(c)) = (v - projected).transpose();
            x = projected;
        }
        if (max_residual(x) <= tol) return x;
    }
    std::ostringstream os;
    os << "project_to_domain: no convergence in " << max_iter
       << " sweeps, residual " << max_residual(x);
    throw SolverError(os.str());
}

GeneratorCheckReport check_generator(const GeneratorSpec& gen,
                                     const GeneratorCheckConfig& cfg) {
    GeneratorCheckReport rep;
    CounterRng rng(cfg.seed);
    const int yd = gen.coupled ? gen.n : 1;
    const Eigen::VectorXd x_empty;
    // Slightly loose comparison: sampling can land exactly on the bound.
    const double slop = 1e-9;

    for (int s = 0; s < cfg.samples; ++s) {
        const double t = rng.uniform(s, 0) ;
        Eigen::VectorXd ys(gen.n), ys2(gen.n);
        for (int c = 0; c < gen.n; ++c) {
            ys(c) = (2.0 * rng.uniform(s, 10 + c) - 1.0) * cfg.y_range;
            ys2(c) = (2.0 * rng.uniform(s, 40 + c) - 1.0) * cfg.y_range;
        }
        if (!gen.coupled) {
            // Diagonal case: h_i reads only its own component; vary the rest to
            // the same values so the Lipschitz check is on y_i alone.
            for (int c = 0; c < gen.n; ++c) ys2(c) = ys(c);
            ys2(s % gen.n) = (2.0 * rng.uniform(s, 41) - 1.0) * cfg.y_range;
        }
        Eigen::VectorXd z(cfg.d), z2(cfg.d);
        for (int c = 0; c < cfg.d; ++c) {
            z(c) = (2.0 * rng.uniform(s, 70 + c) - 1.0) * cfg.z_range;
            z2(c) = (2.0 * rng.uniform(s, 90 + c) - 1.0) * cfg.z_range;
        }

        for (int i = 0; i < gen.n; ++i) {
            const double hv = gen.h(i, t, ys, x_empty);
            const double hv2 = gen.h(i, t, ys2, x_empty);
            const double ynorm = gen.coupled ? ys.norm() : std::abs(ys(i));
            double growth_bound = gen.gamma * (1.0 + ynorm);
            if (std::abs(hv) > growth_bound + slop) ++rep.growth_violations_h;
            rep.worst_ratio =
                std::max(rep.worst_ratio, std::abs(hv) / std::max(growth_bound, 1e-300));
            const double ydiff =
                gen.coupled ? (ys - ys2).norm() : std::abs(ys(i) - ys2(i));
            const double lip_bound = gen.gamma * ydiff;
            if (std::abs(hv - hv2) > lip_bound + slop) ++rep.lipschitz_violations_h;
        }

        const double fv = gen.f(t, z);
        const double fv2 = gen.f(t, z2);
        if (std::abs(fv) > gen.gamma * (1.0 + z.squaredNorm()) + slop)
            ++rep.growth_violations_f;
        const double f_lip =
            gen.gamma * (1.0 + z.norm() + z2.norm()) * (z - z2).norm();
        if (std::abs(fv - fv2) > f_lip + slop) ++rep.lipschitz_violations_f;
    }

    rep.passed = rep.growth_violations_h == 0 && rep.lipschitz_violations_h == 0 &&
                 rep.growth_violations_f == 0 && rep.lipschitz_violations_f == 0;
    return rep;
}

TerminalCheckReport check_terminal(const TerminalCondition& tc, const CostMatrix& k,
                                   const std::vector<Eigen::VectorXd>& terminal_states,
                                   double tol) {
    TerminalCheckReport rep;
    for (const auto& x : terminal_states) {
        const Eigen::VectorXd v = tc.xi(x);
        rep.worst_norm = std::max(rep.worst_norm, v.lpNorm<Eigen::Infinity>());
        if (v.lpNorm<Eigen::Infinity>() > tc.bound + tol) rep.bound_ok = false;
        if (check_domain_membership(v, k, tol).position == DomainPosition::Outside)
            rep.domain_ok = false;
    }
    return rep;
}

ProblemCheckReport validate_problem(const RbsdeProblem& problem) {
    ProblemCheckReport rep;
    problem.check_shapes();

    rep.cost_a3 = validate_cost_matrix(problem.cost, AssumptionLevel::A3);
    rep.cost_a4 = validate_cost_matrix(problem.cost, AssumptionLevel::A4);
    rep.a4_holds = rep.cost_a4.passed;
    if (!rep.cost_a3.passed) {
        rep.passed = false;
        for (const auto& v : rep.cost_a3.violations)
            rep.messages.push_back(v.describe());
    }

    GeneratorCheckConfig gcfg;
    gcfg.d = problem.d;
    rep.generator = check_generator(problem.gen, gcfg);
    if (!rep.generator.passed) {
        rep.passed = false;
        rep.messages.push_back("generator spot-check failed with the declared gamma");
    }
    return rep;
}

}  // namespace rbsde
