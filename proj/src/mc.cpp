#include "rbsde/mc.hpp"

#include <cmath>
#include <sstream>

namespace rbsde {

PathBundle simulate_brownian(const TimeGrid& grid, int num_paths, int d,
                             std::uint64_t seed) {
    if (num_paths < 1) throw StructuralError("simulate_brownian: num_paths >= 1");
    if (d < 1) throw StructuralError("simulate_brownian: d >= 1");
    grid.check();

    PathBundle b;
    b.grid = grid;
    b.num_paths = num_paths;
    b.d = d;
    b.seed = seed;
    b.dw.resize(grid.steps);

    CounterRng rng(seed);
    for (int k = 0; k < grid.steps; ++k) {
        const double sdt = std::sqrt(grid.dt(k));
        Eigen::MatrixXd& m = b.dw[k];
        m.resize(num_paths, d);
        for (int p = 0; p < num_paths; ++p)
            for (int c = 0; c < d; ++c)
                m(p, c) = sdt * rng.normal(path_stream(p),
                                           step_coord_counter(k, c, d));
    }
    return b;
}

StatePaths simulate_functional_sde(
    const std::function<Eigen::MatrixXd(double, const Eigen::MatrixXd&)>& sigma,
    const Eigen::VectorXd& x0, const PathBundle& paths,
    const std::function<Eigen::VectorXd(double, const Eigen::MatrixXd&)>& drift) {
    const int d = paths.d;
    if (x0.size() != d)
        throw StructuralError("simulate_functional_sde: x0 dimension mismatch");

    StatePaths s;
    s.grid = paths.grid;
    s.num_paths = paths.num_paths;
    s.d = d;
    s.x.resize(paths.grid.steps + 1);
    for (auto& m : s.x) m.resize(paths.num_paths, d);
    s.x[0].rowwise() = x0.transpose();

    Eigen::MatrixXd past;  // (k+1) x d past of one path
    for (int p = 0; p < paths.num_paths; ++p) {
        past.resize(paths.grid.steps + 1, d);
        past.row(0) = x0.transpose();
        for (int k = 0; k < paths.grid.steps; ++k) {
            const double t = paths.grid.nodes[k];
            const double dt = paths.grid.dt(k);
            const Eigen::MatrixXd sig = sigma(t, past.topRows(k + 1));
            if (sig.rows() != d || sig.cols() != d)
                throw StructuralError("simulate_functional_sde: sigma must be d x d");
            Eigen::VectorXd incr = paths.dw[k].row(p).transpose();
            if (drift) incr += drift(t, past.topRows(k + 1)) * dt;
            const Eigen::VectorXd next =
                past.row(k).transpose() + sig * incr;
            if (!next.allFinite()) {
                std::ostringstream os;
                os << "simulate_functional_sde: non-finite state at path " << p
                   << " step " << k;
                throw SolverError(os.str());
            }
            past.row(k + 1) = next.transpose();
            s.x[k + 1].row(p) = next.transpose();
        }
    }
    return s;
}

std::vector<double> girsanov_weights(
    const std::function<Eigen::VectorXd(int, double, const Eigen::VectorXd&)>& b,
    const std::vector<int>& mode_schedule, const StatePaths& states,
    const PathBundle& paths) {
    if (static_cast<int>(mode_schedule.size()) != paths.grid.steps)
        throw StructuralError("girsanov_weights: schedule length must equal steps");

    std::vector<double> w(paths.num_paths);
    for (int p = 0; p < paths.num_paths; ++p) {
        double log_w = 0.0;
        for (int k = 0; k < paths.grid.steps; ++k) {
            const double t = paths.grid.nodes[k];
            const Eigen::VectorXd bv =
                b(mode_schedule[k], t, states.x[k].row(p).transpose());
            log_w += bv.dot(paths.dw[k].row(p).transpose()) -
                     0.5 * bv.squaredNorm() * paths.grid.dt(k);
        }
        w[p] = std::exp(log_w);
        if (!std::isfinite(w[p]))
            throw SolverError("girsanov_weights: non-finite weight");
    }
    return w;
}

std::vector<std::vector<int>> basis_exponents(int d, int degree) {
    std::vector<std::vector<int>> out;
    if (d <= 2) {
        // All multi-indices with total degree <= degree.
        std::vector<int> idx(d, 0);
        std::function<void(int, int)> rec = [&](int coord, int remaining) {
            if (coord == d) {
                out.push_back(idx);
                return;
            }
            for (int e = 0; e <= remaining; ++e) {
                idx[coord] = e;
                rec(coord + 1, remaining - e);
            }
            idx[coord] = 0;
        };
        rec(0, degree);
    } else {
        out.push_back(std::vector<int>(d, 0));
        const int per_coord = std::min(degree, 2);
        for (int c = 0; c < d; ++c)
            for (int e = 1; e <= per_coord; ++e) {
                std::vector<int> v(d, 0);
                v[c] = e;
                out.push_back(v);
            }
        for (int c1 = 0; c1 < d; ++c1)
            for (int c2 = c1 + 1; c2 < d; ++c2) {
                std::vector<int> v(d, 0);
                v[c1] = 1;
                v[c2] = 1;
                out.push_back(v);
            }
    }
    return out;
}

Eigen::MatrixXd build_design(const Eigen::MatrixXd& features,
                             const std::vector<std::vector<int>>& exponents) {
    const int p = static_cast<int>(features.rows());
    const int d = static_cast<int>(features.cols());
    Eigen::MatrixXd X(p, static_cast<int>(exponents.size()));
    for (std::size_t b = 0; b < exponents.size(); ++b) {
        Eigen::VectorXd col = Eigen::VectorXd::Ones(p);
        for (int c = 0; c < d; ++c)
            for (int e = 0; e < exponents[b][c]; ++e)
                col = col.cwiseProduct(features.col(c));
        X.col(static_cast<int>(b)) = col;
    }
    return X;
}

double FittedRegression::evaluate(const Eigen::VectorXd& x) const {
    double acc = 0.0;
    for (std::size_t b = 0; b < exponents.size(); ++b) {
        double term = coeffs(static_cast<int>(b));
        for (int c = 0; c < d; ++c)
            for (int e = 0; e < exponents[b][c]; ++e) term *= x(c);
        acc += term;
    }
    return acc;
}

Eigen::VectorXd FittedRegression::evaluate_all(const Eigen::MatrixXd& features) const {
    return build_design(features, exponents) * coeffs;
}

FittedRegression regress_conditional_expectation(const Eigen::VectorXd& targets,
                                                 const Eigen::MatrixXd& features,
                                                 const BasisSpec& basis,
                                                 double ridge_lambda) {
    if (targets.size() != features.rows())
        throw StructuralError("regression: target/feature length mismatch");

    FittedRegression fit;
    fit.d = static_cast<int>(features.cols());
    fit.exponents = basis_exponents(fit.d, basis.degree);
    const int B = static_cast<int>(fit.exponents.size());
    if (targets.size() <= B)
        throw StructuralError("regression: need more samples than basis functions");

    const Eigen::MatrixXd X = build_design(features, fit.exponents);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() == B) {
        fit.coeffs = qr.solve(targets);
    } else {
        // Rank-deficient design: ridge fallback, flagged for diagnostics.
        fit.ridge_used = true;
        const Eigen::MatrixXd A =
            X.transpose() * X + ridge_lambda * Eigen::MatrixXd::Identity(B, B);
        fit.coeffs = A.ldlt().solve(X.transpose() * targets);
    }
    return fit;
}

Eigen::MatrixXd fit_conditional_expectations(const Eigen::MatrixXd& targets,
                                             const Eigen::MatrixXd& features,
                                             const BasisSpec& basis,
                                             double ridge_lambda) {
    if (targets.rows() != features.rows())
        throw StructuralError("regression: target/feature length mismatch");
    const auto exps =
        basis_exponents(static_cast<int>(features.cols()), basis.degree);
    const int B = static_cast<int>(exps.size());
    if (targets.rows() <= B)
        throw StructuralError("regression: need more samples than basis functions");

    const Eigen::MatrixXd X = build_design(features, exps);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::MatrixXd coeffs;
    if (qr.rank() == B) {
        coeffs = qr.solve(targets);
    } else {
        const Eigen::MatrixXd A =
            X.transpose() * X + ridge_lambda * Eigen::MatrixXd::Identity(B, B);
        coeffs = A.ldlt().solve(X.transpose() * targets);
    }
    return X * coeffs;
}

}  // namespace rbsde
