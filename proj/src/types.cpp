#include "rbsde/types.hpp"

#include <cmath>
#include <numeric>

namespace rbsde {

TimeGrid TimeGrid::uniform(double t0, double T, int steps) {
    if (steps < 1) throw StructuralError("TimeGrid: steps must be >= 1");
    if (!(T > t0)) throw StructuralError("TimeGrid: need T > t0");
    TimeGrid g;
    g.t0 = t0;
    g.T = T;
    g.steps = steps;
    g.nodes.resize(steps + 1);
    for (int k = 0; k <= steps; ++k)
        g.nodes[k] = t0 + (T - t0) * static_cast<double>(k) / steps;
    g.nodes.back() = T;
    return g;
}

void TimeGrid::check() const {
    if (static_cast<int>(nodes.size()) != steps + 1)
        throw StructuralError("TimeGrid: node count does not match steps");
    if (nodes.front() != t0 || nodes.back() != T)
        throw StructuralError("TimeGrid: endpoints do not match nodes");
    for (int k = 0; k < steps; ++k)
        if (!(nodes[k + 1] > nodes[k]))
            throw StructuralError("TimeGrid: nodes must be strictly increasing");
}

CostMatrix CostMatrix::uniform(int n, double off_diag) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Constant(n, n, off_diag);
    k.diagonal().setZero();
    return CostMatrix(n, std::move(k));
}

TerminalCondition TerminalCondition::constant(Eigen::VectorXd value) {
    TerminalCondition tc;
    tc.bound = value.lpNorm<Eigen::Infinity>();
    tc.xi = [v = std::move(value)](const Eigen::VectorXd&) { return v; };
    return tc;
}

void RbsdeProblem::check_shapes() const {
    if (horizon <= 0.0) throw StructuralError("problem: horizon must be positive");
    if (n < 1 || d < 1) throw StructuralError("problem: need n >= 1 and d >= 1");
    if (cost.n != n || cost.k.rows() != n || cost.k.cols() != n)
        throw StructuralError("problem: cost matrix shape does not match mode count");
    if (gen.n != n) throw StructuralError("problem: generator mode count mismatch");
    if (!gen.h || !gen.f) throw StructuralError("problem: generator callables missing");
    if (!terminal.xi) throw StructuralError("problem: terminal condition missing");
    if (!dynamics.deterministic()) {
        if (dynamics.x0.size() != d)
            throw StructuralError("problem: x0 dimension does not match d");
        if (!dynamics.sigma) throw StructuralError("problem: sigma missing");
    }
}

double pairwise_sum(const double* data, std::size_t len) {
    if (len == 0) return 0.0;
    if (len <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < len; ++i) s += data[i];
        return s;
    }
    const std::size_t half = len / 2;
    return pairwise_sum(data, half) + pairwise_sum(data + half, len - half);
}

double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum(v.data(), v.size());
}

double pairwise_mean(const std::vector<double>& v) {
    if (v.empty()) throw StructuralError("pairwise_mean: empty input");
    return pairwise_sum(v) / static_cast<double>(v.size());
}

MeanSe mean_and_se(const std::vector<double>& v) {
    MeanSe r;
    const std::size_t p = v.size();
    if (p == 0) throw StructuralError("mean_and_se: empty input");
    r.mean = pairwise_mean(v);
    if (p == 1) return r;
    std::vector<double> sq(p);
    for (std::size_t i = 0; i < p; ++i) {
        const double c = v[i] - r.mean;
        sq[i] = c * c;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(p - 1);
    r.se = std::sqrt(var / static_cast<double>(p));
    return r;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw StructuralError("fit_slope: need two matched samples at least");
    const double mx = pairwise_mean(x);
    const double my = pairwise_mean(y);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    if (den == 0.0) throw StructuralError("fit_slope: degenerate abscissa");
    return num / den;
}

}  // namespace rbsde
