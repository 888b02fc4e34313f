#include "rbsde/problem_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace rbsde {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw StructuralError(what); }

const json& require(const json& j, const char* key, const char* ctx) {
    auto it = j.find(key);
    if (it == j.end())
        fail(std::string(ctx) + ": missing field '" + key + "'");
    return *it;
}

Eigen::VectorXd to_vector(const json& j, int expected, const char* ctx) {
    if (!j.is_array() || (expected >= 0 && static_cast<int>(j.size()) != expected))
        fail(std::string(ctx) + ": expected an array of length " +
             std::to_string(expected));
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
    return v;
}

Eigen::MatrixXd to_matrix_rowmajor(const json& j, int rows, int cols, const char* ctx) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows * cols)
        fail(std::string(ctx) + ": expected a row-major array of length " +
             std::to_string(rows * cols));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j[r * cols + c].get<double>();
    return m;
}

// --- generator forms -------------------------------------------------------
//
// h forms:
//   constant:   h_i = const[i]
//   affine:     h_i = const[i] + sum_j y_coeff[i][j] * y_j  (coupled when any
//               j != i coefficient is nonzero)
//   tanh_state: h_i = const[i] + scale[i] * tanh(x[0])
// f forms:
//   zero, quadratic (1/2 * coeff * |z|^2)
// linear_z form:
//   constant: b_i given per mode as a d-vector

struct GeneratorParts {
    GeneratorSpec gen;
    // Risk-problem view of the same data.
    std::function<double(int, double, const Eigen::VectorXd&)> l;
    std::function<Eigen::VectorXd(int, double, const Eigen::VectorXd&)> b;
};

GeneratorParts parse_generator(const json& jg, int n, int d) {
    GeneratorParts out;
    out.gen.n = n;
    out.gen.gamma = jg.value("gamma", 1.0);
    if (out.gen.gamma <= 0.0) fail("generator: gamma must be positive");

    const json& jh = require(jg, "h", "generator");
    const std::string hform = require(jh, "form", "generator.h").get<std::string>();
    if (hform == "constant") {
        Eigen::VectorXd c = to_vector(require(jh, "const", "generator.h"), n,
                                      "generator.h.const");
        out.l = [c](int i, double, const Eigen::VectorXd&) { return c(i); };
        out.gen.coupled = false;
    } else if (hform == "affine") {
        Eigen::VectorXd c = to_vector(require(jh, "const", "generator.h"), n,
                                      "generator.h.const");
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        if (jh.contains("y_coeff"))
            a = to_matrix_rowmajor(jh["y_coeff"], n, n, "generator.h.y_coeff");
        bool coupled = false;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (j != i && a(i, j) != 0.0) coupled = true;
        out.gen.coupled = coupled;
        out.gen.h = [c, a](int i, double, const Eigen::VectorXd& y,
                           const Eigen::VectorXd&) {
            return c(i) + a.row(i).dot(y);
        };
    } else if (hform == "tanh_state") {
        Eigen::VectorXd c = to_vector(require(jh, "const", "generator.h"), n,
                                      "generator.h.const");
        Eigen::VectorXd s = to_vector(require(jh, "scale", "generator.h"), n,
                                      "generator.h.scale");
        out.l = [c, s](int i, double, const Eigen::VectorXd& x) {
            return c(i) + s(i) * std::tanh(x.size() > 0 ? x(0) : 0.0);
        };
        out.gen.coupled = false;
    } else {
        fail("generator.h: unknown form '" + hform + "'");
    }
    if (out.l) {
        auto l = out.l;
        out.gen.h = [l](int i, double t, const Eigen::VectorXd&,
                        const Eigen::VectorXd& x) { return l(i, t, x); };
    }

    const json& jf = require(jg, "f", "generator");
    const std::string fform = require(jf, "form", "generator.f").get<std::string>();
    if (fform == "zero") {
        out.gen.f = [](double, const Eigen::VectorXd&) { return 0.0; };
    } else if (fform == "quadratic") {
        const double coeff = jf.value("coeff", 1.0);
        out.gen.f = [coeff](double, const Eigen::VectorXd& z) {
            return 0.5 * coeff * z.squaredNorm();
        };
    } else {
        fail("generator.f: unknown form '" + fform + "'");
    }

    if (jg.contains("linear_z")) {
        const json& jb = jg["linear_z"];
        const std::string bform =
            require(jb, "form", "generator.linear_z").get<std::string>();
        if (bform != "constant")
            fail("generator.linear_z: unknown form '" + bform + "'");
        const json& rows = require(jb, "b", "generator.linear_z");
        if (!rows.is_array() || static_cast<int>(rows.size()) != n)
            fail("generator.linear_z.b: expected one d-vector per mode");
        std::vector<Eigen::VectorXd> bs;
        for (int i = 0; i < n; ++i)
            bs.push_back(to_vector(rows[i], d, "generator.linear_z.b[i]"));
        out.b = [bs](int i, double, const Eigen::VectorXd&) { return bs[i]; };
        out.gen.linear_z = [bs](int i, double, const Eigen::VectorXd&) {
            return bs[i];
        };
    }
    return out;
}

// terminal forms: constant (vector), sin_state (offset_i + amp * sin(x[coord])).
TerminalCondition parse_terminal(const json& jt, int n) {
    TerminalCondition tc;
    const std::string form = require(jt, "form", "terminal").get<std::string>();
    if (form == "constant") {
        Eigen::VectorXd v = to_vector(require(jt, "value", "terminal"), n,
                                      "terminal.value");
        tc = TerminalCondition::constant(v);
    } else if (form == "sin_state") {
        Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
        if (jt.contains("offset"))
            offset = to_vector(jt["offset"], n, "terminal.offset");
        const double amp = jt.value("amp", 1.0);
        const int coord = jt.value("coord", 0);
        tc.xi = [offset, amp, coord, n](const Eigen::VectorXd& x) {
            Eigen::VectorXd v(n);
            const double s = amp * std::sin(x.size() > coord ? x(coord) : 0.0);
            for (int i = 0; i < n; ++i) v(i) = offset(i) + s;
            return v;
        };
        tc.bound = offset.cwiseAbs().maxCoeff() + std::abs(amp);
    } else {
        fail("terminal: unknown form '" + form + "'");
    }
    return tc;
}

// dynamics forms: deterministic, constant_sigma (x0 + fixed d x d matrix).
Dynamics parse_dynamics(const json& jd, int d) {
    Dynamics dyn;
    const std::string form = require(jd, "form", "dynamics").get<std::string>();
    if (form == "deterministic") {
        dyn.kind = Dynamics::Kind::Deterministic;
    } else if (form == "constant_sigma") {
        dyn.kind = Dynamics::Kind::Markovian;
        dyn.x0 = to_vector(require(jd, "x0", "dynamics"), d, "dynamics.x0");
        Eigen::MatrixXd s =
            to_matrix_rowmajor(require(jd, "sigma", "dynamics"), d, d,
                               "dynamics.sigma");
        dyn.sigma = [s](double, const Eigen::MatrixXd&) { return s; };
    } else {
        fail("dynamics: unknown form '" + form + "'");
    }
    return dyn;
}

}  // namespace

LoadedProblem parse_problem_json(const json& j) {
    if (!j.is_object()) fail("problem file: top level must be an object");
    const int schema = require(j, "schema_version", "problem file").get<int>();
    if (schema != 1)
        fail("problem file: unsupported schema_version " + std::to_string(schema));

    LoadedProblem out;
    RbsdeProblem& p = out.problem;
    p.horizon = require(j, "horizon", "problem file").get<double>();
    p.n = require(j, "modes", "problem file").get<int>();
    p.d = j.value("brownian_dim", 1);
    if (p.horizon <= 0.0) fail("problem file: horizon must be positive");
    if (p.n < 1) fail("problem file: modes must be >= 1");
    if (p.d < 1) fail("problem file: brownian_dim must be >= 1");

    p.cost = CostMatrix(
        p.n, to_matrix_rowmajor(require(j, "cost_matrix", "problem file"), p.n, p.n,
                                "cost_matrix"));

    GeneratorParts parts =
        parse_generator(require(j, "generator", "problem file"), p.n, p.d);
    p.gen = std::move(parts.gen);
    p.terminal = parse_terminal(require(j, "terminal", "problem file"), p.n);
    p.dynamics = parse_dynamics(require(j, "dynamics", "problem file"), p.d);
    out.project_terminal = j.value("project_terminal", false);

    if (p.dynamics.deterministic() &&
        (p.gen.has_linear_z()))
        fail("problem file: linear_z requires stochastic dynamics");

    if (j.contains("risk")) {
        const json& jr = j["risk"];
        if (!parts.l)
            fail("risk: generator.h form must be state-cost style (constant or "
                 "tanh_state)");
        RiskProblem rp;
        rp.horizon = p.horizon;
        rp.n = p.n;
        rp.d = p.d;
        rp.cost = p.cost;
        rp.l = parts.l;
        rp.b = parts.b;
        rp.xi = p.terminal.xi;
        rp.xi_bound = p.terminal.bound;
        rp.deterministic = p.dynamics.deterministic();
        if (!rp.deterministic) {
            rp.x0 = p.dynamics.x0;
            rp.sigma = p.dynamics.sigma;
        }
        rp.l_bound = require(jr, "l_bound", "risk").get<double>();
        rp.b_bound = jr.value("b_bound", 0.0);
        rp.path_lipschitz = jr.value("path_lipschitz", 0.0);
        if (parts.b && !(rp.b_bound > 0.0))
            fail("risk: b_bound required when linear_z drifts are present");
        rp.check();
        out.risk = std::move(rp);
    }

    p.check_shapes();
    return out;
}

LoadedProblem load_problem_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open problem file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("problem file parse error (" + path + "): " + e.what());
    }
    return parse_problem_json(j);
}

}  // namespace rbsde
