#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rbsde/coupled.hpp"
#include "test_util.hpp"

using namespace rbsde;

namespace {

// h_1 reads the other component: the fixed point couples the system.
RbsdeProblem cross_coupled() {
    RbsdeProblem p = testutil::constant_driver_instance({0.0, 1.0}, 0.5, 1.0, 1.0);
    p.gen.coupled = true;
    p.gen.h = [](int i, double, const Eigen::VectorXd& y, const Eigen::VectorXd&) {
        return i == 0 ? 0.1 * y(1) : 1.0;
    };
    return p;
}

}  // namespace

TEST_CASE("fixed point rejects uncoupled problems and weak norm weights") {
    Numerics nm;
    nm.steps = 500;
    const StoppingRule stop{1024.0, 5e-3};

    RbsdeProblem p = testutil::two_mode_small();
    CHECK_THROWS_AS(solve_coupled_rbsde(p, nm, stop), StructuralError);

    RbsdeProblem c = cross_coupled();
    FixedPointConfig fp;
    fp.beta = 1.0;  // below 2 * gamma^2 * T * n = 4
    CHECK_THROWS_AS(solve_coupled_rbsde(c, nm, stop, fp), StructuralError);
}

TEST_CASE("iterates contract geometrically at the default norm weight") {
    const RbsdeProblem p = cross_coupled();
    Numerics nm;
    nm.steps = 1000;
    nm.m_start = 64.0;
    const StoppingRule stop{1024.0, 5e-3};
    const CoupledResult res = solve_coupled_rbsde(p, nm, stop);

    CHECK(res.trace.beta == doctest::Approx(8.0));  // 4 * gamma^2 * T * n
    CHECK(res.trace.geometric);
    REQUIRE(res.trace.iterates >= 3);
    // sqrt(2 gamma^2 T n / beta) + 0.1 margin.
    CHECK(res.trace.contraction_estimate <= std::sqrt(4.0 / 8.0) + 0.1);
}

TEST_CASE("fixed point solves the self-consistency equation") {
    const RbsdeProblem p = cross_coupled();
    Numerics nm;
    nm.steps = 1000;
    nm.m_start = 64.0;
    const CoupledResult res = solve_coupled_rbsde(p, nm, StoppingRule{1024.0, 5e-3});

    // Re-solve with the generator frozen at the returned values; the answer
    // must not move.
    FrozenValues frozen;
    frozen.det.assign(res.solution.y_det.begin(), res.solution.y_det.end());
    const DiscreteSolution again = solve_penalized_bsde(
        p, res.solution.diagnostics.m, nm, nullptr, &frozen);
    for (int k = 0; k <= nm.steps; k += 200)
        CHECK((again.y_det[k] - res.solution.y_det[k]).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("diagonal coupled generator matches the direct solver") {
    // h_i depends only on its own component: the fixed point must agree with
    // the plain solve to high accuracy.
    RbsdeProblem p = testutil::constant_driver_instance({0.0, 0.16}, 0.08, 1.0, 1.0);
    p.gen.coupled = true;
    p.gen.h = [](int i, double, const Eigen::VectorXd& y, const Eigen::VectorXd&) {
        return i == 0 ? 0.05 * y(0) : 0.16;
    };
    Numerics nm;
    nm.steps = 1000;
    nm.m_start = 256.0;
    FixedPointConfig fp;
    fp.tol = 1e-10;
    const CoupledResult res =
        solve_coupled_rbsde(p, nm, StoppingRule{1024.0, 1e-3}, fp);

    RbsdeProblem direct = p;
    direct.gen.coupled = false;
    const DiscreteSolution ref =
        solve_rbsde(direct, nm, StoppingRule{1024.0, 1e-3});
    CHECK((res.solution.y0() - ref.y0()).cwiseAbs().maxCoeff() < 1e-6);
}
