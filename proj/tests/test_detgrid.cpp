#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rbsde/detgrid.hpp"
#include "rbsde/switching.hpp"
#include "test_util.hpp"

using namespace rbsde;

namespace {

RbsdeProblem classic_two_mode() {
    // h = (0, 1), k12 = k21 = 0.5, xi = 0: staying in mode 2 costs 1,
    // switching immediately costs 0.5.
    return testutil::constant_driver_instance({0.0, 1.0}, 0.5);
}

}  // namespace

TEST_CASE("zero-driver system stays constant") {
    RbsdeProblem p = testutil::constant_driver_instance({0.0, 0.0}, 0.5);
    p.terminal = TerminalCondition::constant(Eigen::VectorXd::Constant(2, 0.7));
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 100);
    const DetSolution sol = solve_penalized_ode(p, 0.0, grid);
    for (const auto& y : sol.y) {
        CHECK(y(0) == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(y(1) == doctest::Approx(0.7).epsilon(1e-12));
    }
}

TEST_CASE("two-mode penalized values approach the one-switch optimum") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 2000);
    const DetSolution sol = solve_penalized_ode(p, 256.0, grid);
    CHECK(std::abs(sol.y[0](1) - 0.5) < 5e-3);
    CHECK(std::abs(sol.y[0](0) - 0.0) < 1e-6);
    CHECK(sol.y.back()(0) == 0.0);  // terminal exact
    CHECK(sol.y.back()(1) == 0.0);
}

TEST_CASE("penalized values decrease in m") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 2000);
    const DetSolution s1 = solve_penalized_ode(p, 1.0, grid);
    const DetSolution s2 = solve_penalized_ode(p, 2.0, grid);
    for (int k = 0; k < grid.num_nodes(); ++k)
        for (int i = 0; i < 2; ++i)
            CHECK(s1.y[k](i) >= s2.y[k](i) - 1e-12);
}

TEST_CASE("cumulative K starts at zero and never decreases") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 500);
    const DetSolution sol = solve_penalized_ode(p, 64.0, grid);
    CHECK(sol.k_cum.front().norm() == 0.0);
    for (int k = 0; k + 1 < grid.num_nodes(); ++k)
        for (int i = 0; i < 2; ++i)
            CHECK(sol.k_cum[k + 1](i) >= sol.k_cum[k](i) - 1e-14);
    // Mode 2 is pushed by the constraint, mode 1 never is.
    CHECK(sol.k_cum.back()(1) > 0.1);
    CHECK(sol.k_cum.back()(0) < 1e-8);
}

TEST_CASE("stiffness guard refuses coarse grids and names the required size") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 100);
    CHECK_THROWS_AS(solve_penalized_ode(p, 256.0, grid), SolverError);
    try {
        solve_penalized_ode(p, 256.0, grid);
    } catch (const SolverError& e) {
        CHECK(std::string(e.what()).find("steps") != std::string::npos);
    }
}

TEST_CASE("dynamic-programming value on the classic instance") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 2000);
    const auto v = dp_switching_value(p, grid);
    CHECK(v[0](0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(v[0](1) - 0.5) < 1e-3);
}

TEST_CASE("switching is never profitable with zero payoff everywhere") {
    RbsdeProblem p = testutil::constant_driver_instance({0.0, 0.0, 0.0}, 0.4);
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 200);
    const auto v = dp_switching_value(p, grid);
    for (const auto& node : v) CHECK(node.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("steep drivers force an immediate switch to the cheap mode") {
    const RbsdeProblem p = testutil::slope_instance();  // h = (0,2,2), k = 0.3
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 1000);
    const auto v = dp_switching_value(p, grid);
    CHECK(v[0](0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(v[0](1) - 0.3) < 1e-3);
    CHECK(std::abs(v[0](2) - 0.3) < 1e-3);
}

TEST_CASE("switched scalar values match hand integration") {
    const RbsdeProblem p = classic_two_mode();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 400);

    SwitchingStrategy stay1;
    stay1.start_mode = 0;
    CHECK(solve_switched_ode(p, stay1, grid) == doctest::Approx(0.0).epsilon(1e-10));

    SwitchingStrategy stay2;
    stay2.start_mode = 1;
    CHECK(solve_switched_ode(p, stay2, grid) == doctest::Approx(1.0).epsilon(1e-9));

    SwitchingStrategy immediate;
    immediate.start_mode = 1;
    immediate.switches.push_back({0, 0});
    CHECK(solve_switched_ode(p, immediate, grid) ==
          doctest::Approx(0.5).epsilon(1e-10));

    SwitchingStrategy half;  // stay in 2 until t = 0.5, then switch
    half.start_mode = 1;
    half.switches.push_back({200, 0});
    CHECK(solve_switched_ode(p, half, grid) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("DP value is a lower bound for every enumerated strategy") {
    const RbsdeProblem p = testutil::three_mode_small();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 20);
    const auto v = dp_switching_value(p, grid);
    const auto strategies = enumerate_strategies(grid, 3, 1, 2);
    for (const auto& a : strategies) {
        const double u = solve_switched_ode(p, a, grid);
        CHECK(v[0](1) <= u + 5e-2);  // O(dt) splitting allowance on 20 nodes
    }
}

TEST_CASE("penalized values converge to the DP value as m grows") {
    const RbsdeProblem p = testutil::three_mode_small();
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 2000);
    const auto v = dp_switching_value(p, grid);
    const DetSolution sol = solve_penalized_ode(p, 256.0, grid);
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(sol.y[0](i) - v[0](i)) < 2e-3);
}
