#pragma once

#include "rbsde/types.hpp"

namespace rbsde {

enum class AssumptionLevel { A2, A3, A4 };

struct CostViolation {
    AssumptionLevel level;
    int i = -1, j = -1, l = -1;  // 1-based in messages, 0-based here
    double lhs = 0.0, rhs = 0.0;
    std::string describe() const;
};

struct ValidationReport {
    bool passed = true;
    std::vector<CostViolation> violations;
};

// (A2): zero diagonal, positive off-diagonal.
// (A3): k[i][j] + k[j][l] >= k[i][l].
// (A4): strict inequality, enforced only over i != j, j != l (with j = i the
// strict form would read k[i][l] > k[i][l]).
// Lower levels are implied: requesting A4 also checks A3 and A2.
ValidationReport validate_cost_matrix(const CostMatrix& k, AssumptionLevel level);

enum class DomainPosition { Interior, Boundary, Outside };

struct DomainStatus {
    DomainPosition position = DomainPosition::Interior;
    // Active pairs when on the boundary, violated pairs when outside.
    std::vector<std::pair<int, int>> pairs;
};

DomainStatus check_domain_membership(const Eigen::VectorXd& y, const CostMatrix& k,
                                     double tol);

// Dykstra's cyclic projection onto the closed polytope Q-bar.
Eigen::VectorXd project_to_domain(const Eigen::VectorXd& y, const CostMatrix& k,
                                  double tol = 1e-10, int max_iter = 10000);

struct GeneratorCheckConfig {
    int samples = 1000;
    double y_range = 10.0;
    double z_range = 10.0;
    int d = 1;
    std::uint64_t seed = 2024;
};

struct GeneratorCheckReport {
    bool passed = true;
    int growth_violations_h = 0;
    int lipschitz_violations_h = 0;
    int growth_violations_f = 0;
    int lipschitz_violations_f = 0;
    double worst_ratio = 0.0;  // max of (observed bound / allowed bound)
};

// Sampling spot-check of the (A1)/(A5) growth and Lipschitz inequalities with
// the declared gamma. No symbolic verification.
GeneratorCheckReport check_generator(const GeneratorSpec& gen,
                                     const GeneratorCheckConfig& cfg = {});

struct TerminalCheckReport {
    bool bound_ok = true;
    bool domain_ok = true;
    double worst_norm = 0.0;
};

// Checks |xi| <= bound and xi in Q-bar on the supplied sample of terminal states.
TerminalCheckReport check_terminal(const TerminalCondition& tc, const CostMatrix& k,
                                   const std::vector<Eigen::VectorXd>& terminal_states,
                                   double tol = 1e-10);

// Full problem gate: shapes, (A2)+(A3) at least, generator spot-check.
// Returns whether (A4) holds (the uniqueness regime).
struct ProblemCheckReport {
    bool passed = true;
    bool a4_holds = false;
    ValidationReport cost_a3;
    ValidationReport cost_a4;
    GeneratorCheckReport generator;
    std::vector<std::string> messages;
};

ProblemCheckReport validate_problem(const RbsdeProblem& problem);

}  // namespace rbsde
