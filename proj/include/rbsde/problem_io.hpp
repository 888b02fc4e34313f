#pragma once

#include "rbsde/risk.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace rbsde {

// Problem file contents: the reflected system plus, when a risk section is
// present, the risk-sensitive control problem built from the same data.
struct LoadedProblem {
    RbsdeProblem problem;
    std::optional<RiskProblem> risk;
    bool project_terminal = false;  // explicit opt-in from the file
};

LoadedProblem parse_problem_json(const nlohmann::json& j);
LoadedProblem load_problem_file(const std::string& path);

}  // namespace rbsde
