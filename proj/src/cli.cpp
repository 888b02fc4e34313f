#include "rbsde/cli.hpp"

#include "rbsde/coupled.hpp"
#include "rbsde/problem_io.hpp"
#include "rbsde/risk.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace rbsde::cli {

namespace {

constexpr const char* kVersion = "0.3.0";

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;
constexpr int kExitGap = 4;

struct Options {
    std::string problem_path;
    std::string out_dir = ".";
    std::string mode = "auto";         // auto | deterministic | mc
    std::string verify_mode = "auto";  // auto | dp | enumerate
    std::uint64_t seed = 0;
    bool seed_set = false;
    int paths = 10000;
    int steps = 100;
    int workers = 1;
    int max_switches = 2;
    int basis_degree = 3;
    int start_mode = 1;  // 1-based on the command line
    std::string m_list = "1,2,4,8,16,32,64,128,256";
    double m_start = 1.0;
    double m_max = 1024.0;
    double slack_tol = 1e-3;
    double beta = 0.0;
    double gap_tol = 1e-3;
    double boundary_tol = 0.0;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw SolverError("cannot write " + p.string());
    out << content;
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    write_file(p, j.dump(2) + "\n");
}

std::vector<double> parse_m_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
        if (out.back() <= 0.0)
            throw StructuralError("--m: penalty weights must be positive");
    }
    if (out.empty()) throw StructuralError("--m: empty list");
    return out;
}

double node_slack(const Eigen::VectorXd& y, const CostMatrix& k) {
    double s = 0.0;
    for (int i = 0; i < k.n; ++i)
        for (int l = 0; l < k.n; ++l)
            if (l != i) s = std::max(s, pos_part(y(i) - y(l) - k.k(i, l)));
    return s;
}

struct Context {
    Options opt;
    std::vector<std::string> args;
    LoadedProblem loaded;
    std::filesystem::path out_dir;
    bool det = false;

    Numerics numerics() const {
        Numerics nm;
        nm.num_paths = opt.paths;
        nm.steps = opt.steps;
        nm.seed = opt.seed;
        nm.seed_set = opt.seed_set;
        nm.basis.degree = opt.basis_degree;
        nm.m_start = opt.m_start;
        nm.workers = opt.workers;
        return nm;
    }
    StoppingRule stopping() const { return {opt.m_max, opt.slack_tol}; }
};

void write_manifest(const Context& ctx, const std::string& command) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["command"] = command;
    j["args"] = ctx.args;
    j["problem"] = ctx.opt.problem_path;
    j["seed"] = ctx.opt.seed;
    j["seed_set"] = ctx.opt.seed_set;
    j["paths"] = ctx.opt.paths;
    j["steps"] = ctx.opt.steps;
    j["workers"] = ctx.opt.workers;
    write_json(ctx.out_dir / "manifest.json", j);
}

// Node table with path means in the stochastic regime.
std::string solution_csv(const DiscreteSolution& sol, const CostMatrix& cost) {
    const int n = sol.n;
    std::ostringstream os;
    os << "t";
    for (int i = 0; i < n; ++i) os << ",Y_" << (i + 1);
    for (int i = 0; i < n; ++i) os << ",K_" << (i + 1);
    os << ",slack_max\n";
    for (int k = 0; k < sol.grid.num_nodes(); ++k) {
        const Eigen::VectorXd y = sol.y_at(k);
        Eigen::VectorXd kc(n);
        if (sol.deterministic) {
            kc = sol.k_cum_det[k];
        } else {
            for (int i = 0; i < n; ++i) {
                std::vector<double> col(sol.k_cum_mc[k].rows());
                for (int p = 0; p < sol.k_cum_mc[k].rows(); ++p)
                    col[p] = sol.k_cum_mc[k](p, i);
                kc(i) = pairwise_mean(col);
            }
        }
        os << num(sol.grid.nodes[k]);
        for (int i = 0; i < n; ++i) os << "," << num(y(i));
        for (int i = 0; i < n; ++i) os << "," << num(kc(i));
        os << "," << num(node_slack(y, cost)) << "\n";
    }
    return os.str();
}

nlohmann::json diagnostics_json(const SolutionDiagnostics& d) {
    nlohmann::json j;
    j["m"] = d.m;
    j["slack_sup"] = d.slack_sup;
    j["picard_iters_max"] = d.picard_iters_max;
    j["clip_activation_rate"] = d.clip_activation_rate;
    j["bmo_diagnostic"] = d.bmo_diagnostic;
    j["terminal_match"] = d.terminal_match;
    std::vector<double> sk(d.skorokhod_residual.data(),
                           d.skorokhod_residual.data() + d.skorokhod_residual.size());
    j["skorokhod_residual"] = sk;
    return j;
}

int cmd_validate(Context& ctx) {
    write_manifest(ctx, "validate");
    const ProblemCheckReport rep = validate_problem(ctx.loaded.problem);

    auto show = [](const char* name, const ValidationReport& vr) {
        std::cout << name << ": " << (vr.passed ? "pass" : "FAIL") << "\n";
        for (const auto& v : vr.violations) std::cout << "  " << v.describe() << "\n";
    };
    show("(A2)+(A3) cost matrix", rep.cost_a3);
    std::cout << "(A4) strict triangle: "
              << (rep.a4_holds ? "holds (uniqueness regime)" : "does not hold")
              << "\n";
    for (const auto& v : rep.cost_a4.violations)
        std::cout << "  " << v.describe() << "\n";
    std::cout << "generator growth/Lipschitz spot-check: "
              << (rep.generator.passed ? "pass" : "FAIL")
              << " (worst ratio " << rep.generator.worst_ratio << ")\n";
    for (const auto& msg : rep.messages) std::cout << msg << "\n";
    std::cout << "overall: " << (rep.passed ? "pass" : "FAIL") << "\n";

    nlohmann::json j;
    j["passed"] = rep.passed;
    j["a4_holds"] = rep.a4_holds;
    j["generator_passed"] = rep.generator.passed;
    j["generator_worst_ratio"] = rep.generator.worst_ratio;
    std::vector<std::string> viols;
    for (const auto& v : rep.cost_a3.violations) viols.push_back(v.describe());
    for (const auto& v : rep.cost_a4.violations) viols.push_back(v.describe());
    j["cost_violations"] = viols;
    j["messages"] = rep.messages;
    write_json(ctx.out_dir / "validation.json", j);
    return rep.passed ? kExitOk : kExitValidation;
}

int cmd_solve(Context& ctx) {
    write_manifest(ctx, "solve");
    const RbsdeProblem& p = ctx.loaded.problem;
    try {
        DiscreteSolution sol;
        nlohmann::json extra;
        if (p.gen.coupled) {
            FixedPointConfig fp;
            fp.beta = ctx.opt.beta;
            CoupledResult res = solve_coupled_rbsde(p, ctx.numerics(), ctx.stopping(), fp);
            sol = std::move(res.solution);
            extra["fixed_point"] = {{"iterates", res.trace.iterates},
                                    {"beta", res.trace.beta},
                                    {"deltas", res.trace.deltas},
                                    {"contraction_estimate", res.trace.contraction_estimate},
                                    {"geometric", res.trace.geometric}};
        } else {
            sol = solve_rbsde(p, ctx.numerics(), ctx.stopping());
        }
        write_file(ctx.out_dir / "solution.csv", solution_csv(sol, p.cost));
        nlohmann::json diag = diagnostics_json(sol.diagnostics);
        if (!extra.empty()) diag.update(extra);
        write_json(ctx.out_dir / "diagnostics.json", diag);

        const Eigen::VectorXd y0 = sol.y0();
        nlohmann::json summary;
        summary["y0"] = std::vector<double>(y0.data(), y0.data() + y0.size());
        summary["m"] = sol.diagnostics.m;
        summary["slack_sup"] = sol.diagnostics.slack_sup;
        summary["certified"] = sol.diagnostics.slack_sup <= ctx.opt.slack_tol;
        write_json(ctx.out_dir / "summary.json", summary);
        return kExitOk;
    } catch (const SolverError& e) {
        nlohmann::json diag;
        diag["error"] = e.what();
        write_json(ctx.out_dir / "diagnostics.json", diag);
        std::cerr << "solver failure: " << e.what() << "\n";
        return kExitSolver;
    }
}

int cmd_sweep(Context& ctx) {
    write_manifest(ctx, "sweep");
    const std::vector<double> ms = parse_m_list(ctx.opt.m_list);
    const PenaltySweepReport rep =
        penalty_sweep(ctx.loaded.problem, ms, ctx.numerics());

    std::ostringstream csv;
    csv << "m,slack_sup,y_sup";
    for (int i = 0; i < ctx.loaded.problem.n; ++i) csv << ",Y0_" << (i + 1);
    csv << "\n";
    std::ostringstream plot;
    plot << "x,y\n";
    for (std::size_t k = 0; k < rep.m_values.size(); ++k) {
        csv << num(rep.m_values[k]) << "," << num(rep.slack_sups[k]) << ","
            << num(rep.y_sup_norms[k]);
        for (int i = 0; i < ctx.loaded.problem.n; ++i)
            csv << "," << num(rep.y0s[k](i));
        csv << "\n";
        plot << num(rep.m_values[k]) << "," << num(rep.slack_sups[k]) << "\n";
    }
    write_file(ctx.out_dir / "sweep.csv", csv.str());
    write_file(ctx.out_dir / "slack_vs_m.csv", plot.str());

    nlohmann::json j;
    j["slope"] = rep.slope;
    j["converged"] = rep.converged;
    j["monotonicity_violations"] = rep.monotonicity_violations;
    j["max_violation_magnitude"] = rep.max_violation_magnitude;
    j["complete"] = rep.complete;
    j["failure"] = rep.failure;
    write_json(ctx.out_dir / "sweep.json", j);

    if (!rep.complete) {
        std::cerr << "sweep incomplete: " << rep.failure << "\n";
        return kExitSolver;
    }
    return kExitOk;
}

int cmd_verify(Context& ctx) {
    write_manifest(ctx, "verify");
    const RbsdeProblem& p = ctx.loaded.problem;
    const int start_mode = ctx.opt.start_mode - 1;
    if (start_mode < 0 || start_mode >= p.n) {
        std::cerr << "--start-mode out of range\n";
        return kExitValidation;
    }
    try {
        const Numerics nm = ctx.numerics();
        DiscreteSolution sol = solve_rbsde(p, nm, ctx.stopping());

        VerificationConfig vcfg;
        vcfg.max_switches = ctx.opt.max_switches;
        vcfg.tol = ctx.opt.gap_tol;
        vcfg.workers = ctx.opt.workers;
        if (ctx.opt.verify_mode == "dp" ||
            (ctx.opt.verify_mode == "auto" && ctx.det))
            vcfg.mode = VerificationMode::DynamicProgramming;
        else
            vcfg.mode = VerificationMode::Enumerate;

        const RepresentationReport rep =
            verify_representation(p, sol, start_mode, vcfg, nm);

        ExtractionConfig ecfg;
        ecfg.boundary_tol = ctx.opt.boundary_tol;  // <= 0 selects the auto rule
        const ExtractionResult ext = extract_optimal_strategy(
            p, sol, start_mode, ecfg, nm, sol.paths.get());

        std::ostringstream csv;
        csv << "digest,value\n";
        for (const auto& row : rep.table)
            csv << "\"" << row.strategy.digest(sol.grid) << "\"," << num(row.value)
                << "\n";
        write_file(ctx.out_dir / "strategies.csv", csv.str());

        nlohmann::json j;
        j["start_mode"] = ctx.opt.start_mode;
        j["y0"] = rep.y0;
        j["oracle_min"] = rep.oracle_min;
        j["gap"] = rep.gap;
        j["minimizer"] = rep.minimizer.digest(sol.grid);
        j["lower_bound_ok"] = rep.lower_bound_ok;
        j["worst_lower_bound_violation"] = rep.worst_lower_bound_violation;
        j["extracted"] = ext.strategy.digest(sol.grid);
        j["u_star0"] = ext.u_star0;
        j["certification_gap"] = ext.certification_gap;
        write_json(ctx.out_dir / "verify.json", j);

        if (std::abs(rep.gap) > ctx.opt.gap_tol || !rep.lower_bound_ok ||
            std::abs(ext.certification_gap) > ctx.opt.gap_tol) {
            std::cerr << "verification gap exceeded: gap=" << rep.gap
                      << " certification_gap=" << ext.certification_gap << "\n";
            return kExitGap;
        }
        return kExitOk;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return kExitSolver;
    }
}

int cmd_risk(Context& ctx) {
    write_manifest(ctx, "risk");
    if (!ctx.loaded.risk) {
        std::cerr << "problem file has no risk section\n";
        return kExitValidation;
    }
    const RiskProblem& rp = *ctx.loaded.risk;
    const int start_mode = ctx.opt.start_mode - 1;
    if (start_mode < 0 || start_mode >= rp.n) {
        std::cerr << "--start-mode out of range\n";
        return kExitValidation;
    }
    try {
        RiskVerificationConfig cfg;
        cfg.start_mode = start_mode;
        cfg.max_switches = ctx.opt.max_switches;
        cfg.stopping = ctx.stopping();
        cfg.extraction.boundary_tol = ctx.opt.boundary_tol;
        if (ctx.opt.seed_set) cfg.strategy_seed = ctx.opt.seed + 1000003;

        const RiskReport rep = verify_risk_optimality(rp, ctx.numerics(), cfg);

        const TimeGrid grid = TimeGrid::uniform(0.0, rp.horizon, ctx.opt.steps);
        std::ostringstream csv;
        csv << "digest,logJ,se\n";
        for (const auto& row : rep.per_strategy)
            csv << "\"" << row.strategy.digest(grid) << "\"," << num(row.log_j)
                << "," << num(row.se) << "\n";
        write_file(ctx.out_dir / "risk_strategies.csv", csv.str());

        nlohmann::json j;
        j["Y0"] = rep.y0;
        j["logJ_star"] = rep.log_j_star;
        j["se"] = rep.se;
        j["gap"] = rep.gap;
        j["lower_bound_violations"] = rep.lower_bound_violations;
        j["strategies_tested"] = rep.strategies_tested;
        write_json(ctx.out_dir / "risk.json", j);

        const double se_log =
            rep.se > 0.0 ? rep.se / std::exp(rep.log_j_star) : 0.0;
        const double gap_allow =
            rp.deterministic ? ctx.opt.gap_tol : 3.0 * se_log;
        if (std::abs(rep.gap) > gap_allow || rep.lower_bound_violations > 0) {
            std::cerr << "risk verification gap exceeded: gap=" << rep.gap
                      << " violations=" << rep.lower_bound_violations << "\n";
            return kExitGap;
        }
        return kExitOk;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return kExitSolver;
    }
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Reflected-system solver for switching problems"};
    app.require_subcommand(1);

    Options opt;
    std::string command;

    auto add_common = [&](CLI::App* sc) {
        sc->add_option("--problem", opt.problem_path, "problem definition file")
            ->required();
        sc->add_option("--out", opt.out_dir, "output directory");
        sc->add_option("--seed", opt.seed, "RNG seed (required for Monte Carlo)");
        sc->add_option("--paths", opt.paths, "Monte Carlo path count");
        sc->add_option("--steps", opt.steps, "time steps");
        sc->add_option("--m", opt.m_list, "penalty weights, e.g. 1,2,4,8");
        sc->add_option("--m-start", opt.m_start, "initial penalty weight");
        sc->add_option("--m-max", opt.m_max, "penalty weight ceiling");
        sc->add_option("--slack-tol", opt.slack_tol, "certification slack tolerance");
        sc->add_option("--max-switches", opt.max_switches, "strategy switch cap");
        sc->add_option("--beta", opt.beta, "fixed-point norm weight");
        sc->add_option("--mode", opt.mode, "deterministic|mc|auto")
            ->check(CLI::IsMember({"auto", "deterministic", "mc"}));
        sc->add_option("--verify-mode", opt.verify_mode, "dp|enumerate|auto")
            ->check(CLI::IsMember({"auto", "dp", "enumerate"}));
        sc->add_option("--workers", opt.workers, "worker threads");
        sc->add_option("--basis-degree", opt.basis_degree, "regression basis degree");
        sc->add_option("--gap-tol", opt.gap_tol, "verification gap tolerance");
        sc->add_option("--boundary-tol", opt.boundary_tol,
                       "obstacle-contact tolerance for extraction");
        sc->add_option("--start-mode", opt.start_mode, "initial mode (1-based)");
    };
    for (const char* name : {"validate", "solve", "sweep", "verify", "risk"}) {
        CLI::App* sc = app.add_subcommand(name);
        add_common(sc);
        sc->callback([&command, name]() { command = name; });
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }
    opt.seed_set = app.get_subcommand(command)->count("--seed") > 0;

    Context ctx;
    ctx.opt = opt;
    ctx.args = args;
    try {
        ctx.out_dir = opt.out_dir;
        std::filesystem::create_directories(ctx.out_dir);
        ctx.loaded = load_problem_file(opt.problem_path);
        ctx.det = ctx.loaded.problem.dynamics.deterministic();
        if (opt.mode == "deterministic" && !ctx.det) {
            std::cerr << "--mode deterministic but the problem has stochastic "
                         "dynamics\n";
            return kExitValidation;
        }
        if (opt.mode == "mc" && ctx.det) {
            std::cerr << "--mode mc but the problem is deterministic\n";
            return kExitValidation;
        }
        if (!ctx.det && !opt.seed_set && command != "validate") {
            std::cerr << "--seed is required for Monte Carlo runs\n";
            return kExitValidation;
        }
    } catch (const StructuralError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (command == "validate") return cmd_validate(ctx);
        if (command == "solve") return cmd_solve(ctx);
        if (command == "sweep") return cmd_sweep(ctx);
        if (command == "verify") return cmd_verify(ctx);
        if (command == "risk") return cmd_risk(ctx);
    } catch (const StructuralError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
    return kExitValidation;
}

}  // namespace rbsde::cli
