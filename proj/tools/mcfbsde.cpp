#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/io.hpp"
#include "mcfbsde/linear_fbsde.hpp"
#include "mcfbsde/oracle.hpp"
#include "mcfbsde/run_config.hpp"
#include "mcfbsde/solver.hpp"
#include "mcfbsde/verify.hpp"

namespace fs = std::filesystem;
using mcfbsde::io::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kSolver = 2, kInternal = 3 };

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::size_t paths = 1000;
    int samples = 10000;
    std::string flavor = "sufficient";
};

json header(const std::string& command, const mcfbsde::RunConfig& cfg, std::uint64_t seed) {
    return {{"schema_version", mcfbsde::io::kSchemaVersion},
            {"command", command},
            {"seed", seed},
            {"chain",
             {{"d", cfg.chain.d},
              {"T", cfg.chain.T},
              {"steps", cfg.chain.steps},
              {"root_state", cfg.chain.root_state + 1}}}};
}

json problem_summary(const mcfbsde::RunConfig& cfg) {
    const auto& p = cfg.problem;
    return {{"builtin", p.builtin.empty() ? json(nullptr) : json(p.builtin)},
            {"n", p.n},
            {"m", p.m},
            {"mode", mcfbsde::to_string(p.mode)},
            {"c2", p.c2},
            {"c2p", p.c2p},
            {"lambda", p.lambda}};
}

mcfbsde::TreePtr make_tree(const mcfbsde::RunConfig& cfg) {
    return mcfbsde::build_tree(cfg.chain.model(), cfg.chain.T, cfg.chain.steps, cfg.chain.root_state);
}

int cmd_simulate(const Options& o) {
    const mcfbsde::RunConfig cfg = mcfbsde::load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    if (o.paths == 0) throw mcfbsde::ValidationError("--paths must be positive");
    const mcfbsde::ChainModel model = cfg.chain.model();
    const mcfbsde::PathBundle bundle =
        mcfbsde::simulate_paths(model, cfg.chain.T, cfg.chain.steps, cfg.chain.root_state, o.paths, seed);
    const int d = model.d();
    mcfbsde::Matrix opt = mcfbsde::Matrix::Zero(d, d);
    mcfbsde::Matrix pred = mcfbsde::Matrix::Zero(d, d);
    for (std::size_t p = 0; p < bundle.count(); ++p) {
        opt += mcfbsde::optional_qv(bundle, p);
        pred += mcfbsde::predictable_qv(model, bundle, p);
    }
    opt /= static_cast<double>(bundle.count());
    pred /= static_cast<double>(bundle.count());
    const double ref = pred.norm();
    json doc = header("simulate", cfg, seed);
    doc["paths"] = o.paths;
    doc["mean_optional_qv"] = mcfbsde::io::to_json(opt);
    doc["mean_predictable_qv"] = mcfbsde::io::to_json(pred);
    doc["relative_error"] = ref > 0.0 ? (opt - pred).norm() / ref : opt.norm();
    doc["warnings"] = bundle.laws().warnings();
    const fs::path out(o.out);
    mcfbsde::io::write_atomic(out / "paths.csv", mcfbsde::io::paths_csv(bundle));
    mcfbsde::io::write_json(out / "qv_summary.json", doc);
    std::cout << "simulated " << o.paths << " paths; mean [M,M]_T vs predictable relative error "
              << mcfbsde::io::num(doc["relative_error"].get<double>()) << "\n";
    return kOk;
}

int cmd_solve(const Options& o) {
    const mcfbsde::RunConfig cfg = mcfbsde::load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    const mcfbsde::TreePtr tree = make_tree(cfg);
    const mcfbsde::FBSDEProblem problem = cfg.make_problem(tree);
    json doc = header("solve", cfg, seed);
    doc["problem"] = problem_summary(cfg);
    doc["nodes"] = tree->size();
    doc["warnings"] = tree->warnings();
    const fs::path out(o.out);
    try {
        const mcfbsde::ContinuationResult res = mcfbsde::solve_continuation(problem, cfg.solver);
        doc["report"] = mcfbsde::io::to_json(res.report);
        doc["error"] = nullptr;
        mcfbsde::io::write_atomic(out / "solution.csv", mcfbsde::io::solution_csv(*tree, res.field));
        mcfbsde::io::write_json(out / "report.json", doc);
        std::cout << "converged: " << res.report.levels.size() << " levels, " << res.report.total_sweeps
                  << " sweeps, final residual " << mcfbsde::io::num(res.report.final_residual.max()) << "\n";
        return kOk;
    } catch (const mcfbsde::ContinuationError& e) {
        doc["report"] = mcfbsde::io::to_json(e.report());
        doc["error"] = e.what();
        mcfbsde::io::write_json(out / "report.json", doc);
        throw;
    }
}

int cmd_solve_linear(const Options& o) {
    const mcfbsde::RunConfig cfg = mcfbsde::load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    const mcfbsde::TreePtr tree = make_tree(cfg);
    const mcfbsde::LinearFBSDEProblem problem = cfg.make_linear(tree);
    const mcfbsde::AffineSolution sol = mcfbsde::solve_linear(problem);
    json doc = header("solve-linear", cfg, seed);
    doc["problem"] = problem_summary(cfg);
    doc["nodes"] = tree->size();
    doc["linear"] = mcfbsde::io::to_json(sol);
    doc["residual"] = mcfbsde::io::to_json(mcfbsde::linear_residual_report(sol.field, problem));
    const fs::path out(o.out);
    mcfbsde::io::write_atomic(out / "solution.csv", mcfbsde::io::solution_csv(*tree, sol.field));
    mcfbsde::io::write_json(out / "linear_report.json", doc);
    std::cout << "linear solve residual " << mcfbsde::io::num(sol.residual) << "\n";
    return kOk;
}

int cmd_check(const Options& o) {
    const mcfbsde::RunConfig cfg = mcfbsde::load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    if (o.samples < 1) throw mcfbsde::ValidationError("--samples must be positive");
    const mcfbsde::Flavor flavor = mcfbsde::parse_flavor(o.flavor);
    const mcfbsde::ChainModel model = cfg.chain.model();
    const mcfbsde::GStructure g(cfg.problem.G);
    mcfbsde::SamplingBox box;
    box.t_max = cfg.chain.T;
    const mcfbsde::MonotonicityReport mono = mcfbsde::check_monotonicity(
        cfg.problem.coeffs, g, model, cfg.problem.mode, flavor, o.samples, seed, box);
    const mcfbsde::LipschitzReport lip =
        mcfbsde::check_lipschitz(cfg.problem.coeffs, g, model, o.samples, seed, box);
    json doc = header("check", cfg, seed);
    doc["problem"] = problem_summary(cfg);
    doc["box"] = {{"radius", box.radius}, {"t_max", box.t_max}};
    doc["monotonicity"] = mcfbsde::io::to_json(mono);
    doc["lipschitz"] = mcfbsde::io::to_json(lip);
    mcfbsde::io::write_json(fs::path(o.out) / "check_report.json", doc);
    std::cout << mcfbsde::to_string(flavor) << ": " << mcfbsde::to_string(mono.status)
              << " (c2=" << mcfbsde::io::num(mono.c2) << ", c2p=" << mcfbsde::io::num(mono.c2p)
              << ", c3=" << mcfbsde::io::num(mono.c3) << ", violations=" << mono.violations << ")\n";
    return kOk;
}

int cmd_oracle(const Options& o) {
    const mcfbsde::RunConfig cfg = mcfbsde::load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    const mcfbsde::TreePtr tree = make_tree(cfg);
    if (tree->size() > mcfbsde::kOracleNodeLimit)
        throw mcfbsde::ValidationError("oracle refuses trees with more than " +
                                       std::to_string(mcfbsde::kOracleNodeLimit) + " nodes (got " +
                                       std::to_string(tree->size()) + ")");
    const mcfbsde::FBSDEProblem problem = cfg.make_problem(tree);
    const mcfbsde::ContinuationResult res = mcfbsde::solve_continuation(problem, cfg.solver);
    const mcfbsde::OracleResult ora = mcfbsde::brute_force_solve(problem, 1.0);
    mcfbsde::SolutionField diff = res.field;
    diff -= ora.field;
    const double sup = diff.sup_norm();
    const double norm = mcfbsde::contraction_norm(diff, *tree, cfg.solver.norm_weight);
    const mcfbsde::GlobalResidual gr = mcfbsde::global_residual(res.field, problem, 1.0);
    json doc = header("oracle", cfg, seed);
    doc["problem"] = problem_summary(cfg);
    doc["nodes"] = tree->size();
    doc["sup_difference"] = sup;
    doc["norm_difference"] = norm;
    doc["oracle"] = {{"iterations", ora.iterations}, {"defect", ora.defect}, {"damping", ora.damping}};
    doc["solver"] = {{"total_sweeps", res.report.total_sweeps},
                     {"final_residual", res.report.final_residual.max()},
                     {"oracle_residual_of_solver_field", gr.max()}};
    doc["agreement"] = sup <= 1e-8;
    mcfbsde::io::write_json(fs::path(o.out) / "oracle_report.json", doc);
    std::cout << "solver vs oracle sup difference " << mcfbsde::io::num(sup) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Solver and checks for forward-backward SDEs driven by a finite-state Markov chain"};
    app.require_subcommand(1);
    Options opt;
    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--seed", opt.seed, "override the configured seed");
    };
    CLI::App* simulate = app.add_subcommand("simulate", "simulate chain paths and quadratic variations");
    common(simulate);
    simulate->add_option("--paths", opt.paths, "number of paths")->capture_default_str();
    CLI::App* solve = app.add_subcommand("solve", "solve the coupled problem by continuation");
    common(solve);
    CLI::App* linear = app.add_subcommand("solve-linear", "solve the linear problem by the affine construction");
    common(linear);
    CLI::App* check = app.add_subcommand("check", "sample the monotonicity and Lipschitz conditions");
    common(check);
    check->add_option("--samples", opt.samples, "number of samples")->capture_default_str();
    check->add_option("--flavor", opt.flavor, "literal or sufficient")
        ->check(CLI::IsMember({"literal", "sufficient"}))
        ->capture_default_str();
    CLI::App* oracle = app.add_subcommand("oracle", "compare the structured solver with the brute-force oracle");
    common(oracle);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(opt);
        if (solve->parsed()) return cmd_solve(opt);
        if (linear->parsed()) return cmd_solve_linear(opt);
        if (check->parsed()) return cmd_check(opt);
        if (oracle->parsed()) return cmd_oracle(opt);
    } catch (const mcfbsde::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const mcfbsde::ExprError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const mcfbsde::SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kSolver;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
