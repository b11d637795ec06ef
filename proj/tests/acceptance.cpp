// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mcfbsde/chain.hpp"
#include "mcfbsde/linear_fbsde.hpp"
#include "mcfbsde/oracle.hpp"
#include "mcfbsde/riccati.hpp"
#include "mcfbsde/solver.hpp"
#include "mcfbsde/verify.hpp"
#include "test_support.hpp"

using namespace mcfbsde;
using testing_support::builtin_problem;
using testing_support::two_state;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [violated: " << what << "]";
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

TreePtr two_state_tree(int N) { return build_tree(ChainModel(two_state()), 1.0, N, 0); }

// 1. Quadratic variation: Monte Carlo mean of [M,M]_T against the exact expectation.
void qv_consistency(Outcome& o) {
    const auto start = Clock::now();
    const QVReport r =
        check_qv_consistency(ChainModel(testing_support::random_generator(3, 31)), 1.0, 100, 200000, 7);
    const double wall = seconds_since(start);
    o.detail << "relative error " << r.relative_error << " (CLT band " << r.clt_tolerance << "), " << wall << " s";
    o.require(r.relative_error <= 0.02, "relative error <= 0.02");
    o.require(wall <= 60.0, "runtime <= 60 s");
}

// 2. Martingale representation on every node of a d=2, N=10 tree.
void representation(Outcome& o) {
    const TreePtr tree = two_state_tree(10);
    std::mt19937_64 rng(3);
    std::vector<double> values(tree->size());
    for (double& x : values) x = uniform(rng, -5.0, 5.0);
    double residual = 0.0;
    double shift = 0.0;
    for (NodeId v = 0; v < tree->size(); ++v) {
        if (tree->is_leaf(v)) continue;
        Matrix next = Matrix::Zero(1, 2);
        const NodeId first = tree->first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree->child_count(v));
        for (NodeId c = first; c < last; ++c) next(0, tree->state(c)) = values[c];
        const Representation r = centered_representation(tree->law(v), next);
        const Matrix shifted = r.Z + Matrix::Constant(1, 2, uniform(rng, -3.0, 3.0));
        for (NodeId c = first; c < last; ++c) {
            const auto dm = tree->increment(c);
            residual = std::max(residual, std::abs(values[c] - r.mean(0) - (r.Z * dm)(0)));
            shift = std::max(shift, std::abs((shifted * dm)(0) - (r.Z * dm)(0)));
        }
    }
    o.detail << "max residual " << residual << ", max shift discrepancy " << shift;
    o.require(residual <= 1e-12, "residual <= 1e-12");
    o.require(shift <= 1e-14, "shift equivalence <= 1e-14");
}

// 3. Riccati: closed-form sweep, residual order, symmetry and PSD.
void riccati(Outcome& o) {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        RiccatiProblem p;
        p.c2 = uniform(rng, 0.2, 2.0);
        p.c2p = uniform(rng, 0.2, 2.0);
        p.lambda = uniform(rng, 0.0, 2.0);
        const double g = uniform(rng, 0.5, 2.0) * (trial % 3 == 0 ? -1.0 : 1.0);
        p.T = uniform(rng, 0.5, 2.0);
        p.variant = trial % 2 == 0 ? GCase::n_le_m : GCase::n_gt_m;
        p.G = Matrix::Constant(1, 1, g);
        p.steps = 1000;
        const RiccatiSolution s = solve_riccati(p);
        for (int k = 0; k <= p.steps; ++k) {
            const double tau = p.T - k * s.dt;
            const double exact = p.variant == GCase::n_le_m
                                     ? testing_support::scalar_riccati(p.c2 * g * g, p.c2p, p.lambda * g * g, tau)
                                     : testing_support::scalar_riccati(p.c2, p.c2p * g * g, p.lambda, tau);
            worst = std::max(worst, std::abs(s.K[static_cast<std::size_t>(k)](0, 0) - exact));
        }
    }
    RiccatiProblem p;
    p.G = testing_support::random_matrix(3, 2, 8);
    p.lambda = 0.5;
    std::vector<double> ratios;
    double prev = 0.0;
    double asym = 0.0;
    double min_eig = 0.0;
    for (int steps : {50, 100, 200, 400}) {
        p.steps = steps;
        const RiccatiSolution s = solve_riccati(p);
        const double r = riccati_residual(s, p);
        if (prev > 0.0) ratios.push_back(prev / r);
        prev = r;
        for (const Matrix& k : s.K) {
            asym = std::max(asym, (k - k.transpose()).norm());
            min_eig = std::min(min_eig, linalg::min_eigenvalue(k));
        }
    }
    o.detail << "closed-form max error " << worst << ", halving ratios";
    for (double r : ratios) o.detail << " " << r;
    o.detail << ", asymmetry " << asym << ", min eigenvalue " << min_eig;
    o.require(worst <= 1e-8, "closed form <= 1e-8");
    for (double r : ratios) o.require(r >= 3.5 && r <= 4.5, "ratio in [3.5, 4.5]");
    o.require(asym <= 1e-10, "symmetric");
    o.require(min_eig >= -1e-10, "PSD");
}

// 4. Linear solver: builtin residuals, frozen-chain BVP, variant agreement.
void linear_solver(Outcome& o) {
    const TreePtr tree = two_state_tree(8);
    double residual = 0.0;
    for (const std::string& name : builtin_names()) {
        const LinearFBSDEProblem lp = level_zero_problem(builtin_problem(name, tree));
        residual = std::max(residual, linear_residual(solve_linear(lp), lp));
    }
    const auto bvp = testing_support::shoot_linear_bvp(
        [](double, double, double y) { return -y; }, [](double, double x, double) { return -(x + 1.0); }, 0.0,
        0.0, 1.0, 2000);
    const TreePtr frozen = build_tree(ChainModel(Matrix::Zero(2, 2)), 1.0, 1 << 19, 0);
    LinearFBSDEProblem fp;
    fp.c2 = fp.c2p = 1.0;
    fp.lambda = 0.0;
    fp.g = GStructure(Matrix::Identity(1, 1));
    fp.x0 = Vector::Zero(1);
    fp.tree = frozen;
    fp.forcing.gamma = [](double, int) { return Vector::Ones(1); };
    const AffineSolution fs = solve_linear(fp);
    const double bvp_err = std::max(std::abs(fs.field.x(frozen->size() - 1)(0) - bvp.xT),
                                    std::abs(fs.field.y(0)(0) - bvp.y0));
    const TreePtr sq_tree = build_tree(ChainModel(two_state()), 1.0, 7, 1);
    LinearFBSDEProblem sq;
    sq.c2 = 0.8;
    sq.c2p = 1.1;
    sq.lambda = 0.4;
    sq.g = GStructure(testing_support::random_matrix(2, 2, 31));
    sq.x0 = Vector::LinSpaced(2, 0.5, 1.0);
    sq.tree = sq_tree;
    sq.forcing.gamma = [](double t, int s) { return Vector::Constant(2, 1.0 + t - 0.5 * s); };
    sq.forcing.xi = [](int s) { return Vector::Constant(2, 0.3 * (s + 1)); };
    double variant_gap = 0.0;
    for (Mode mode : {Mode::thm2, Mode::thm3}) {
        sq.mode = mode;
        LinearSolveOptions lo;
        LinearSolveOptions hi;
        lo.variant = GCase::n_le_m;
        hi.variant = GCase::n_gt_m;
        variant_gap = std::max(variant_gap, sup_distance(solve_linear(sq, lo).field, solve_linear(sq, hi).field));
    }
    o.detail << "builtin residual " << residual << ", frozen BVP error " << bvp_err << ", variant gap "
             << variant_gap;
    o.require(residual <= 1e-10, "residual <= 1e-10");
    o.require(bvp_err <= 1e-6, "BVP <= 1e-6");
    o.require(variant_gap <= 1e-8, "variants agree <= 1e-8");
}

// 5. Duality identity on solution pairs of every builtin.
void duality(Outcome& o) {
    const TreePtr tree = two_state_tree(8);
    double opt = 0.0;
    double pred = 0.0;
    for (const std::string& name : builtin_names()) {
        const FBSDEProblem p1 = builtin_problem(name, tree);
        FBSDEProblem p2 = p1;
        p2.x0 = p1.x0 + Vector::Constant(p1.n(), 0.7);
        p2.forcing.xi = [m = p1.m()](int s) { return Vector::Constant(m, 0.3 * (s + 1)); };
        const DualityReport r =
            check_duality(p1, solve_continuation(p1).field, p2, solve_continuation(p2).field);
        opt = std::max(opt, r.gap_optional);
        pred = std::max(pred, r.gap_predictable);
    }
    o.detail << "optional gap " << opt << ", predictable gap " << pred;
    o.require(opt <= 1e-10, "optional gap <= 1e-10");
    o.require(pred <= 1e-10, "predictable gap <= 1e-10");
}

// 6. Two initializations converge to the same solution.
void uniqueness(Outcome& o) {
    const TreePtr tree = two_state_tree(8);
    double worst = 0.0;
    double direct = 0.0;
    int sweeps = 0;
    for (const std::string name : {"scalar-monotone", "thm3-mirror"}) {
        const FBSDEProblem p = builtin_problem(name, tree);
        const ContinuationResult a = solve_continuation(p, {}, SolutionField::zeros_like(*tree, p.n(), p.m()));
        const ContinuationResult b = solve_continuation(p, {}, random_field(*tree, p.n(), p.m(), 99));
        worst = std::max(worst, sup_distance(a.field, b.field));
        ContinuationConfig long_run;
        long_run.max_sweeps = 2000;
        const LevelResult c = solve_level(p, 1.0, SolutionField::zeros_like(*tree, p.n(), p.m()), long_run);
        const LevelResult d = solve_level(p, 1.0, random_field(*tree, p.n(), p.m(), 99), long_run);
        sweeps = std::max(sweeps, d.stats.sweeps);
        direct = std::max({direct, sup_distance(c.field, d.field), sup_distance(a.field, c.field)});
    }
    o.detail << "continuation sup distance " << worst << ", direct level-one sup distance " << direct
             << " (" << sweeps << " sweeps from the random start)";
    o.require(worst <= 1e-8, "continuation sup distance <= 1e-8");
    o.require(direct <= 1e-8, "direct sup distance <= 1e-8");
}

// 7. Structured solver against the brute-force oracle.
void oracle_equivalence(Outcome& o) {
    const auto start = Clock::now();
    double worst = 0.0;
    for (int N : {4, 8}) {
        const TreePtr tree = two_state_tree(N);
        for (const std::string& name : builtin_names()) {
            const FBSDEProblem p = builtin_problem(name, tree);
            worst = std::max(worst, sup_distance(solve_continuation(p).field, brute_force_solve(p, 1.0).field));
        }
    }
    const double wall = seconds_since(start);
    o.detail << "sup distance " << worst << ", " << wall << " s";
    o.require(worst <= 1e-8, "sup distance <= 1e-8");
    o.require(wall <= 120.0, "runtime <= 120 s");
}

// 8. Contraction of successive sweep differences.
void contraction(Outcome& o) {
    const TreePtr tree = two_state_tree(8);
    double last_worst = 0.0;
    double mean_ratio = 0.0;
    int count = 0;
    for (const std::string name : {"scalar-monotone", "thm3-mirror", "linear-affine", "two-dim-G"}) {
        const ContinuationResult r = solve_continuation(builtin_problem(name, tree));
        for (const LevelRecord& rec : r.report.levels) {
            const auto& norms = rec.stats.norms;
            for (std::size_t k = 1; k < norms.size(); ++k)
                o.require(norms[k] < norms[k - 1], name + " norms strictly decreasing");
            if (rec.stats.ratios.size() > 1) {
                last_worst = std::max(last_worst, rec.stats.ratios.back());
            }
            for (double q : rec.stats.ratios) {
                mean_ratio += q;
                ++count;
            }
        }
    }
    if (count > 0) mean_ratio /= count;
    o.detail << "worst final ratio " << last_worst << ", mean ratio " << mean_ratio;
    o.require(last_worst <= 0.9, "final ratio <= 0.9");
}

// 9. Assumption checkers on the scalar builtin.
void checkers(Outcome& o) {
    const FBSDEProblem p = builtin_problem("scalar-monotone", two_state_tree(8));
    const MonotonicityReport suff = check_monotonicity(p.coeffs, p.g, p.tree->model(), p.mode,
                                                       Flavor::proof_sufficient, 10000, 1);
    const MonotonicityReport lit =
        check_monotonicity(p.coeffs, p.g, p.tree->model(), p.mode, Flavor::literal, 10000, 1);
    o.detail << "sufficient " << to_string(suff.status) << " (c2 " << suff.c2 << ", c2p " << suff.c2p << ", c3 "
             << suff.c3 << "); literal " << to_string(lit.status);
    o.require(suff.status == CheckStatus::pass, "sufficient passes");
    o.require(std::min({suff.c2, suff.c2p, suff.c3}) >= 0.99, "constants >= 0.99");
    o.require(lit.status == CheckStatus::fail && lit.worst.has_value(), "literal fails with a witness");
    if (lit.worst) {
        const Witness& w = *lit.worst;
        o.detail << ", witness " << to_string(w.inequality) << "/" << to_string(w.kind);
        o.require((w.u1.z - w.u2.z).norm() == 0.0 && (w.u1.x - w.u2.x).norm() > 0.0, "witness has zero z, nonzero x");
    }
}

// 10. The two forms of the equations agree node-wise.
void form_equivalence(Outcome& o) {
    const TreePtr tree = two_state_tree(8);
    double worst = 0.0;
    for (const std::string& name : builtin_names()) {
        const FBSDEProblem p = builtin_problem(name, tree);
        for (double l : {0.0, 0.5, 1.0}) worst = std::max(worst, check_form_equivalence(p, l, std::nullopt, 3).max_discrepancy);
    }
    o.detail << "max discrepancy " << worst;
    o.require(worst <= 1e-12, "discrepancy <= 1e-12");
}

/// Conditional means E[(X, Y) | state at level k] over the nodes of one level.
Matrix conditional_means(const DiscreteChainTree& tree, const SolutionField& f, int k) {
    const int d = tree.d();
    Matrix acc = Matrix::Zero(f.n() + f.m(), d);
    Vector mass = Vector::Zero(d);
    for (NodeId v = tree.level_begin(k); v < tree.level_end(k); ++v) {
        const int s = tree.state(v);
        const double p = tree.probability(v);
        mass(s) += p;
        acc.col(s).head(f.n()) += p * f.x(v);
        acc.col(s).tail(f.m()) += p * f.y(v);
    }
    for (int s = 0; s < d; ++s)
        if (mass(s) > 0.0) acc.col(s) /= mass(s);
    return acc;
}

// 11. Solutions at N and 2N differ by C·Δt with a stable C.
void refinement(Outcome& o) {
    Matrix absorbing(2, 2);
    absorbing << -1, 0, 1, 0;
    const std::vector<int> steps{16, 32, 64, 128};
    for (const std::string& name : builtin_names()) {
        std::vector<std::pair<TreePtr, SolutionField>> sols;
        for (int N : steps) {
            const TreePtr tree = build_tree(ChainModel(absorbing), 1.0, N, 0);
            sols.emplace_back(tree, solve_continuation(builtin_problem(name, tree)).field);
        }
        std::vector<double> gaps;
        for (std::size_t i = 0; i + 1 < sols.size(); ++i) {
            double gap = 0.0;
            for (int k = 0; k <= steps[i]; ++k) {
                const Matrix a = conditional_means(*sols[i].first, sols[i].second, k);
                const Matrix b = conditional_means(*sols[i + 1].first, sols[i + 1].second, 2 * k);
                gap = std::max(gap, (a - b).cwiseAbs().maxCoeff());
            }
            gaps.push_back(gap);
        }
        o.detail << " " << name << ":";
        if (gaps.front() == 0.0) {
            o.detail << " exact";
            for (double g : gaps) o.require(g == 0.0, name + " stays exact");
            continue;
        }
        for (std::size_t i = 1; i < gaps.size(); ++i) {
            const double ratio = gaps[i - 1] / gaps[i];
            o.detail << " " << ratio;
            o.require(ratio >= 1.6 && ratio <= 2.4, name + " ratio in [1.6, 2.4]");
        }
    }
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"qv-consistency", qv_consistency},
        {"martingale-representation", representation},
        {"riccati", riccati},
        {"linear-solver", linear_solver},
        {"duality-identity", duality},
        {"uniqueness", uniqueness},
        {"oracle-equivalence", oracle_equivalence},
        {"contraction", contraction},
        {"assumption-checkers", checkers},
        {"form-equivalence", form_equivalence},
        {"refinement-consistency", refinement},
    };
    int failures = 0;
    int index = 0;
    for (const auto& [name, run] : criteria) {
        ++index;
        Outcome o;
        const auto start = Clock::now();
        try {
            run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        if (!o.pass) ++failures;
        std::printf("%s %2d %-26s %.1fs  %s\n", o.pass ? "PASS" : "FAIL", index, name.c_str(), seconds_since(start),
                    o.detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
