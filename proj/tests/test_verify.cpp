#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mcfbsde/linear_fbsde.hpp"
#include "mcfbsde/solver.hpp"
#include "mcfbsde/verify.hpp"
#include "test_support.hpp"

using namespace mcfbsde;
using testing_support::builtin_problem;
using testing_support::random_matrix;
using testing_support::two_state;

namespace {

MonotonicityReport check(const FBSDEProblem& p, Flavor flavor, int samples = 10000, std::uint64_t seed = 1) {
    return check_monotonicity(p.coeffs, p.g, p.tree->model(), p.mode, flavor, samples, seed, {2.0, 1.0});
}

TreePtr tree8() { return build_tree(ChainModel(two_state()), 1.0, 8, 0); }

}  // namespace

TEST(Monotonicity, ScalarMonotoneSufficientPasses) {
    const MonotonicityReport r = check(builtin_problem("scalar-monotone", tree8()), Flavor::proof_sufficient);
    EXPECT_EQ(r.status, CheckStatus::pass);
    EXPECT_GE(r.c2, 0.99);
    EXPECT_GE(r.c2p, 0.99);
    EXPECT_GE(r.c3, 0.99);
    EXPECT_EQ(r.violations, 0);
    EXPECT_EQ(r.samples, 10000);
}

TEST(Monotonicity, ScalarMonotoneLiteralFailsWithForcedWitness) {
    const FBSDEProblem p = builtin_problem("scalar-monotone", tree8());
    const MonotonicityReport r = check(p, Flavor::literal);
    EXPECT_EQ(r.status, CheckStatus::fail);
    ASSERT_TRUE(r.worst.has_value());
    const Witness& w = *r.worst;
    EXPECT_EQ(w.inequality, Inequality::H);
    EXPECT_EQ(w.kind, SampleKind::x_only);
    EXPECT_EQ((w.u1.z - w.u2.z).norm(), 0.0);
    EXPECT_GT((w.u1.x - w.u2.x).norm(), 0.0);
    EXPECT_LE(r.c2, 1e-12);
    EXPECT_GT(r.violations, 0);
}

TEST(Monotonicity, WitnessReevaluates) {
    const FBSDEProblem p = builtin_problem("linear-affine", tree8());
    for (Flavor flavor : {Flavor::literal, Flavor::proof_sufficient}) {
        const MonotonicityReport r = check(p, flavor, 2000);
        for (const auto* w : {&r.witness_c2, &r.witness_c2p, &r.witness_c3}) {
            if (!w->has_value()) continue;
            const double again = evaluate_witness(p.coeffs, p.g, p.tree->model(), p.mode, flavor, **w);
            EXPECT_DOUBLE_EQ(again, (*w)->margin) << to_string(flavor);
        }
    }
}

TEST(Monotonicity, MirrorPassesOnlyInItsMode) {
    const FBSDEProblem p = builtin_problem("thm3-mirror", tree8());
    EXPECT_EQ(check(p, Flavor::proof_sufficient).status, CheckStatus::pass);
    FBSDEProblem wrong = p;
    wrong.mode = Mode::thm2;
    EXPECT_EQ(check(wrong, Flavor::proof_sufficient).status, CheckStatus::fail);
}

TEST(Monotonicity, OtherBuiltins) {
    for (const std::string name : {"linear-affine", "two-dim-G"}) {
        const MonotonicityReport r = check(builtin_problem(name, tree8()), Flavor::proof_sufficient, 4000);
        EXPECT_EQ(r.status, CheckStatus::pass) << name;
        EXPECT_EQ(check(builtin_problem(name, tree8()), Flavor::literal, 4000).status, CheckStatus::fail) << name;
    }
}

TEST(Monotonicity, ZeroProblemIsDegenerate) {
    const MonotonicityReport r = check(builtin_problem("zero", tree8()), Flavor::proof_sufficient, 2000);
    EXPECT_EQ(r.status, CheckStatus::degenerate);
}

TEST(Monotonicity, EstimatesShrinkWithNestedSamples) {
    const FBSDEProblem p = builtin_problem("linear-affine", tree8());
    const MonotonicityReport small = check(p, Flavor::proof_sufficient, 1000, 5);
    const MonotonicityReport large = check(p, Flavor::proof_sufficient, 8000, 5);
    EXPECT_LE(large.c2, small.c2);
    EXPECT_LE(large.c2p, small.c2p);
    EXPECT_LE(large.c3, small.c3);
}

TEST(Monotonicity, RejectsBadArguments) {
    const FBSDEProblem p = builtin_problem("scalar-monotone", tree8());
    EXPECT_THROW(check(p, Flavor::literal, 0), ValidationError);
    EXPECT_THROW(check_monotonicity(p.coeffs, p.g, ChainModel(Matrix::Zero(3, 3)), p.mode,
                                    Flavor::literal, 10, 1),
                 ValidationError);
    EXPECT_THROW(parse_flavor("strict"), ValidationError);
    EXPECT_EQ(parse_flavor("literal"), Flavor::literal);
    EXPECT_EQ(parse_flavor("sufficient"), Flavor::proof_sufficient);
}

TEST(Lipschitz, LinearDriftMatchesOperatorNorm) {
    const Matrix B = random_matrix(2, 2, 33, 2.0);
    CoefficientSet c = zero_coefficients(2, 2, 2);
    c.b = [B](double, int, const Vector& x, const Vector&, const Matrix&) { return Vector(B * x); };
    const LipschitzReport r =
        check_lipschitz(c, GStructure(Matrix::Identity(2, 2)), ChainModel(two_state()), 10000, 3);
    const double norm = Eigen::JacobiSVD<Matrix>(B).singularValues()(0);
    EXPECT_LE(r.b, norm * (1 + 1e-12));
    EXPECT_GE(r.b, 0.95 * norm);
}

TEST(Lipschitz, TanhTerminalBoundedByOne) {
    CoefficientSet c = zero_coefficients(2, 2, 2);
    c.Phi = [](int, const Vector& x) { return Vector(x.array().tanh()); };
    const LipschitzReport r =
        check_lipschitz(c, GStructure(Matrix::Identity(2, 2)), ChainModel(two_state()), 10000, 4);
    EXPECT_LE(r.Phi, 1.0 + 1e-6);
    EXPECT_GE(r.Phi, 0.9);
}

TEST(Lipschitz, ScalarBuiltinConstants) {
    const FBSDEProblem p = builtin_problem("scalar-monotone", tree8());
    const LipschitzReport r = check_lipschitz(p.coeffs, p.g, p.tree->model(), 4000, 5);
    EXPECT_NEAR(r.b, 1.0, 1e-12);
    EXPECT_NEAR(r.f, 1.0, 1e-12);
    EXPECT_NEAR(r.Phi, 1.0, 1e-12);
    EXPECT_LE(r.sigma, 1.0 + 1e-12);
}

TEST(Duality, ExactOnSolutionPairsOfBuiltins) {
    const TreePtr tree = tree8();
    for (const std::string& name : builtin_names()) {
        const FBSDEProblem p1 = builtin_problem(name, tree);
        FBSDEProblem p2 = p1;
        p2.x0 = p1.x0 + Vector::Constant(p1.n(), 0.7);
        p2.forcing.xi = [m = p1.m()](int s) { return Vector::Constant(m, 0.3 * (s + 1)); };
        const SolutionField u1 = solve_continuation(p1).field;
        const SolutionField u2 = solve_continuation(p2).field;
        const DualityReport r = check_duality(p1, u1, p2, u2);
        EXPECT_LE(r.gap_optional, 1e-10) << name;
        EXPECT_LE(r.gap_predictable, 1e-10) << name;
    }
}

namespace {

FBSDEProblem lift(const LinearFBSDEProblem& l) {
    FBSDEProblem p;
    p.coeffs = linear_coefficients(l);
    p.g = l.g;
    p.x0 = l.x0;
    p.tree = l.tree;
    return p;
}

DualityReport linear_xi_pair(const TreePtr& tree) {
    LinearFBSDEProblem lp;
    lp.g = GStructure(random_matrix(2, 2, 4));
    lp.x0 = Vector::Ones(2);
    lp.lambda = 0.5;
    lp.tree = tree;
    LinearFBSDEProblem lq = lp;
    lq.forcing.xi = [](int s) { return Vector::Constant(2, 1.0 - s); };
    return check_duality(lift(lp), solve_linear(lp).field, lift(lq), solve_linear(lq).field);
}

}  // namespace

TEST(Duality, ExactForLinearXiPerturbation) {
    const TreePtr tree = build_tree(ChainModel(testing_support::random_generator(3, 12)), 1.0, 6, 0);
    const DualityReport r = linear_xi_pair(tree);
    EXPECT_LE(r.gap_predictable, 1e-10);
    EXPECT_LE(r.gap_optional, 1e-10);
    EXPECT_GT(std::abs(r.predictable_term), 1e-3);
}

TEST(Duality, RandomFieldsDoNotSatisfyIdentity) {
    const TreePtr tree = tree8();
    const FBSDEProblem p = builtin_problem("scalar-monotone", tree);
    const DualityReport r = check_duality(p, random_field(*tree, 1, 1, 1), p, random_field(*tree, 1, 1, 2));
    EXPECT_GT(r.gap_optional, 1e-3);
}

TEST(Duality, ContinuousFormGapShrinksWithStep) {
    const Matrix a = testing_support::random_generator(3, 12);
    std::vector<double> gaps;
    for (int N : {3, 6, 12}) {
        const DualityReport r = linear_xi_pair(build_tree(ChainModel(a), 1.0, N, 0));
        EXPECT_LE(r.gap_predictable, 1e-10);
        gaps.push_back(r.gap_continuous);
    }
    EXPECT_GT(gaps[0], 1e-8);
    EXPECT_LT(gaps[1], gaps[0]);
    EXPECT_LT(gaps[2], gaps[1]);
}

TEST(QvConsistency, SymmetricTwoState) {
    const QVReport r = check_qv_consistency(ChainModel(testing_support::symmetric_two_state()), 1.0, 100,
                                            200000, 42);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.relative_error, 0.02);
    EXPECT_LE(r.relative_error, r.clt_tolerance);
}

TEST(QvConsistency, RandomThreeState) {
    const QVReport r =
        check_qv_consistency(ChainModel(testing_support::random_generator(3, 31)), 1.0, 100, 200000, 7);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.relative_error, 0.02);
    EXPECT_LE(r.seconds, 60.0);
}

TEST(QvConsistency, DeterministicGivenSeed) {
    const ChainModel model(two_state());
    const QVReport a = check_qv_consistency(model, 1.0, 20, 10000, 3);
    const QVReport b = check_qv_consistency(model, 1.0, 20, 10000, 3);
    EXPECT_EQ(a.mean_optional, b.mean_optional);
}

TEST(FormEquivalence, ZeroCoefficientsGiveZero) {
    const TreePtr tree = tree8();
    FBSDEProblem p = builtin_problem("zero", tree);
    const FormEquivalenceReport r = check_form_equivalence(p, 1.0, SolutionField::zeros_like(*tree, 1, 1));
    EXPECT_EQ(r.max_discrepancy, 0.0);
}
