#include <gtest/gtest.h>

#include <cmath>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/verify.hpp"
#include "test_support.hpp"

using namespace mcfbsde;
using testing_support::random_matrix;
using testing_support::two_state;

namespace {

TripleVector random_triple(int n, int m, int d, std::uint64_t seed) {
    return {random_matrix(n, 1, seed), random_matrix(m, 1, seed + 1), random_matrix(m, d, seed + 2)};
}

CoefficientSet affine_coefficients(int n, int m, int d, std::uint64_t seed) {
    const Matrix bx = random_matrix(n, n, seed), by = random_matrix(n, m, seed + 1);
    const Matrix fx = random_matrix(m, n, seed + 2), fy = random_matrix(m, m, seed + 3);
    const Matrix fz = random_matrix(m, m, seed + 4);
    const Matrix sz = random_matrix(n, m, seed + 5);
    CoefficientSet c;
    c.n = n;
    c.m = m;
    c.d = d;
    c.b = [=](double t, int s, const Vector& x, const Vector& y, const Matrix&) {
        return Vector(bx * x + by * y + Vector::Constant(n, 0.1 * s + t));
    };
    c.sigma = [=](double, int, const Vector& x, const Vector&, const Matrix& z) {
        return Matrix(sz * z + x.sum() * Matrix::Ones(n, d));
    };
    c.f = [=](double, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return Vector(fx * x + fy * y + fz * z.col(0) + Vector::Constant(m, s));
    };
    c.Phi = [=](int, const Vector& x) { return Vector(fx * x); };
    return c;
}

}  // namespace

TEST(GStructure, CaseTagsAndProjectors) {
    const GStructure tall(random_matrix(3, 2, 4));
    EXPECT_EQ(tall.case_tag(), GCase::n_le_m);
    const Matrix& p = tall.range_projector();
    EXPECT_LE((p * p - p).norm(), 1e-10);
    EXPECT_LE((p - p.transpose()).norm(), 1e-14);
    EXPECT_LE((p * tall.G() - tall.G()).norm(), 1e-10);
    EXPECT_THROW(tall.row_projector(), ValidationError);

    const GStructure wide(random_matrix(2, 3, 9));
    EXPECT_EQ(wide.case_tag(), GCase::n_gt_m);
    const Matrix& pp = wide.row_projector();
    EXPECT_LE((pp * pp - pp).norm(), 1e-10);
    EXPECT_LE((wide.G() * pp - wide.G()).norm(), 1e-10);
    EXPECT_THROW(wide.gtg_inverse(), ValidationError);

    const GStructure square(random_matrix(2, 2, 13));
    EXPECT_EQ(square.case_tag(), GCase::n_le_m);
    EXPECT_NO_THROW(square.range_projector());
    EXPECT_NO_THROW(square.row_projector());
}

TEST(GStructure, RejectsRankDeficient) {
    Matrix g(2, 2);
    g << 1, 2, 2, 4;
    EXPECT_THROW(GStructure{g}, ValidationError);
    EXPECT_THROW(GStructure{Matrix::Zero(2, 1)}, ValidationError);
    Matrix ill(2, 2);
    ill << 1, 0, 0, 1e-9;
    EXPECT_THROW(GStructure{ill}, ValidationError);
}

TEST(Bracket, HandExamples) {
    TripleVector e{Vector::Unit(2, 1), Vector::Zero(1), Matrix::Zero(1, 2)};
    EXPECT_DOUBLE_EQ(bracket(e, e), 1.0);
    TripleVector a{Vector(2), Vector::Zero(1), Matrix::Zero(1, 2)};
    TripleVector b = a;
    a.x << 1, 2;
    b.x << 3, 4;
    EXPECT_DOUBLE_EQ(bracket(a, b), 11.0);
    TripleVector z{Vector::Zero(1), Vector::Zero(2), Matrix::Identity(2, 2)};
    EXPECT_DOUBLE_EQ(bracket(z, z), 2.0);
}

TEST(Bracket, DimensionMismatchThrows) {
    const TripleVector a = TripleVector::zero(1, 1, 2);
    const TripleVector b = TripleVector::zero(2, 1, 2);
    EXPECT_THROW(bracket(a, b), ValidationError);
}

TEST(Bracket, SymmetricAndBilinear) {
    for (std::uint64_t k = 0; k < 20; ++k) {
        const TripleVector u = random_triple(2, 3, 2, 10 * k);
        const TripleVector v = random_triple(2, 3, 2, 10 * k + 3);
        const TripleVector w = random_triple(2, 3, 2, 10 * k + 6);
        const double a = 0.7 - 0.1 * static_cast<double>(k);
        const TripleVector av_w{a * v.x + w.x, a * v.y + w.y, a * v.z + w.z};
        EXPECT_NEAR(bracket(u, v), bracket(v, u), 1e-12);
        EXPECT_NEAR(bracket(u, av_w), a * bracket(u, v) + bracket(u, w), 1e-12);
    }
}

TEST(EvalFH, ZeroCoefficientsGiveZero) {
    const CoefficientSet c = zero_coefficients(2, 3, 2);
    const GStructure g(random_matrix(3, 2, 1));
    const TripleVector u = random_triple(2, 3, 2, 5);
    const TripleVector f = eval_F(c, g, 0.3, 1, u);
    const TripleVector h = eval_H(c, g, 0.3, 1, u);
    EXPECT_EQ(f.x.norm() + f.y.norm() + f.z.norm(), 0.0);
    EXPECT_EQ(h.x.norm() + h.y.norm() + h.z.norm(), 0.0);
}

TEST(EvalFH, ScalarSubstitution) {
    CoefficientSet c = zero_coefficients(1, 1, 2);
    c.f = [](double, int, const Vector& x, const Vector&, const Matrix&) { return x; };
    c.b = [](double, int, const Vector&, const Vector& y, const Matrix&) { return Vector(-y); };
    const GStructure g(Matrix::Identity(1, 1));
    TripleVector u = TripleVector::zero(1, 1, 2);
    u.x(0) = 2;
    u.y(0) = 3;
    const TripleVector f = eval_F(c, g, 0.0, 0, u);
    EXPECT_DOUBLE_EQ(f.x(0), -2.0);
    EXPECT_DOUBLE_EQ(f.y(0), -3.0);
    EXPECT_EQ(f.z.norm(), 0.0);
}

TEST(EvalFH, ColumnwiseDiffusion) {
    CoefficientSet c = zero_coefficients(1, 2, 2);
    c.sigma = [](double, int, const Vector&, const Vector&, const Matrix&) {
        Matrix s(1, 2);
        s << 1, 0;
        return s;
    };
    const GStructure g(Matrix::Ones(2, 1));
    const TripleVector h = eval_H(c, g, 0.0, 0, TripleVector::zero(1, 2, 2));
    Matrix expected(2, 2);
    expected << 1, 0, 1, 0;
    EXPECT_EQ(h.z, expected);
    EXPECT_EQ(h.x.norm() + h.y.norm(), 0.0);
}

TEST(EvalFH, MonotonicityFormInvariantUnderConstantShift) {
    const CoefficientSet c = affine_coefficients(2, 2, 2, 17);
    CoefficientSet shifted = c;
    shifted.b = [c](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return Vector(c.b(t, s, x, y, z) + Vector::Constant(2, 3.5));
    };
    shifted.f = [c](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return Vector(c.f(t, s, x, y, z) - Vector::Constant(2, 1.25));
    };
    shifted.sigma = [c](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return Matrix(c.sigma(t, s, x, y, z) + Matrix::Constant(2, 2, 0.5));
    };
    const GStructure g(random_matrix(2, 2, 3));
    for (std::uint64_t k = 0; k < 10; ++k) {
        const TripleVector u1 = random_triple(2, 2, 2, 100 + 7 * k);
        const TripleVector u2 = random_triple(2, 2, 2, 200 + 7 * k);
        const TripleVector du = u1 - u2;
        const double base = bracket(eval_F(c, g, 0.2, 1, u1) - eval_F(c, g, 0.2, 1, u2), du);
        const double moved =
            bracket(eval_F(shifted, g, 0.2, 1, u1) - eval_F(shifted, g, 0.2, 1, u2), du);
        EXPECT_NEAR(base, moved, 1e-12);
        const double hb = bracket(eval_H(c, g, 0.2, 1, u1) - eval_H(c, g, 0.2, 1, u2), du);
        const double hm =
            bracket(eval_H(shifted, g, 0.2, 1, u1) - eval_H(shifted, g, 0.2, 1, u2), du);
        EXPECT_NEAR(hb, hm, 1e-12);
    }
}

TEST(WeightedBracket, HandExamples) {
    Matrix q(2, 2);
    q << 1, -1, -1, 1;
    Matrix e(1, 2);
    e << 1, 0;
    Matrix ones = Matrix::Ones(1, 2);
    EXPECT_DOUBLE_EQ(weighted_bracket(e, e, Matrix::Zero(2, 2)), 0.0);
    EXPECT_DOUBLE_EQ(weighted_bracket(e, e, q), 1.0);
    EXPECT_DOUBLE_EQ(weighted_bracket(ones, ones, q), 0.0);
}

TEST(WeightedBracket, RejectsIndefiniteOrAsymmetric) {
    const Matrix e = Matrix::Ones(1, 2);
    Matrix neg(2, 2);
    neg << -1, 0, 0, 1;
    Matrix asym(2, 2);
    asym << 1, 1, 0, 1;
    EXPECT_THROW(weighted_bracket(e, e, neg), ValidationError);
    EXPECT_THROW(weighted_bracket(e, e, asym), ValidationError);
    EXPECT_THROW(weighted_bracket(e, Matrix::Ones(2, 2), Matrix::Identity(2, 2)), ValidationError);
}

TEST(ChainDriven, UnchangedWithoutSigmaAndZ) {
    CoefficientSet c = affine_coefficients(1, 1, 2, 3);
    c.sigma = [](double, int, const Vector&, const Vector&, const Matrix&) { return Matrix::Zero(1, 2); };
    c.f = [](double, int, const Vector& x, const Vector& y, const Matrix&) { return Vector(x + y); };
    const CoefficientSet cd = to_chain_driven(c, ChainModel(two_state()));
    const Vector x = Vector::Constant(1, 0.3), y = Vector::Constant(1, -1.1);
    const Matrix z = random_matrix(1, 2, 8);
    const Matrix flat = Matrix::Constant(1, 2, 0.6);  // z·A·m = 0 since columns of A sum to zero
    for (int s = 0; s < 2; ++s) {
        EXPECT_EQ(cd.b(0.1, s, x, y, z), c.b(0.1, s, x, y, z));
        EXPECT_NEAR((cd.f(0.1, s, x, y, flat) - c.f(0.1, s, x, y, flat)).norm(), 0.0, 1e-15);
        const Vector shift = z * two_state().col(s);
        EXPECT_NEAR((cd.f(0.1, s, x, y, z) - c.f(0.1, s, x, y, z) - shift).norm(), 0.0, 1e-15);
    }
}

TEST(ChainDriven, DriftShiftHandExample) {
    CoefficientSet c = zero_coefficients(1, 1, 2);
    c.sigma = [](double, int, const Vector&, const Vector&, const Matrix&) {
        Matrix s(1, 2);
        s << 1, 0;
        return s;
    };
    c.b = [](double, int, const Vector& x, const Vector&, const Matrix&) { return x; };
    const CoefficientSet cd = to_chain_driven(c, ChainModel(two_state()));
    const Vector x = Vector::Constant(1, 0.25);
    const Vector bss = cd.b(0.0, 0, x, Vector::Zero(1), Matrix::Zero(1, 2));
    EXPECT_DOUBLE_EQ(bss(0), 1.25);
}

TEST(ChainDriven, FullTreeFormEquivalence) {
    const TreePtr tree = build_tree(ChainModel(two_state()), 1.0, 6, 0);
    FBSDEProblem p;
    p.coeffs = affine_coefficients(1, 1, 2, 41);
    p.g = GStructure(Matrix::Identity(1, 1));
    p.x0 = Vector::Constant(1, 0.4);
    p.tree = tree;
    for (double l : {0.0, 0.5, 1.0}) {
        const FormEquivalenceReport r = check_form_equivalence(p, l, std::nullopt, 19);
        EXPECT_LE(r.max_discrepancy, 1e-12) << "level " << l;
    }
}

TEST(ChainDriven, FormEquivalenceOnBuiltins) {
    const TreePtr tree = build_tree(ChainModel(two_state()), 1.0, 8, 0);
    for (const std::string& name : builtin_names()) {
        const FBSDEProblem p = testing_support::builtin_problem(name, tree);
        const FormEquivalenceReport r = check_form_equivalence(p, 1.0, std::nullopt, 3);
        EXPECT_LE(r.max_discrepancy, 1e-12) << name;
    }
}
