#pragma once

#include <functional>
#include <string>
#include <utility>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"
#include "mcfbsde/mode.hpp"

namespace mcfbsde {

/// Exterior forcing (φ, ψ, γ, ξ).  Empty functions mean zero.
struct Forcing {
    std::function<Vector(double t, int s)> phi;    // ℝⁿ
    std::function<Matrix(double t, int s)> psi;    // ℝ^{n×d}
    std::function<Vector(double t, int s)> gamma;  // ℝᵐ
    std::function<Vector(int s)> xi;               // ℝᵐ, terminal

    Vector phi_at(double t, int s, int n) const {
        return phi ? check(phi(t, s), n, "phi") : Vector::Zero(n);
    }
    Matrix psi_at(double t, int s, int n, int d) const {
        if (!psi) return Matrix::Zero(n, d);
        Matrix out = psi(t, s);
        if (out.rows() != n || out.cols() != d) throw ValidationError("forcing psi has wrong shape");
        if (!out.allFinite()) throw ValidationError("forcing psi is not finite");
        return out;
    }
    Vector gamma_at(double t, int s, int m) const {
        return gamma ? check(gamma(t, s), m, "gamma") : Vector::Zero(m);
    }
    Vector xi_at(int s, int m) const { return xi ? check(xi(s), m, "xi") : Vector::Zero(m); }

private:
    static Vector check(Vector v, int size, const char* name) {
        if (v.size() != size) throw ValidationError(std::string("forcing ") + name + " has wrong length");
        if (!v.allFinite()) throw ValidationError(std::string("forcing ") + name + " is not finite");
        return v;
    }
};

/// Fully coupled problem on a tree, plus the linear part used by the
/// continuation family.
struct FBSDEProblem {
    CoefficientSet coeffs;
    GStructure g{Matrix::Identity(1, 1)};
    Vector x0;
    Mode mode = Mode::thm2;
    double c2 = 0.5;
    double c2p = 0.5;
    TreePtr tree;
    Forcing forcing;

    int n() const { return coeffs.n; }
    int m() const { return coeffs.m; }
    int d() const { return coeffs.d; }

    void validate() const {
        if (!tree) throw ValidationError("problem has no tree");
        if (coeffs.n < 1 || coeffs.m < 1) throw ValidationError("dimensions n, m must be positive");
        if (coeffs.d != tree->d()) throw ValidationError("coefficient d does not match the chain");
        if (g.n() != coeffs.n || g.m() != coeffs.m) throw ValidationError("G must be m x n");
        linalg::require_size(x0, coeffs.n, "x0");
        if (!x0.allFinite()) throw ValidationError("x0 is not finite");
        if (!(c2 > 0.0) || !(c2p > 0.0)) throw ValidationError("c2 and c2' must be positive");
        if (!coeffs.b || !coeffs.sigma || !coeffs.f || !coeffs.Phi)
            throw ValidationError("coefficient set is incomplete");
    }
};

/// Linear problem with coupling constants (c₂, c₂′), terminal weight λ and
/// forcing: the l = 0 member of the continuation family when λ = 1.
struct LinearFBSDEProblem {
    Mode mode = Mode::thm2;
    double c2 = 0.5;
    double c2p = 0.5;
    double lambda = 1.0;
    GStructure g{Matrix::Identity(1, 1)};
    Vector x0;
    Forcing forcing;
    TreePtr tree;

    int n() const { return g.n(); }
    int m() const { return g.m(); }

    void validate() const {
        if (!tree) throw ValidationError("problem has no tree");
        linalg::require_size(x0, g.n(), "x0");
        if (!x0.allFinite()) throw ValidationError("x0 is not finite");
        if (!(c2 > 0.0) || !(c2p > 0.0)) throw ValidationError("c2 and c2' must be positive");
        if (!(lambda >= 0.0)) throw ValidationError("lambda must be nonnegative");
    }
};

namespace detail {

inline CoefficientSet family_coefficients(const CoefficientSet* user, const GStructure& g,
                                          Mode mode, double c2, double c2p, double l,
                                          double lambda, const Forcing& forcing, int d) {
    const int n = g.n();
    const int m = g.m();
    const double s = mode_sign(mode);
    const double lin = 1.0 - l;
    const Matrix G = g.G();
    const Matrix Gt = G.transpose();
    const bool use_user = user != nullptr && l != 0.0;
    CoefficientSet c;
    c.n = n;
    c.m = m;
    c.d = d;
    CoefficientSet u = user ? *user : CoefficientSet{};
    c.b = [=](double t, int st, const Vector& x, const Vector& y, const Matrix& z) {
        Vector out = forcing.phi_at(t, st, n);
        if (lin != 0.0) out.noalias() -= s * lin * c2p * (Gt * y);
        if (use_user) out += l * u.b_at(t, st, x, y, z);
        return out;
    };
    c.sigma = [=](double t, int st, const Vector& x, const Vector& y, const Matrix& z) {
        Matrix out = forcing.psi_at(t, st, n, d);
        if (lin != 0.0) out.noalias() -= s * lin * c2p * (Gt * z);
        if (use_user) out += l * u.sigma_at(t, st, x, y, z);
        return out;
    };
    c.f = [=](double t, int st, const Vector& x, const Vector& y, const Matrix& z) {
        Vector out = forcing.gamma_at(t, st, m);
        if (lin != 0.0) out.noalias() += s * lin * c2 * (G * x);
        if (use_user) out += l * u.f_at(t, st, x, y, z);
        return out;
    };
    c.Phi = [=](int st, const Vector& x) {
        Vector out = forcing.xi_at(st, m);
        if (lin != 0.0) out.noalias() += lin * lambda * (G * x);
        if (use_user) out += l * u.Phi_at(st, x);
        return out;
    };
    return c;
}

}  // namespace detail

/// Coefficients of the level-l member of the continuation family:
///   B = ∓(1−l)c₂′G*y + l b + φ,   Σ = ∓(1−l)c₂′G*z + l σ + ψ,
///   F = ±(1−l)c₂Gx + l f + γ,     Ψ = lΦ + (1−l)Gx + ξ,
/// upper signs for thm2.
inline CoefficientSet level_coefficients(const FBSDEProblem& p, double l) {
    if (!(l >= 0.0 && l <= 1.0)) throw ValidationError("coupling level must lie in [0, 1]");
    return detail::family_coefficients(&p.coeffs, p.g, p.mode, p.c2, p.c2p, l, 1.0, p.forcing,
                                       p.d());
}

/// Coefficients of the linear problem (Ψ = λGx + ξ).
inline CoefficientSet linear_coefficients(const LinearFBSDEProblem& p) {
    return detail::family_coefficients(nullptr, p.g, p.mode, p.c2, p.c2p, 0.0, p.lambda,
                                       p.forcing, p.tree->d());
}

/// The level-0 linear problem of a fully coupled problem (λ = 1).
inline LinearFBSDEProblem level_zero_problem(const FBSDEProblem& p) {
    LinearFBSDEProblem lp;
    lp.mode = p.mode;
    lp.c2 = p.c2;
    lp.c2p = p.c2p;
    lp.lambda = 1.0;
    lp.g = p.g;
    lp.x0 = p.x0;
    lp.forcing = p.forcing;
    lp.tree = p.tree;
    return lp;
}

}  // namespace mcfbsde
