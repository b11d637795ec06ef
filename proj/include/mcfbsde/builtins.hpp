#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"
#include "mcfbsde/mode.hpp"
#include "mcfbsde/rng.hpp"

namespace mcfbsde {

/// A named problem: coefficients, coupling matrix, sign family and a
/// default starting point.
struct BuiltinProblem {
    std::string name;
    CoefficientSet coeffs;
    Matrix G;
    Mode mode = Mode::thm2;
    Vector x0;
};

inline const std::vector<std::string>& builtin_names() {
    static const std::vector<std::string> names = {"zero", "scalar-monotone", "linear-affine",
                                                   "two-dim-G", "thm3-mirror"};
    return names;
}

namespace detail {

inline Matrix random_spd(std::mt19937_64& rng, int k, double lo, double hi) {
    Matrix a(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) a(i, j) = uniform(rng, -1.0, 1.0);
    const Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix q = qr.householderQ();
    Vector ev(k);
    for (int i = 0; i < k; ++i) ev(i) = uniform(rng, lo, hi);
    return linalg::symmetrize(q * ev.asDiagonal() * q.transpose());
}

inline Matrix random_matrix(std::mt19937_64& rng, int r, int c, double half) {
    Matrix a(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a(i, j) = uniform(rng, -half, half);
    return a;
}

inline BuiltinProblem scalar_problem(const std::string& name, int d, double sign) {
    BuiltinProblem p;
    p.name = name;
    p.G = Matrix::Identity(1, 1);
    p.mode = sign > 0 ? Mode::thm2 : Mode::thm3;
    p.x0 = Vector::Ones(1);
    CoefficientSet& c = p.coeffs;
    c.n = 1;
    c.m = 1;
    c.d = d;
    c.b = [sign](double, int, const Vector&, const Vector& y, const Matrix&) { return Vector(-sign * y); };
    c.sigma = [sign](double, int, const Vector&, const Vector&, const Matrix& z) { return Matrix(-sign * z); };
    c.f = [sign](double, int, const Vector& x, const Vector&, const Matrix&) { return Vector(sign * x); };
    c.Phi = [sign](int, const Vector& x) { return Vector(sign * x); };
    return p;
}

}  // namespace detail

/// Builds a builtin for a chain with d states.  linear-affine draws its
/// matrices from `seed`.
inline BuiltinProblem make_builtin(const std::string& name, int d, std::uint64_t seed = 0) {
    if (name == "zero") {
        BuiltinProblem p;
        p.name = name;
        p.G = Matrix::Identity(1, 1);
        p.coeffs = zero_coefficients(1, 1, d);
        p.coeffs.Phi = [](int, const Vector& x) { return x; };
        p.x0 = Vector::Zero(1);
        return p;
    }
    if (name == "scalar-monotone") return detail::scalar_problem(name, d, 1.0);
    if (name == "thm3-mirror") return detail::scalar_problem(name, d, -1.0);
    if (name == "two-dim-G") {
        BuiltinProblem p;
        p.name = name;
        p.G = Matrix::Ones(2, 1);
        p.x0 = Vector::Ones(1);
        const Matrix G = p.G;
        CoefficientSet& c = p.coeffs;
        c.n = 1;
        c.m = 2;
        c.d = d;
        c.b = [G](double, int, const Vector&, const Vector& y, const Matrix&) { return Vector(-G.transpose() * y); };
        c.sigma = [G](double, int, const Vector&, const Vector&, const Matrix& z) { return Matrix(-G.transpose() * z); };
        c.f = [G](double, int, const Vector& x, const Vector&, const Matrix&) { return Vector(G * x); };
        c.Phi = [G](int, const Vector& x) { return Vector(G * x); };
        return p;
    }
    if (name == "linear-affine") {
        // b = −P_y y + C x + b₀(s),  f = P_x x + C* y + f₀(s),
        // σ = −S z + σ₀(s),          Φ = R x + Φ₀(s),
        // with P_x, P_y, S, R symmetric and spectra in [0.5, 1.5].
        std::mt19937_64 rng(stream_seed(seed, 0x1a2b));
        const Matrix px = detail::random_spd(rng, 2, 0.5, 1.5);
        const Matrix py = detail::random_spd(rng, 2, 0.5, 1.5);
        const Matrix sm = detail::random_spd(rng, 2, 0.5, 1.5);
        const Matrix rm = detail::random_spd(rng, 2, 0.5, 1.5);
        const Matrix cm = detail::random_matrix(rng, 2, 2, 0.5);
        const Matrix b0 = detail::random_matrix(rng, 2, d, 0.5);
        const Matrix f0 = detail::random_matrix(rng, 2, d, 0.5);
        const Matrix phi0 = detail::random_matrix(rng, 2, d, 0.5);
        std::vector<Matrix> s0;
        for (int s = 0; s < d; ++s) s0.push_back(detail::random_matrix(rng, 2, d, 0.5));
        BuiltinProblem p;
        p.name = name;
        p.G = Matrix::Identity(2, 2);
        p.x0 = Vector::Ones(2);
        CoefficientSet& c = p.coeffs;
        c.n = 2;
        c.m = 2;
        c.d = d;
        c.b = [=](double, int s, const Vector& x, const Vector& y, const Matrix&) {
            return Vector(-py * y + cm * x + b0.col(s));
        };
        c.sigma = [=](double, int s, const Vector&, const Vector&, const Matrix& z) {
            return Matrix(-sm * z + s0[static_cast<std::size_t>(s)]);
        };
        c.f = [=](double, int s, const Vector& x, const Vector& y, const Matrix&) {
            return Vector(px * x + cm.transpose() * y + f0.col(s));
        };
        c.Phi = [=](int s, const Vector& x) { return Vector(rm * x + phi0.col(s)); };
        return p;
    }
    throw ValidationError("unknown builtin '" + name + "'");
}

}  // namespace mcfbsde
