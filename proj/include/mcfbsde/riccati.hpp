#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"
#include "mcfbsde/mode.hpp"

namespace mcfbsde {

/// Data of the symmetric Riccati equation
///   −K̇ = c₂ Sx − c₂′ K Sy K,   K(T) = ±λ Sx
/// with (Sx, Sy) = (G*G, Iₙ) for n ≤ m and (Iₘ, GG*) for n > m.  The terminal
/// sign is + in thm2 mode and − in thm3 mode; the affine gain of the linear
/// system is K in thm2 mode and −K in thm3 mode.
struct RiccatiProblem {
    GCase variant = GCase::n_le_m;
    double c2 = 1.0;
    double c2p = 1.0;
    Matrix G;
    double lambda = 0.0;
    double T = 1.0;
    int steps = 1;
    Mode mode = Mode::thm2;
};

struct RiccatiSolution {
    std::vector<Matrix> K;  // K[k] at t_k, k = 0..steps
    double dt = 0.0;
};

struct RiccatiWeights {
    Matrix Sx;
    Matrix Sy;
};

inline RiccatiWeights riccati_weights(const Matrix& g, GCase variant) {
    const Eigen::Index n = g.cols();
    const Eigen::Index m = g.rows();
    if (variant == GCase::n_le_m) {
        if (n > m) throw ValidationError("n<=m Riccati variant requested with n > m");
        return {g.transpose() * g, Matrix::Identity(n, n)};
    }
    if (n < m) throw ValidationError("n>m Riccati variant requested with n < m");
    return {Matrix::Identity(m, m), g * g.transpose()};
}

namespace detail {

inline void validate(const RiccatiProblem& p) {
    if (!(p.c2 > 0.0) || !(p.c2p > 0.0)) throw ValidationError("Riccati: c2 and c2' must be positive");
    if (!(p.lambda >= 0.0)) throw ValidationError("Riccati: lambda must be nonnegative");
    if (!(p.T > 0.0)) throw ValidationError("Riccati: horizon must be positive");
    if (p.steps < 1) throw ValidationError("Riccati: steps must be at least 1");
}

}  // namespace detail

/// Whether positive semidefiniteness is guaranteed (and therefore certified).
inline bool riccati_expects_psd(const RiccatiProblem& p) {
    return p.mode == Mode::thm2 || p.lambda == 0.0;
}

/// Classical fourth-order Runge–Kutta backward from T on the uniform grid,
/// symmetrizing after every step.
inline RiccatiSolution solve_riccati(const RiccatiProblem& p) {
    detail::validate(p);
    const RiccatiWeights w = riccati_weights(p.G, p.variant);
    const double h = p.T / p.steps;
    const auto rhs = [&](const Matrix& k) -> Matrix {
        return p.c2 * w.Sx - p.c2p * k * w.Sy * k;
    };
    RiccatiSolution sol;
    sol.dt = h;
    sol.K.resize(static_cast<std::size_t>(p.steps) + 1);
    Matrix k = mode_sign(p.mode) * p.lambda * w.Sx;
    sol.K[static_cast<std::size_t>(p.steps)] = k;
    const bool certify = riccati_expects_psd(p);
    for (int i = p.steps - 1; i >= 0; --i) {
        const Matrix k1 = rhs(k);
        const Matrix k2 = rhs(k + 0.5 * h * k1);
        const Matrix k3 = rhs(k + 0.5 * h * k2);
        const Matrix k4 = rhs(k + h * k3);
        k = linalg::symmetrize(k + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        const double t = i * h;
        if (!k.allFinite() || k.norm() > 1e12)
            throw SolverError("Riccati solution blows up near t=" + detail::fmt_double(t));
        if (certify && linalg::min_eigenvalue(k) < -1e-10)
            throw SolverError("Riccati solution loses positive semidefiniteness at t=" +
                              detail::fmt_double(t));
        sol.K[static_cast<std::size_t>(i)] = k;
    }
    return sol;
}

/// max over interior grid points of ‖(K_{k+1} − K_{k−1})/(2Δt) + c₂Sx − c₂′K_k Sy K_k‖_F.
inline double riccati_residual(const RiccatiSolution& sol, const RiccatiProblem& p) {
    detail::validate(p);
    if (sol.K.size() != static_cast<std::size_t>(p.steps) + 1)
        throw ValidationError("Riccati residual: solution is not on the problem grid");
    const RiccatiWeights w = riccati_weights(p.G, p.variant);
    const double h = p.T / p.steps;
    double worst = 0.0;
    for (int k = 1; k < p.steps; ++k) {
        const Matrix& kk = sol.K[static_cast<std::size_t>(k)];
        const Matrix dk = (sol.K[static_cast<std::size_t>(k) + 1] - sol.K[static_cast<std::size_t>(k) - 1]) / (2.0 * h);
        const Matrix r = dk + p.c2 * w.Sx - p.c2p * kk * w.Sy * kk;
        worst = std::max(worst, r.norm());
    }
    return worst;
}

}  // namespace mcfbsde
