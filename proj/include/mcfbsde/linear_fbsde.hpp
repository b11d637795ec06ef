#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/discrete.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/field.hpp"
#include "mcfbsde/problem.hpp"
#include "mcfbsde/riccati.hpp"

namespace mcfbsde {

/// Output of the affine construction.  The primed system lives in ℝʳ with
/// r = n (n ≤ m pipeline: X′ = X, Y′ = G*Y, Z′ = G*Z) or r = m (n > m
/// pipeline: X′ = GX, Y′ = Y, Z′ = Z), and Y′ = K̃ X′ + p, Z′ = q node by node.
struct AffineSolution {
    GCase variant = GCase::n_le_m;
    RiccatiSolution K;          // continuous Riccati solution on the grid
    std::vector<Matrix> gain;   // discrete gain K̃ at t_k, k = 0..N
    std::vector<Vector> p;      // per node, ℝʳ
    std::vector<Matrix> q;      // per node, r×d (zero at leaves)
    SolutionField primed;       // (X′, Y′, Z′) with dimensions (r, r, r×d)
    SolutionField decoupled;    // X″ in the x slot (n > m) or (Y″, Z″) in the y, z slots (n ≤ m)
    SolutionField field;        // assembled (X, Y, Z)
    double gain_gap = 0.0;      // max_k ‖K̃_k − (±K(t_k))‖_F
    double q_crosscheck = 0.0;  // max defect of p_c − p̄ = (I − K̃a)q ΔM_c − K̃ψ′ΔM_c
    double residual = 0.0;      // linear_residual of the assembled field
};

struct LinearSolveOptions {
    std::optional<GCase> variant;  // force a pipeline; only meaningful when n = m
    double tolerance = 1e-10;      // residual guard, relative to max(1, sup|field|)
};

/// Discrete defect of an assembled field against the linear dynamics.
inline ResidualReport linear_residual_report(const SolutionField& field,
                                             const LinearFBSDEProblem& problem) {
    return dynamics_residual(*problem.tree, linear_coefficients(problem), problem.x0, field);
}

inline double linear_residual(const AffineSolution& solution, const LinearFBSDEProblem& problem) {
    return linear_residual_report(solution.field, problem).max();
}

inline AffineSolution solve_linear(const LinearFBSDEProblem& problem,
                                   const LinearSolveOptions& options = {}) {
    problem.validate();
    const DiscreteChainTree& tree = *problem.tree;
    const GStructure& gs = problem.g;
    const Matrix& G = gs.G();
    const int n = gs.n();
    const int m = gs.m();
    const int d = tree.d();
    const int N = tree.steps();
    const double dt = tree.dt();
    const double sgn = mode_sign(problem.mode);

    AffineSolution out;
    out.variant = options.variant.value_or(gs.case_tag());
    const bool low = out.variant == GCase::n_le_m;
    if (low && n > m) throw ValidationError("n<=m pipeline requested with n > m");
    if (!low && n < m) throw ValidationError("n>m pipeline requested with n < m");
    const int r = low ? n : m;

    const RiccatiWeights w = riccati_weights(G, out.variant);
    const Matrix a = -sgn * problem.c2p * w.Sy;
    const Matrix D = sgn * problem.c2 * w.Sx;
    const Matrix I = Matrix::Identity(r, r);

    RiccatiProblem rp;
    rp.variant = out.variant;
    rp.c2 = problem.c2;
    rp.c2p = problem.c2p;
    rp.G = G;
    rp.lambda = problem.lambda;
    rp.T = tree.horizon();
    rp.steps = N;
    rp.mode = problem.mode;
    out.K = solve_riccati(rp);

    // Discrete gain: K̃_N = λSx, K̃_k = (I − K̃_{k+1} a Δt)⁻¹ (K̃_{k+1} + D Δt).
    out.gain.resize(static_cast<std::size_t>(N) + 1);
    out.gain[static_cast<std::size_t>(N)] = problem.lambda * w.Sx;
    std::vector<Eigen::PartialPivLU<Matrix>> drift_lu(static_cast<std::size_t>(N));
    std::vector<Eigen::PartialPivLU<Matrix>> noise_lu(static_cast<std::size_t>(N));
    const auto checked_lu = [&](const Matrix& mtx, int k) {
        Eigen::PartialPivLU<Matrix> lu(mtx);
        if (!(lu.rcond() > 1e-13)) {
            throw SolverError("affine recursion matrix is singular at level " + std::to_string(k));
        }
        return lu;
    };
    for (int k = N - 1; k >= 0; --k) {
        const Matrix& next = out.gain[static_cast<std::size_t>(k) + 1];
        drift_lu[static_cast<std::size_t>(k)] = checked_lu(I - next * a * dt, k);
        noise_lu[static_cast<std::size_t>(k)] = checked_lu(I - next * a, k);
        out.gain[static_cast<std::size_t>(k)] = drift_lu[static_cast<std::size_t>(k)].solve(next + D * dt);
    }
    for (int k = 0; k <= N; ++k) {
        const double gap =
            (out.gain[static_cast<std::size_t>(k)] - sgn * out.K.K[static_cast<std::size_t>(k)]).norm();
        out.gain_gap = std::max(out.gain_gap, gap);
    }

    // Primed forcing.
    const Forcing& fo = problem.forcing;
    const auto phi_p = [&](double t, int s) -> Vector {
        const Vector v = fo.phi_at(t, s, n);
        return low ? v : Vector(G * v);
    };
    const auto psi_p = [&](double t, int s) -> Matrix {
        const Matrix v = fo.psi_at(t, s, n, d);
        return low ? v : Matrix(G * v);
    };
    const auto gamma_p = [&](double t, int s) -> Vector {
        const Vector v = fo.gamma_at(t, s, m);
        return low ? Vector(G.transpose() * v) : v;
    };
    const auto xi_p = [&](int s) -> Vector {
        const Vector v = fo.xi_at(s, m);
        return low ? Vector(G.transpose() * v) : v;
    };

    // Backward recursion for (p, q).
    const std::size_t nodes = tree.size();
    out.p.assign(nodes, Vector::Zero(r));
    out.q.assign(nodes, Matrix::Zero(r, d));
    for (NodeId v = nodes; v-- > 0;) {
        const int s = tree.state(v);
        if (tree.is_leaf(v)) {
            out.p[v] = xi_p(s);
            continue;
        }
        const int k = tree.level(v);
        const double t = tree.time(k);
        const Matrix& next = out.gain[static_cast<std::size_t>(k) + 1];
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        Vector pbar = Vector::Zero(r);
        for (NodeId c = first; c < last; ++c) pbar += tree.edge_probability(c) * out.p[c];
        const Matrix psi = psi_p(t, s);
        for (NodeId c = first; c < last; ++c) {
            const Vector jump = next * (psi * tree.increment(c)) + (out.p[c] - pbar);
            out.q[v].col(tree.state(c)) = noise_lu[static_cast<std::size_t>(k)].solve(jump);
        }
        out.p[v] = drift_lu[static_cast<std::size_t>(k)].solve(next * phi_p(t, s) * dt + pbar +
                                                                  gamma_p(t, s) * dt);
        for (NodeId c = first; c < last; ++c) {
            const auto dm = tree.increment(c);
            const Vector lhs = out.p[c] - pbar;
            const Vector rhs = (I - next * a) * (out.q[v] * dm) - next * (psi * dm);
            out.q_crosscheck = std::max(out.q_crosscheck, (lhs - rhs).lpNorm<Eigen::Infinity>());
        }
    }

    // Forward sweep for X′.
    out.primed = SolutionField(nodes, r, r, d);
    out.primed.x(0) = low ? problem.x0 : Vector(G * problem.x0);
    for (NodeId v = 0; v < nodes; ++v) {
        const int k = tree.level(v);
        const int s = tree.state(v);
        const Vector xp = out.primed.x(v);
        const Vector yp = out.gain[static_cast<std::size_t>(k)] * xp + out.p[v];
        out.primed.y(v) = yp;
        out.primed.z(v) = out.q[v];
        if (tree.is_leaf(v)) continue;
        const double t = tree.time(k);
        const Vector drift = a * yp + phi_p(t, s);
        const Matrix noise = a * out.q[v] + psi_p(t, s);
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        for (NodeId c = first; c < last; ++c)
            out.primed.x(c) = xp + drift * dt + noise * tree.increment(c);
    }

    // Decoupled part and reassembly.
    out.decoupled = SolutionField(nodes, n, m, d);
    out.field = SolutionField(nodes, n, m, d);
    if (low) {
        const Matrix Pc = Matrix::Identity(m, m) - gs.range_projector();
        for (NodeId v = nodes; v-- > 0;) {
            const int s = tree.state(v);
            if (tree.is_leaf(v)) {
                out.decoupled.y(v) = Pc * fo.xi_at(s, m);
                continue;
            }
            const double t = tree.time(tree.level(v));
            const NodeId first = tree.first_child(v);
            const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
            Vector mean = Vector::Zero(m);
            for (NodeId c = first; c < last; ++c) mean += tree.edge_probability(c) * out.decoupled.y(c);
            Matrix z = Matrix::Zero(m, d);
            for (NodeId c = first; c < last; ++c) z.col(tree.state(c)) = out.decoupled.y(c) - mean;
            out.decoupled.z(v) = z;
            out.decoupled.y(v) = mean + Pc * fo.gamma_at(t, s, m) * dt;
        }
        const Matrix lift = G * gs.gtg_inverse();
        for (NodeId v = 0; v < nodes; ++v) {
            out.field.x(v) = out.primed.x(v);
            out.field.y(v) = lift * out.primed.y(v) + out.decoupled.y(v);
            out.field.z(v) = lift * Matrix(out.primed.z(v)) + Matrix(out.decoupled.z(v));
        }
    } else {
        const Matrix Pc = Matrix::Identity(n, n) - gs.row_projector();
        out.decoupled.x(0) = Pc * problem.x0;
        for (NodeId v = 0; v < nodes; ++v) {
            if (tree.is_leaf(v)) continue;
            const int s = tree.state(v);
            const double t = tree.time(tree.level(v));
            const Vector drift = Pc * fo.phi_at(t, s, n);
            const Matrix noise = Pc * fo.psi_at(t, s, n, d);
            const NodeId first = tree.first_child(v);
            const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
            for (NodeId c = first; c < last; ++c)
                out.decoupled.x(c) = out.decoupled.x(v) + drift * dt + noise * tree.increment(c);
        }
        const Matrix lift = G.transpose() * gs.ggt_inverse();
        for (NodeId v = 0; v < nodes; ++v) {
            out.field.x(v) = lift * out.primed.x(v) + out.decoupled.x(v);
            out.field.y(v) = out.primed.y(v);
            out.field.z(v) = out.primed.z(v);
        }
    }

    const ResidualReport rep = linear_residual_report(out.field, problem);
    out.residual = rep.max();
    const double scale = std::max(1.0, out.field.sup_norm());
    if (!(out.residual <= options.tolerance * scale)) {
        throw SolverError("linear solve residual " + detail::fmt_double(out.residual) + " (" +
                          rep.worst_kind + ") at node " + std::to_string(rep.worst_node));
    }
    return out;
}

}  // namespace mcfbsde
