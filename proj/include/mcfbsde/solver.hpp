#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/discrete.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/field.hpp"
#include "mcfbsde/linear_fbsde.hpp"
#include "mcfbsde/problem.hpp"

namespace mcfbsde {

/// How the scalar |û|² is integrated against the matrix measure d⟨M,M⟩.
enum class NormWeight { trace, max_eigenvalue };

/// Driving form of a sweep: compensated martingale dM, or the raw chain
/// increments dm with converted coefficients.
enum class Form { dM, dm };

struct ContinuationConfig {
    double delta = 0.25;          // initial continuation step
    double delta_min = 1.0 / 64;  // give up below this step
    double grow = 2.0;            // step growth after a fast level
    double shrink = 0.5;          // step reduction after a failed level
    int fast_sweeps = 40;         // levels converging within this many sweeps grow δ
    double tol = 1e-11;           // sweep-difference tolerance ε (norm and sup)
    int max_sweeps = 600;         // per level
    double relaxation = 0.5;      // ω in U ← U + ω(S(U) − U)
    double relaxation_min = 1.0 / 64;
    double residual_tol = 1e-9;   // final residual guard, relative to max(1, sup|field|)
    NormWeight norm_weight = NormWeight::trace;
    double inner_tol = 1e-12;     // implicit per-node Y solve
    int inner_max = 50;

    void validate() const {
        if (!(delta_min > 0.0 && delta_min <= delta && delta <= 1.0))
            throw ValidationError("solver: need 0 < delta_min <= delta <= 1");
        if (!(tol > 0.0)) throw ValidationError("solver: tol must be positive");
        if (!(grow >= 1.0) || !(shrink > 0.0 && shrink < 1.0))
            throw ValidationError("solver: need grow >= 1 and 0 < shrink < 1");
        if (max_sweeps < 1) throw ValidationError("solver: max_sweeps must be positive");
        if (!(relaxation > 0.0 && relaxation <= 1.0) ||
            !(relaxation_min > 0.0 && relaxation_min <= relaxation))
            throw ValidationError("solver: need 0 < relaxation_min <= relaxation <= 1");
        if (!(residual_tol > 0.0)) throw ValidationError("solver: residual_tol must be positive");
        if (inner_max < 1 || !(inner_tol > 0.0))
            throw ValidationError("solver: inner iteration settings must be positive");
    }
};

/// Per-level sweep statistics.  norms[k] is the contraction norm of the
/// sweep defect S(U_k) − U_k; ratios[k] = sqrt(norms[k] / norms[k−1]), with
/// ratios[0] measured against the norm of the starting field.
struct SweepStats {
    double level = 0.0;
    int sweeps = 0;
    bool converged = false;
    std::vector<double> norms;
    std::vector<double> sup_diffs;
    std::vector<double> ratios;
    std::vector<double> relaxation;
};

struct LevelRecord {
    double level = 0.0;
    double delta = 0.0;
    bool accepted = false;
    SweepStats stats;
};

struct ConvergenceReport {
    bool converged = false;
    std::vector<LevelRecord> levels;
    int total_sweeps = 0;
    ResidualReport final_residual;
    std::vector<std::string> notes;
};

/// Raised by solve_level when the sweep budget runs out; carries the stats.
class SweepLimitError : public SolverError {
public:
    SweepLimitError(const std::string& what, SweepStats stats)
        : SolverError(what), stats_(std::move(stats)) {}
    const SweepStats& stats() const noexcept { return stats_; }

private:
    SweepStats stats_;
};

// ---------------------------------------------------------------------------
// Norm
// ---------------------------------------------------------------------------

/// E Σ_k |û|²(1 + w)Δt + E|x̂_T|², w = tr Q (or its largest eigenvalue) at
/// the node's state and time; expectation is the exact tree expectation.
inline double contraction_norm(const SolutionField& delta, const DiscreteChainTree& tree,
                               NormWeight weight = NormWeight::trace) {
    if (delta.size() != tree.size()) throw ValidationError("contraction_norm: field/tree mismatch");
    const double dt = tree.dt();
    double total = 0.0;
    for (NodeId v = 0; v < tree.size(); ++v) {
        const double pv = tree.probability(v);
        if (tree.is_leaf(v)) {
            total += pv * delta.x(v).squaredNorm();
            continue;
        }
        const Matrix& q = tree.law(v).Q;
        const double w = weight == NormWeight::trace ? q.trace() : linalg::max_eigenvalue(q);
        const double u2 = delta.x(v).squaredNorm() + delta.y(v).squaredNorm() + delta.z(v).squaredNorm();
        total += pv * u2 * (1.0 + w) * dt;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace detail {

/// Solves y = g(y) by fixed-point iteration, halving the step when it grows.
template <class Map>
Vector implicit_solve(Map&& g, Vector y, double tol, int max_iter, NodeId node) {
    double theta = 1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        const Vector step = g(y) - y;
        const double size = step.lpNorm<Eigen::Infinity>();
        if (!std::isfinite(size)) break;
        if (size <= tol * (1.0 + y.lpNorm<Eigen::Infinity>())) return y + step;
        if (size > prev) theta *= 0.5;
        prev = size;
        y += theta * step;
    }
    throw SolverError("implicit backward step did not converge at node " + std::to_string(node) +
                      " (time step too large for the driver's Lipschitz constant)");
}

}  // namespace detail

/// One decoupling sweep at level l: forward pass for X with (Y, Z) taken
/// from `current`, then a backward pass for (Y, Z) with the new X.
inline SolutionField picard_sweep(const FBSDEProblem& problem, double l,
                                  const SolutionField& current, Form form = Form::dM,
                                  const ContinuationConfig& config = {}) {
    const DiscreteChainTree& tree = *problem.tree;
    if (current.size() != tree.size() || current.n() != problem.n() || current.m() != problem.m())
        throw ValidationError("picard_sweep: field does not match the problem");
    const CoefficientSet lc = level_coefficients(problem, l);
    const CoefficientSet c = form == Form::dM ? lc : to_chain_driven(lc, tree.model());
    const double dt = tree.dt();
    const int m = problem.m();
    const int d = tree.d();

    SolutionField out(tree.size(), problem.n(), m, d);
    out.x(0) = problem.x0;
    for (NodeId v = 0; v < tree.size(); ++v) {
        if (tree.is_leaf(v)) continue;
        const int s = tree.state(v);
        const double t = tree.time(tree.level(v));
        const Vector x = out.x(v);
        const Vector y = current.y(v);
        const Matrix z = current.z(v);
        const Vector b = c.b_at(t, s, x, y, z);
        const Matrix sig = c.sigma_at(t, s, x, y, z);
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        for (NodeId ch = first; ch < last; ++ch) {
            if (form == Form::dM) {
                out.x(ch) = x + b * dt + sig * tree.increment(ch);
            } else {
                out.x(ch) = x + b * dt + sig.col(tree.state(ch)) - sig.col(s);
            }
        }
    }
    for (NodeId v = tree.size(); v-- > 0;) {
        const int s = tree.state(v);
        const Vector x = out.x(v);
        if (tree.is_leaf(v)) {
            out.y(v) = c.Phi_at(s, x);
            continue;
        }
        const double t = tree.time(tree.level(v));
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        Vector mean = Vector::Zero(m);
        for (NodeId ch = first; ch < last; ++ch) mean += tree.edge_probability(ch) * out.y(ch);
        Matrix z = Matrix::Zero(m, d);
        for (NodeId ch = first; ch < last; ++ch) z.col(tree.state(ch)) = out.y(ch) - mean;
        out.z(v) = z;
        Vector base = mean;
        if (form == Form::dm) {
            NodeId anchor = first;
            for (NodeId ch = first; ch < last; ++ch) {
                if (tree.state(ch) == s) anchor = ch;
            }
            base = out.y(anchor) - (z.col(tree.state(anchor)) - z.col(s));
        }
        const auto g = [&](const Vector& y) -> Vector { return base + c.f_at(t, s, x, y, z) * dt; };
        out.y(v) = detail::implicit_solve(g, mean, config.inner_tol, config.inner_max, v);
    }
    return out;
}

/// Discrete defect of a field against the level-l equations.
inline ResidualReport solution_residual(const SolutionField& field, const FBSDEProblem& problem,
                                        double l) {
    return dynamics_residual(*problem.tree, level_coefficients(problem, l), problem.x0, field);
}

struct LevelResult {
    SolutionField field;
    SweepStats stats;
};

/// Relaxed sweep iteration U ← U + ω(S(U) − U) until the sweep defect
/// S(U) − U is below ε both in the contraction norm and in sup norm.  ω is
/// halved whenever the defect norm grows.  Returns the last sweep output.
inline LevelResult solve_level(const FBSDEProblem& problem, double l, const SolutionField& warm_start,
                               const ContinuationConfig& config = {}) {
    config.validate();
    const DiscreteChainTree& tree = *problem.tree;
    SweepStats st;
    st.level = l;
    SolutionField u = warm_start;
    double omega = config.relaxation;
    const double start_norm = contraction_norm(u, tree, config.norm_weight);
    double prev_norm = start_norm;
    for (int k = 0; k < config.max_sweeps; ++k) {
        SolutionField s = picard_sweep(problem, l, u, Form::dM, config);
        SolutionField diff = s - u;
        const double nrm = contraction_norm(diff, tree, config.norm_weight);
        const double sup = diff.sup_norm();
        if (!std::isfinite(nrm) || !std::isfinite(sup)) {
            throw SweepLimitError("sweep produced non-finite values at level " +
                                  detail::fmt_double(l), st);
        }
        double ratio = 0.0;
        if (prev_norm > 0.0) {
            ratio = std::sqrt(nrm / prev_norm);
        } else if (nrm > 0.0) {
            ratio = std::numeric_limits<double>::infinity();
        }
        st.norms.push_back(nrm);
        st.sup_diffs.push_back(sup);
        st.ratios.push_back(ratio);
        st.relaxation.push_back(omega);
        st.sweeps = k + 1;
        if (std::sqrt(nrm) <= config.tol && sup <= config.tol) {
            st.converged = true;
            return {std::move(s), std::move(st)};
        }
        if (k > 0 && nrm > prev_norm) omega = std::max(config.relaxation_min, 0.5 * omega);
        prev_norm = nrm;
        u.axpy(omega, diff);
    }
    throw SweepLimitError("level " + detail::fmt_double(l) + " did not converge within " +
                              std::to_string(config.max_sweeps) + " sweeps",
                          std::move(st));
}

/// Raised by solve_continuation on failure; carries the partial report.
class ContinuationError : public SolverError {
public:
    ContinuationError(const std::string& what, ConvergenceReport report)
        : SolverError(what), report_(std::move(report)) {}
    const ConvergenceReport& report() const noexcept { return report_; }

private:
    ConvergenceReport report_;
};

struct ContinuationResult {
    SolutionField field;
    ConvergenceReport report;
};

/// Marches l from 0 to 1.  Level 0 is seeded by the affine construction
/// (or by `initial` when given); every further level is warm-started from
/// the previous one.  δ shrinks after a failed level and grows after a fast
/// one.
inline ContinuationResult solve_continuation(const FBSDEProblem& problem,
                                             const ContinuationConfig& config = {},
                                             const std::optional<SolutionField>& initial = std::nullopt) {
    problem.validate();
    config.validate();
    ContinuationResult res;
    ConvergenceReport& rep = res.report;

    SolutionField seed = initial ? *initial : solve_linear(level_zero_problem(problem)).field;
    if (initial && !initial->same_shape(SolutionField::zeros_like(*problem.tree, problem.n(), problem.m())))
        throw ValidationError("initial field does not match the problem");

    const auto run = [&](double l, const SolutionField& start, double delta) -> std::optional<SolutionField> {
        try {
            LevelResult lr = solve_level(problem, l, start, config);
            rep.total_sweeps += lr.stats.sweeps;
            rep.levels.push_back({l, delta, true, std::move(lr.stats)});
            return std::move(lr.field);
        } catch (const SweepLimitError& e) {
            rep.total_sweeps += e.stats().sweeps;
            rep.levels.push_back({l, delta, false, e.stats()});
            rep.notes.push_back(e.what());
            return std::nullopt;
        }
    };

    std::optional<SolutionField> cur = run(0.0, seed, 0.0);
    if (!cur) throw ContinuationError("level 0 did not converge: " + rep.notes.back(), rep);
    double l = 0.0;
    double delta = config.delta;
    while (l < 1.0) {
        const double next = std::min(1.0, l + delta);
        std::optional<SolutionField> f = run(next, *cur, next - l);
        if (!f) {
            delta *= config.shrink;
            if (delta < config.delta_min) {
                throw ContinuationError("continuation stalled at l=" + detail::fmt_double(l) +
                                            ": step fell below delta_min; the problem may violate the "
                                            "monotonicity condition (see `mcfbsde check`)",
                                        rep);
            }
            continue;
        }
        cur = std::move(f);
        l = next;
        if (rep.levels.back().stats.sweeps <= config.fast_sweeps)
            delta = std::min(1.0, delta * config.grow);
    }

    rep.final_residual = solution_residual(*cur, problem, 1.0);
    const double scale = std::max(1.0, cur->sup_norm());
    if (!(rep.final_residual.max() <= config.residual_tol * scale)) {
        throw ContinuationError("final residual " + detail::fmt_double(rep.final_residual.max()) + " (" +
                                    rep.final_residual.worst_kind + ") exceeds tolerance",
                                rep);
    }
    rep.converged = true;
    res.field = std::move(*cur);
    return res;
}

}  // namespace mcfbsde
