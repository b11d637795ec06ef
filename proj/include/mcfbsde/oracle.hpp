#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/field.hpp"
#include "mcfbsde/problem.hpp"

// Brute-force reference solver.  It deliberately shares no evaluation code
// with the structured solver: the family coefficients, the transition law
// and the defect computation are all re-derived here from the raw problem
// data.

namespace mcfbsde {

inline constexpr std::size_t kOracleNodeLimit = 10000;

struct OracleOptions {
    double damping = 0.5;
    double tol = 1e-11;
    long max_iters = 2000000;
};

struct OracleResult {
    SolutionField field;
    long iterations = 0;
    double defect = 0.0;
    double damping = 0.0;  // value in use at exit
};

/// Stacked defects computed by the oracle's own code path.
struct GlobalResidual {
    double initial = 0.0;
    double forward = 0.0;
    double backward = 0.0;
    double representation = 0.0;
    double terminal = 0.0;
    NodeId worst_node = kNoNode;

    double max() const { return std::max({initial, forward, backward, representation, terminal}); }
};

namespace oracle_detail {

struct Edge {
    NodeId child;
    double p;
    Vector dM;
};

/// Everything the oracle needs, evaluated from the generator directly.
class System {
public:
    System(const FBSDEProblem& pr, double l) : pr_(pr), l_(l), tree_(*pr.tree) {
        const double dt = tree_.dt();
        edges_.resize(tree_.size());
        for (NodeId v = 0; v < tree_.size(); ++v) {
            if (tree_.level(v) == tree_.steps()) continue;
            const int s = tree_.state(v);
            const Matrix a = tree_.model().generator(tree_.time(tree_.level(v)));
            const NodeId first = tree_.first_child(v);
            for (int c = 0; c < tree_.child_count(v); ++c) {
                const NodeId ch = first + static_cast<NodeId>(c);
                const int j = tree_.state(ch);
                Vector dm = -a.col(s) * dt;
                dm(j) += 1.0;
                dm(s) -= 1.0;
                const double p = (j == s ? 1.0 : 0.0) + a(j, s) * dt;
                edges_[v].push_back({ch, p, dm});
            }
        }
    }

    const std::vector<Edge>& edges(NodeId v) const { return edges_[v]; }
    const DiscreteChainTree& tree() const { return tree_; }

    Vector drift(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        const double sg = mode_sign(pr_.mode);
        Vector out = -sg * (1.0 - l_) * pr_.c2p * (pr_.g.G().transpose() * y);
        if (l_ > 0.0) out += l_ * pr_.coeffs.b(t, s, x, y, z);
        if (pr_.forcing.phi) out += pr_.forcing.phi(t, s);
        return out;
    }
    Matrix diffusion(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        const double sg = mode_sign(pr_.mode);
        Matrix out = -sg * (1.0 - l_) * pr_.c2p * (pr_.g.G().transpose() * z);
        if (l_ > 0.0) out += l_ * pr_.coeffs.sigma(t, s, x, y, z);
        if (pr_.forcing.psi) out += pr_.forcing.psi(t, s);
        return out;
    }
    Vector driver(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        const double sg = mode_sign(pr_.mode);
        Vector out = sg * (1.0 - l_) * pr_.c2 * (pr_.g.G() * x);
        if (l_ > 0.0) out += l_ * pr_.coeffs.f(t, s, x, y, z);
        if (pr_.forcing.gamma) out += pr_.forcing.gamma(t, s);
        return out;
    }
    Vector terminal(int s, const Vector& x) const {
        Vector out = (1.0 - l_) * (pr_.g.G() * x);
        if (l_ > 0.0) out += l_ * pr_.coeffs.Phi(s, x);
        if (pr_.forcing.xi) out += pr_.forcing.xi(s);
        return out;
    }
    const Vector& x0() const { return pr_.x0; }

private:
    const FBSDEProblem& pr_;
    double l_;
    const DiscreteChainTree& tree_;
    std::vector<std::vector<Edge>> edges_;
};

/// One Jacobi image: every unknown recomputed from the old values only.
inline SolutionField jacobi_image(const System& sys, const SolutionField& u) {
    const DiscreteChainTree& tree = sys.tree();
    const double dt = tree.dt();
    SolutionField out(u.size(), u.n(), u.m(), u.d());
    out.x(0) = sys.x0();
    for (NodeId v = 0; v < tree.size(); ++v) {
        const int s = tree.state(v);
        const Vector x = u.x(v);
        if (sys.edges(v).empty()) {
            out.y(v) = sys.terminal(s, x);
            continue;
        }
        const double t = tree.time(tree.level(v));
        const Vector y = u.y(v);
        const Matrix z = u.z(v);
        const Vector b = sys.drift(t, s, x, y, z);
        const Matrix sg = sys.diffusion(t, s, x, y, z);
        Vector ey = Vector::Zero(u.m());
        for (const Edge& e : sys.edges(v)) {
            out.x(e.child) = x + b * dt + sg * e.dM;
            ey += e.p * u.y(e.child);
        }
        out.y(v) = ey + sys.driver(t, s, x, y, z) * dt;
        for (const Edge& e : sys.edges(v)) out.z(v).col(tree.state(e.child)) = u.y(e.child) - ey;
    }
    return out;
}

}  // namespace oracle_detail

/// Defects of `field` against the level-l discrete equations, computed
/// without any of the structured solver's residual code.
inline GlobalResidual global_residual(const SolutionField& field, const FBSDEProblem& problem,
                                      double l) {
    const oracle_detail::System sys(problem, l);
    const DiscreteChainTree& tree = sys.tree();
    const double dt = tree.dt();
    GlobalResidual g;
    double worst = -1.0;
    const auto put = [&](double& slot, double val, NodeId v) {
        slot = std::max(slot, val);
        if (val > worst) {
            worst = val;
            g.worst_node = v;
        }
    };
    put(g.initial, (field.x(0) - sys.x0()).cwiseAbs().maxCoeff(), 0);
    for (NodeId v = 0; v < tree.size(); ++v) {
        const int s = tree.state(v);
        const Vector x = field.x(v);
        const Vector y = field.y(v);
        if (sys.edges(v).empty()) {
            put(g.terminal, (y - sys.terminal(s, x)).cwiseAbs().maxCoeff(), v);
            continue;
        }
        const double t = tree.time(tree.level(v));
        const Matrix z = field.z(v);
        const Vector b = sys.drift(t, s, x, y, z);
        const Matrix sg = sys.diffusion(t, s, x, y, z);
        Vector ey = Vector::Zero(field.m());
        for (const auto& e : sys.edges(v)) ey += e.p * field.y(e.child);
        put(g.backward, (y - ey - sys.driver(t, s, x, y, z) * dt).cwiseAbs().maxCoeff(), v);
        for (const auto& e : sys.edges(v)) {
            put(g.forward, (field.x(e.child) - x - b * dt - sg * e.dM).cwiseAbs().maxCoeff(), e.child);
            put(g.representation, (field.y(e.child) - ey - z * e.dM).cwiseAbs().maxCoeff(), v);
        }
    }
    return g;
}

/// Damped global fixed point U ← U + θ(J(U) − U), J the Jacobi image of the
/// whole stacked system.  θ is halved when the defect stops shrinking over a
/// window of iterations.
inline OracleResult brute_force_solve(const FBSDEProblem& problem, double l,
                                      const std::optional<SolutionField>& init = std::nullopt,
                                      const OracleOptions& options = {}) {
    problem.validate();
    const DiscreteChainTree& tree = *problem.tree;
    if (tree.size() > kOracleNodeLimit)
        throw ValidationError("oracle refuses trees with more than " +
                              std::to_string(kOracleNodeLimit) + " nodes (got " +
                              std::to_string(tree.size()) + ")");
    if (!(options.damping > 0.0 && options.damping <= 1.0))
        throw ValidationError("oracle damping must lie in (0, 1]");
    const oracle_detail::System sys(problem, l);
    SolutionField u = init ? *init : SolutionField(tree.size(), problem.n(), problem.m(), tree.d());
    OracleResult res;
    res.damping = options.damping;
    constexpr long window = 500;
    double checkpoint = std::numeric_limits<double>::infinity();
    for (long it = 0; it < options.max_iters; ++it) {
        SolutionField step = oracle_detail::jacobi_image(sys, u);
        step -= u;
        const double defect = step.sup_norm();
        res.iterations = it;
        res.defect = defect;
        if (!std::isfinite(defect)) break;
        if (defect <= options.tol) {
            res.field = std::move(u);
            return res;
        }
        if ((it + 1) % window == 0) {
            if (defect >= checkpoint) res.damping *= 0.5;
            checkpoint = defect;
        }
        u.axpy(res.damping, step);
    }
    throw SolverError("oracle did not converge: defect " + detail::fmt_double(res.defect) +
                      " after " + std::to_string(res.iterations + 1) + " iterations");
}

}  // namespace mcfbsde
