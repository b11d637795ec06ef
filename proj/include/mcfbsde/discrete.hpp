#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/field.hpp"

namespace mcfbsde {

/// Largest defects of a field against the discrete equations
///   X_c = X_v + B Δt + Σ ΔM_c,   Y_v = E[Y_c] + F Δt,
///   Y_c − E[Y_c] = Z_v ΔM_c,     Y_leaf = Ψ(X_leaf),   X_root = x₀.
struct ResidualReport {
    double initial = 0.0;
    double forward = 0.0;
    double backward = 0.0;
    double representation = 0.0;
    double terminal = 0.0;
    NodeId worst_node = kNoNode;
    std::string worst_kind;

    double max() const {
        return std::max({initial, forward, backward, representation, terminal});
    }
};

/// Evaluates every discrete defect of `field` under coefficients `c`.
inline ResidualReport dynamics_residual(const DiscreteChainTree& tree, const CoefficientSet& c,
                                        const Vector& x0, const SolutionField& field) {
    ResidualReport r;
    double worst = -1.0;
    const auto record = [&](double& slot, double value, NodeId v, const char* kind) {
        slot = std::max(slot, value);
        if (value > worst) {
            worst = value;
            r.worst_node = v;
            r.worst_kind = kind;
        }
    };
    const double dt = tree.dt();
    record(r.initial, (field.x(0) - x0).lpNorm<Eigen::Infinity>(), 0, "initial");
    for (NodeId v = 0; v < tree.size(); ++v) {
        const int s = tree.state(v);
        const Vector x = field.x(v);
        const Vector y = field.y(v);
        if (tree.is_leaf(v)) {
            record(r.terminal, (y - c.Phi_at(s, x)).lpNorm<Eigen::Infinity>(), v, "terminal");
            continue;
        }
        const double t = tree.time(tree.level(v));
        const Matrix z = field.z(v);
        const Vector b = c.b_at(t, s, x, y, z);
        const Matrix sig = c.sigma_at(t, s, x, y, z);
        const Vector f = c.f_at(t, s, x, y, z);
        Vector mean = Vector::Zero(field.m());
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        for (NodeId ch = first; ch < last; ++ch) mean += tree.edge_probability(ch) * field.y(ch);
        record(r.backward, (y - mean - f * dt).lpNorm<Eigen::Infinity>(), v, "backward");
        for (NodeId ch = first; ch < last; ++ch) {
            const auto dm = tree.increment(ch);
            const Vector xf = x + b * dt + sig * dm;
            record(r.forward, (field.x(ch) - xf).lpNorm<Eigen::Infinity>(), ch, "forward");
            const Vector rep = field.y(ch) - mean - z * dm;
            record(r.representation, rep.lpNorm<Eigen::Infinity>(), v, "representation");
        }
    }
    return r;
}

}  // namespace mcfbsde
