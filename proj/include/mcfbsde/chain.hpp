#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"
#include "mcfbsde/rng.hpp"

namespace mcfbsde {

inline constexpr double kGeneratorTolerance = 1e-12;
inline constexpr std::size_t kDefaultNodeBudget = std::size_t{1} << 20;

// ---------------------------------------------------------------------------
// Generator validation
// ---------------------------------------------------------------------------

struct GeneratorVerdict {
    bool valid = true;
    std::string message;
    std::size_t matrix_index = 0;  // which entry of the input sequence
    int row = -1;                  // 0-based offending entry, -1 when not applicable
    int col = -1;
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Same rules as validate_generator for a single matrix; `index` only feeds the verdict.
inline GeneratorVerdict check_generator(const Matrix& a, std::size_t index) {
    GeneratorVerdict v;
    v.matrix_index = index;
    const Eigen::Index d = a.rows();
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
            if (i != j && a(i, j) < -kGeneratorTolerance) {
                v.valid = false;
                v.row = static_cast<int>(i);
                v.col = static_cast<int>(j);
                v.message = "off-diagonal entry (" + std::to_string(i + 1) + "," +
                            std::to_string(j + 1) + ") is negative: " + fmt_double(a(i, j));
                return v;
            }
        }
        const double sum = a.col(j).sum();
        if (std::abs(sum) > kGeneratorTolerance) {
            v.valid = false;
            v.col = static_cast<int>(j);
            v.message = "column " + std::to_string(j + 1) + " sums to " + fmt_double(sum);
            return v;
        }
    }
    return v;
}

// Off-diagonals within tolerance of zero are clamped to zero and the diagonal
// is rebuilt so every column sums to exactly zero in floating point.
inline Matrix clamp_generator(const Matrix& a) {
    Matrix out = a;
    const Eigen::Index d = a.rows();
    for (Eigen::Index j = 0; j < d; ++j) {
        double off = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (i == j) continue;
            out(i, j) = std::max(0.0, out(i, j));
            off += out(i, j);
        }
        out(j, j) = -off;
    }
    return out;
}

}  // namespace detail

/// Accepts a sequence of generator samples (columns indexed by the current
/// state).  Structural problems (non-square, mismatched sizes, d < 2,
/// non-finite entries) throw; rule violations come back as an invalid verdict
/// naming the first offending entry.
inline GeneratorVerdict validate_generator(const std::vector<Matrix>& values) {
    if (values.empty()) throw ValidationError("validate_generator: no matrices given");
    const Eigen::Index d = values.front().rows();
    if (d < 2) throw ValidationError("generator must have at least 2 states");
    for (std::size_t k = 0; k < values.size(); ++k) {
        const Matrix& a = values[k];
        if (a.rows() != a.cols())
            throw ValidationError("generator " + std::to_string(k) + " is not square");
        if (a.rows() != d)
            throw ValidationError("generator " + std::to_string(k) + " has dimension " +
                                  std::to_string(a.rows()) + ", expected " + std::to_string(d));
        if (!a.allFinite())
            throw ValidationError("generator " + std::to_string(k) + " has non-finite entries");
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
        GeneratorVerdict v = detail::check_generator(values[k], k);
        if (!v.valid) return v;
    }
    return {};
}

// ---------------------------------------------------------------------------
// ChainModel
// ---------------------------------------------------------------------------

/// Finite-state chain described by its generator A(t).  States are 0-based
/// in the C++ interface.
class ChainModel {
public:
    using GeneratorFn = std::function<Matrix(double)>;

    explicit ChainModel(const Matrix& constant) {
        GeneratorVerdict v = validate_generator({constant});
        if (!v.valid) throw ValidationError("invalid generator: " + v.message);
        d_ = static_cast<int>(constant.rows());
        constant_ = std::make_shared<const Matrix>(detail::clamp_generator(constant));
    }

    ChainModel(int d, GeneratorFn fn) : d_(d), fn_(std::move(fn)) {
        if (d < 2) throw ValidationError("generator must have at least 2 states");
        if (!fn_) throw ValidationError("generator function is empty");
    }

    int d() const noexcept { return d_; }
    bool time_homogeneous() const noexcept { return constant_ != nullptr; }

    /// Validated and clamped generator at time t.
    Matrix generator(double t) const {
        if (constant_) return *constant_;
        Matrix a = fn_(t);
        GeneratorVerdict v = validate_generator({a});
        if (a.rows() != d_)
            throw ValidationError("generator function returned wrong dimension");
        if (!v.valid)
            throw ValidationError("invalid generator at t=" + detail::fmt_double(t) + ": " +
                                  v.message);
        return detail::clamp_generator(a);
    }

private:
    int d_ = 0;
    std::shared_ptr<const Matrix> constant_;
    GeneratorFn fn_;
};

/// d×d density of the predictable quadratic variation at state j:
/// diag(A e_j) − diag(e_j)A* − A diag(e_j).
inline Matrix qv_density(const Matrix& a, int state) {
    const Eigen::Index d = a.rows();
    if (state < 0 || state >= d) throw ValidationError("state index out of range");
    const Vector col = a.col(state);
    Matrix q = col.asDiagonal();
    q.row(state) -= col.transpose();
    q.col(state) -= col;
    return q;
}

inline Matrix qv_density(const ChainModel& model, int state, double t) {
    return qv_density(model.generator(t), state);
}

// ---------------------------------------------------------------------------
// One-step transition law
// ---------------------------------------------------------------------------

/// Euler transition law out of one state over one grid step.
struct StepLaw {
    Vector p;                     // p_i = δ_is + A_is Δt
    Matrix dM;                    // column i: ΔM when moving to state i
    std::vector<int> reachable;   // states with p_i > 0, increasing order
    Matrix compensator;           // Σ_i p_i ΔM_i ΔM_i*
    Matrix Q;                     // qv density at the left endpoint
};

inline StepLaw make_step_law(const Matrix& a, int s, double dt) {
    const Eigen::Index d = a.rows();
    StepLaw law;
    const Vector drift = a.col(s) * dt;
    law.p = drift;
    law.p(s) += 1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        if (law.p(i) < -kGeneratorTolerance)
            throw ValidationError("transition probability negative: step too large");
        if (law.p(i) < 0.0) law.p(i) = 0.0;
    }
    law.dM.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        law.dM.col(i) = -drift;
        law.dM(i, i) += 1.0;
        law.dM(s, i) -= 1.0;
        if (law.p(i) > 0.0) law.reachable.push_back(static_cast<int>(i));
    }
    law.compensator = Matrix::Zero(d, d);
    for (int i : law.reachable)
        law.compensator.noalias() += law.p(i) * law.dM.col(i) * law.dM.col(i).transpose();
    law.Q = qv_density(a, s);
    return law;
}

/// Per-(level, state) transition laws on a uniform grid.
class LawTable {
public:
    LawTable(const ChainModel& model, double T, int steps) : d_(model.d()), steps_(steps), T_(T) {
        if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("horizon T must be positive");
        if (steps < 1) throw ValidationError("number of steps must be at least 1");
        dt_ = T / steps;
        double worst = 0.0;
        std::vector<Matrix> gens;
        gens.reserve(static_cast<std::size_t>(steps));
        for (int k = 0; k < steps; ++k) {
            gens.push_back(model.generator(k * dt_));
            worst = std::max(worst, -gens.back().diagonal().minCoeff());
        }
        if (worst * dt_ > 1.0 + kGeneratorTolerance) {
            const auto suggested = static_cast<long long>(std::ceil(T * worst - 1e-9));
            throw ValidationError("step constraint violated: dt*max|A_jj| = " +
                                  detail::fmt_double(worst * dt_) +
                                  " > 1; use at least N = " + std::to_string(suggested) +
                                  " steps");
        }
        laws_.reserve(static_cast<std::size_t>(steps) * d_);
        for (int k = 0; k < steps; ++k) {
            for (int s = 0; s < d_; ++s) {
                laws_.push_back(make_step_law(gens[k], s, dt_));
                const StepLaw& law = laws_.back();
                if (law.p(s) == 0.0 && -gens[k](s, s) > 0.0) {
                    warnings_.push_back("boundary step at level " + std::to_string(k) +
                                        ", state " + std::to_string(s + 1) +
                                        ": stay probability is 0");
                }
            }
        }
    }

    int d() const noexcept { return d_; }
    int steps() const noexcept { return steps_; }
    double horizon() const noexcept { return T_; }
    double dt() const noexcept { return dt_; }
    double time(int k) const noexcept { return k == steps_ ? T_ : k * dt_; }
    const StepLaw& law(int k, int s) const { return laws_[static_cast<std::size_t>(k) * d_ + s]; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

private:
    int d_;
    int steps_;
    double T_;
    double dt_ = 0.0;
    std::vector<StepLaw> laws_;
    std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// DiscreteChainTree
// ---------------------------------------------------------------------------

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

/// Node budget: MCFBSDE_NODE_BUDGET when set to a positive integer, else 2^20.
inline std::size_t default_node_budget() {
    if (const char* env = std::getenv("MCFBSDE_NODE_BUDGET")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return kDefaultNodeBudget;
}

/// Every path prefix reachable from the root on the grid, stored level by
/// level with contiguous children.  Edges of probability zero are not
/// materialized.  Immutable after construction.
class DiscreteChainTree {
public:
    DiscreteChainTree(ChainModel model, double T, int steps, int root_state,
                      std::size_t node_budget = default_node_budget())
        : model_(std::move(model)), laws_(model_, T, steps), root_state_(root_state) {
        const int d = model_.d();
        if (root_state < 0 || root_state >= d)
            throw ValidationError("root state " + std::to_string(root_state + 1) +
                                  " out of range 1.." + std::to_string(d));

        // Count first so an oversized request fails before allocating.
        std::vector<double> count(static_cast<std::size_t>(d), 0.0);
        count[static_cast<std::size_t>(root_state)] = 1.0;
        double total = 1.0;
        for (int k = 0; k < steps; ++k) {
            std::vector<double> next(static_cast<std::size_t>(d), 0.0);
            for (int s = 0; s < d; ++s) {
                if (count[s] == 0.0) continue;
                for (int i : laws_.law(k, s).reachable) next[i] += count[s];
            }
            count.swap(next);
            for (double c : count) total += c;
            if (total > static_cast<double>(node_budget)) {
                throw ValidationError("tree needs more than " + std::to_string(node_budget) +
                                      " nodes (budget; set MCFBSDE_NODE_BUDGET to raise it)");
            }
        }

        const auto n = static_cast<std::size_t>(total);
        level_.reserve(n);
        state_.reserve(n);
        parent_.reserve(n);
        first_child_.reserve(n);
        child_count_.reserve(n);
        prob_.reserve(n);
        edge_prob_.reserve(n);

        level_offsets_.push_back(0);
        push_node(0, root_state, kNoNode, 1.0, 1.0);
        for (int k = 0; k < steps; ++k) {
            const NodeId begin = level_offsets_.back();
            const NodeId end = state_.size();
            level_offsets_.push_back(end);
            for (NodeId v = begin; v < end; ++v) {
                const StepLaw& law = laws_.law(k, state_[v]);
                first_child_[v] = state_.size();
                child_count_[v] = static_cast<int>(law.reachable.size());
                for (int i : law.reachable) push_node(k + 1, i, v, prob_[v] * law.p(i), law.p(i));
            }
        }
        level_offsets_.push_back(state_.size());
    }

    const ChainModel& model() const noexcept { return model_; }
    const LawTable& laws() const noexcept { return laws_; }
    int d() const noexcept { return model_.d(); }
    int steps() const noexcept { return laws_.steps(); }
    double horizon() const noexcept { return laws_.horizon(); }
    double dt() const noexcept { return laws_.dt(); }
    double time(int k) const noexcept { return laws_.time(k); }
    int root_state() const noexcept { return root_state_; }
    const std::vector<std::string>& warnings() const noexcept { return laws_.warnings(); }

    std::size_t size() const noexcept { return state_.size(); }
    NodeId level_begin(int k) const { return level_offsets_[static_cast<std::size_t>(k)]; }
    NodeId level_end(int k) const { return level_offsets_[static_cast<std::size_t>(k) + 1]; }

    int level(NodeId v) const { return level_[v]; }
    int state(NodeId v) const { return state_[v]; }
    NodeId parent(NodeId v) const { return parent_[v]; }
    NodeId first_child(NodeId v) const { return first_child_[v]; }
    int child_count(NodeId v) const { return child_count_[v]; }
    bool is_leaf(NodeId v) const { return level_[v] == steps(); }
    /// Probability of the whole path prefix ending at v.
    double probability(NodeId v) const { return prob_[v]; }
    /// Probability of the edge parent(v) → v (1 at the root).
    double edge_probability(NodeId v) const { return edge_prob_[v]; }

    /// Transition law out of node v (v must not be a leaf).
    const StepLaw& law(NodeId v) const { return laws_.law(level_[v], state_[v]); }
    /// ΔM on the edge parent(v) → v.
    Eigen::Ref<const Vector> increment(NodeId v) const {
        const NodeId u = parent_[v];
        return law(u).dM.col(state_[v]);
    }

    /// State sequence from the root to v, inclusive.
    std::vector<int> state_path(NodeId v) const {
        std::vector<int> out(static_cast<std::size_t>(level_[v]) + 1);
        for (NodeId u = v;; u = parent_[u]) {
            out[static_cast<std::size_t>(level_[u])] = state_[u];
            if (parent_[u] == kNoNode) break;
        }
        return out;
    }

private:
    void push_node(int level, int state, NodeId parent, double prob, double edge_prob) {
        level_.push_back(level);
        state_.push_back(state);
        parent_.push_back(parent);
        first_child_.push_back(kNoNode);
        child_count_.push_back(0);
        prob_.push_back(prob);
        edge_prob_.push_back(edge_prob);
    }

    ChainModel model_;
    LawTable laws_;
    int root_state_;
    std::vector<NodeId> level_offsets_;
    std::vector<int> level_;
    std::vector<int> state_;
    std::vector<NodeId> parent_;
    std::vector<NodeId> first_child_;
    std::vector<int> child_count_;
    std::vector<double> prob_;
    std::vector<double> edge_prob_;
};

using TreePtr = std::shared_ptr<const DiscreteChainTree>;

inline TreePtr build_tree(const ChainModel& model, double T, int steps, int root_state,
                          std::size_t node_budget = default_node_budget()) {
    return std::make_shared<const DiscreteChainTree>(model, T, steps, root_state, node_budget);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Monte Carlo paths.  ΔM is not copied per step; it is read from the shared
/// transition table, which is exact and recomputable from the states.
class PathBundle {
public:
    PathBundle(std::shared_ptr<const LawTable> laws, std::size_t count)
        : laws_(std::move(laws)), count_(count),
          states_(count * (static_cast<std::size_t>(laws_->steps()) + 1)), lineage_(count) {}

    std::size_t count() const noexcept { return count_; }
    int d() const noexcept { return laws_->d(); }
    int steps() const noexcept { return laws_->steps(); }
    double dt() const noexcept { return laws_->dt(); }
    double time(int k) const noexcept { return laws_->time(k); }
    const LawTable& laws() const noexcept { return *laws_; }

    int state(std::size_t path, int k) const { return states_[index(path, k)]; }
    /// ΔM over step k → k+1 of the given path.
    Eigen::Ref<const Vector> increment(std::size_t path, int k) const {
        return laws_->law(k, state(path, k)).dM.col(state(path, k + 1));
    }
    /// Seed of the RNG stream that produced this path.
    std::uint64_t lineage(std::size_t path) const { return lineage_[path]; }

    int* path_states(std::size_t path) { return &states_[index(path, 0)]; }
    void set_lineage(std::size_t path, std::uint64_t s) { lineage_[path] = s; }

private:
    std::size_t index(std::size_t path, int k) const {
        return path * (static_cast<std::size_t>(laws_->steps()) + 1) + static_cast<std::size_t>(k);
    }

    std::shared_ptr<const LawTable> laws_;
    std::size_t count_;
    std::vector<int> states_;
    std::vector<std::uint64_t> lineage_;
};

namespace detail {

inline int draw_next(const StepLaw& law, double u) {
    double acc = 0.0;
    for (int i : law.reachable) {
        acc += law.p(i);
        if (u < acc) return i;
    }
    return law.reachable.back();
}

/// Fills out[0..steps] with one path from stream `stream`.
inline void simulate_one(const LawTable& laws, int root, std::uint64_t stream, int* out) {
    std::mt19937_64 rng(stream);
    out[0] = root;
    for (int k = 0; k < laws.steps(); ++k) out[k + 1] = draw_next(laws.law(k, out[k]), uniform01(rng));
}

/// Runs body(begin, end) over [0, count) in contiguous chunks on the available cores.
template <class Body>
void parallel_chunks(std::size_t count, Body&& body) {
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min<std::size_t>(hw, std::max<std::size_t>(1, count / 1024));
    if (workers <= 1) {
        body(std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(count, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

inline PathBundle simulate_paths(const ChainModel& model, double T, int steps, int root_state,
                                 std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ValidationError("path count must be positive");
    if (root_state < 0 || root_state >= model.d())
        throw ValidationError("root state out of range");
    auto laws = std::make_shared<const LawTable>(model, T, steps);
    PathBundle bundle(laws, count);
    detail::parallel_chunks(count, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            const std::uint64_t s = stream_seed(seed, p);
            bundle.set_lineage(p, s);
            detail::simulate_one(*laws, root_state, s, bundle.path_states(p));
        }
    });
    return bundle;
}

/// Σ_k ΔM_k ΔM_k* along one path.
inline Matrix optional_qv(const PathBundle& bundle, std::size_t path) {
    Matrix out = Matrix::Zero(bundle.d(), bundle.d());
    for (int k = 0; k < bundle.steps(); ++k) {
        const auto inc = bundle.increment(path, k);
        out.noalias() += inc * inc.transpose();
    }
    return out;
}

/// Σ_k Q(state_k, t_k) Δt along one path.
inline Matrix predictable_qv(const ChainModel& model, const PathBundle& bundle, std::size_t path) {
    Matrix out = Matrix::Zero(bundle.d(), bundle.d());
    for (int k = 0; k < bundle.steps(); ++k)
        out += qv_density(model, bundle.state(path, k), bundle.time(k)) * bundle.dt();
    return out;
}

// ---------------------------------------------------------------------------
// Martingale representation
// ---------------------------------------------------------------------------

struct Representation {
    Vector mean;  // Σ_i p_i V_i
    Matrix Z;     // m×d, column i = V_i − mean
};

/// Centered representation over the given law.  Columns of unreachable
/// states are zero; with p_i = 0 they never act.
inline Representation centered_representation(const StepLaw& law, const Matrix& values) {
    Representation r;
    r.mean = Vector::Zero(values.rows());
    for (int i : law.reachable) r.mean.noalias() += law.p(i) * values.col(i);
    r.Z = Matrix::Zero(values.rows(), values.cols());
    for (int i : law.reachable) r.Z.col(i) = values.col(i) - r.mean;
    return r;
}

/// Exact one-step representation: next_values column i is the value reached
/// when the chain moves to state i.  Returns the conditional mean and the
/// centered Z with V_i − mean = Z·ΔM_i for every i.
inline Representation represent_martingale(const Matrix& next_values, int state, const Matrix& a,
                                           double dt) {
    const Eigen::Index d = a.rows();
    if (next_values.cols() != d)
        throw ValidationError("represent_martingale: expected " + std::to_string(d) + " columns");
    if (state < 0 || state >= d) throw ValidationError("state index out of range");
    if (-a(state, state) * dt > 1.0 + kGeneratorTolerance)
        throw ValidationError("represent_martingale: step constraint violated");
    const StepLaw law = make_step_law(a, state, dt);
    Representation r;
    r.mean = next_values * law.p;
    r.Z = next_values.colwise() - r.mean;
    return r;
}

inline Representation represent_martingale(const Matrix& next_values, int state,
                                           const ChainModel& model, double t, double dt) {
    return represent_martingale(next_values, state, model.generator(t), dt);
}

}  // namespace mcfbsde
