#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/field.hpp"
#include "mcfbsde/problem.hpp"
#include "mcfbsde/rng.hpp"
#include "mcfbsde/solver.hpp"

namespace mcfbsde {

// ===========================================================================
// Monotonicity
// ===========================================================================

enum class Flavor { literal, proof_sufficient };
enum class CheckStatus { pass, fail, degenerate };
enum class Inequality { F, H, Phi };

/// Differences drawn per sample cycle through: x only, y only, z only, all.
enum class SampleKind { x_only = 0, y_only = 1, z_only = 2, general = 3 };

inline std::string to_string(Flavor f) { return f == Flavor::literal ? "LITERAL" : "PROOF_SUFFICIENT"; }
inline std::string to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::pass: return "PASS";
        case CheckStatus::fail: return "FAIL";
        default: return "DEGENERATE";
    }
}
inline std::string to_string(Inequality q) {
    switch (q) {
        case Inequality::F: return "F";
        case Inequality::H: return "H";
        default: return "Phi";
    }
}
inline std::string to_string(SampleKind k) {
    switch (k) {
        case SampleKind::x_only: return "x_only";
        case SampleKind::y_only: return "y_only";
        case SampleKind::z_only: return "z_only";
        default: return "general";
    }
}
inline Flavor parse_flavor(const std::string& s) {
    if (s == "literal" || s == "LITERAL") return Flavor::literal;
    if (s == "sufficient" || s == "proof_sufficient" || s == "PROOF_SUFFICIENT")
        return Flavor::proof_sufficient;
    throw ValidationError("unknown flavor '" + s + "' (expected literal or sufficient)");
}

/// Sampling region: every coordinate of u¹, u² is uniform in
/// [−radius, radius], times uniform in [0, t_max].
struct SamplingBox {
    double radius = 2.0;
    double t_max = 1.0;
};

/// Which constant a sampled inequality bounds.
enum class Bound { c2, c2p, common, c3 };

inline std::string to_string(Bound b) {
    switch (b) {
        case Bound::c2: return "c2";
        case Bound::c2p: return "c2p";
        case Bound::common: return "c2,c2p";
        default: return "c3";
    }
}

/// A sampled inequality with the constant bound it implies.  `margin` is
/// that implied bound: the inequality holds for every constant up to it.
struct Witness {
    Inequality inequality = Inequality::F;
    SampleKind kind = SampleKind::general;
    Bound bound = Bound::common;
    double t = 0.0;
    int state = 0;
    TripleVector u1;
    TripleVector u2;
    double margin = 0.0;
};

struct MonotonicityReport {
    Mode mode = Mode::thm2;
    Flavor flavor = Flavor::proof_sufficient;
    int samples = 0;
    double c2 = std::numeric_limits<double>::infinity();
    double c2p = std::numeric_limits<double>::infinity();
    double c3 = std::numeric_limits<double>::infinity();
    int violations = 0;
    CheckStatus status = CheckStatus::pass;
    std::optional<Witness> worst;          // witness of the smallest estimated constant
    std::optional<Witness> witness_c2;
    std::optional<Witness> witness_c2p;
    std::optional<Witness> witness_c3;
};

inline constexpr double kCheckTolerance = 1e-12;

namespace detail {

struct Quantities {
    double LF, LH_flat, LH_Q, LP;
    double gx, gy, gz_flat, gz_Q;
};

inline Quantities measure(const CoefficientSet& c, const GStructure& g, const Matrix& q, double t,
                          int s, const TripleVector& u1, const TripleVector& u2) {
    const Matrix& G = g.G();
    const TripleVector du = u1 - u2;
    const TripleVector dF = eval_F(c, g, t, s, u1) - eval_F(c, g, t, s, u2);
    const Matrix dGs = eval_H(c, g, t, s, u1).z - eval_H(c, g, t, s, u2).z;
    const Vector dPhi = c.Phi_at(s, u1.x) - c.Phi_at(s, u2.x);
    const Vector gx = G * du.x;
    const Matrix gtz = G.transpose() * du.z;
    Quantities r{};
    r.LF = bracket(dF, du);
    r.LH_flat = (dGs.array() * du.z.array()).sum();
    r.LH_Q = (dGs * q * du.z.transpose()).trace();
    r.LP = dPhi.dot(gx);
    r.gx = gx.squaredNorm();
    r.gy = (G.transpose() * du.y).squaredNorm();
    r.gz_flat = gtz.squaredNorm();
    r.gz_Q = (gtz * q * gtz.transpose()).trace();
    return r;
}

/// Implied bound of one inequality: numerator ≥ c·denominator.
inline double implied(double numerator, double denominator, double scale) {
    if (denominator > 1e-14 * scale) return numerator / denominator + 0.0;
    return numerator >= -kCheckTolerance * scale ? std::numeric_limits<double>::infinity()
                                                 : -std::numeric_limits<double>::infinity();
}

struct Candidate {
    Inequality inequality;
    Bound bound;
    double value;
};

inline std::vector<Candidate> candidates(const Quantities& q, SampleKind kind, Flavor flavor,
                                         Mode mode, double scale) {
    const double sg = mode_sign(mode);
    const double nF = -sg * q.LF;
    const double nP = sg * q.LP;
    std::vector<Candidate> out;
    const auto bound_for = [kind]() -> Bound {
        switch (kind) {
            case SampleKind::x_only: return Bound::c2;
            case SampleKind::y_only:
            case SampleKind::z_only: return Bound::c2p;
            default: return Bound::common;
        }
    };
    if (flavor == Flavor::proof_sufficient) {
        if (kind != SampleKind::z_only) {
            out.push_back({Inequality::F, bound_for(), implied(nF, q.gx + q.gy, scale)});
        } else {
            out.push_back({Inequality::F, Bound::common, implied(nF, 0.0, scale)});
        }
        out.push_back({Inequality::H, Bound::c2p, implied(-sg * q.LH_Q, q.gz_Q, scale)});
    } else {
        const double den = q.gx + q.gy + q.gz_flat;
        out.push_back({Inequality::F, bound_for(), implied(nF, den, scale)});
        out.push_back({Inequality::H, bound_for(), implied(-sg * q.LH_flat, den, scale)});
    }
    if (kind == SampleKind::x_only || kind == SampleKind::general)
        out.push_back({Inequality::Phi, Bound::c3, implied(nP, q.gx, scale)});
    return out;
}

inline double scale_of(const TripleVector& u1, const TripleVector& u2) {
    const TripleVector du = u1 - u2;
    return 1.0 + bracket(du, du);
}

inline void draw_sample(std::mt19937_64& rng, int n, int m, int d, SampleKind kind,
                        const SamplingBox& box, TripleVector& u1, TripleVector& u2) {
    const auto fill = [&](auto& a) {
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform(rng, -box.radius, box.radius);
    };
    u1 = TripleVector::zero(n, m, d);
    fill(u1.x);
    fill(u1.y);
    fill(u1.z);
    u2 = u1;
    if (kind == SampleKind::x_only || kind == SampleKind::general) fill(u2.x);
    if (kind == SampleKind::y_only || kind == SampleKind::general) fill(u2.y);
    if (kind == SampleKind::z_only || kind == SampleKind::general) fill(u2.z);
}

}  // namespace detail

/// Re-evaluates the implied bound recorded in a witness.
inline double evaluate_witness(const CoefficientSet& coeffs, const GStructure& g,
                               const ChainModel& model, Mode mode, Flavor flavor, const Witness& w) {
    const Matrix q = qv_density(model, w.state, w.t);
    const detail::Quantities qs = detail::measure(coeffs, g, q, w.t, w.state, w.u1, w.u2);
    const double scale = detail::scale_of(w.u1, w.u2);
    for (const auto& c : detail::candidates(qs, w.kind, flavor, mode, scale)) {
        if (c.inequality == w.inequality) return c.value;
    }
    throw ValidationError("witness inequality does not apply to its sample kind");
}

/// Samples pairs (u¹, u²) and reports the largest constants for which
/// every sampled inequality holds.  Sample i depends only on (seed, i), so
/// the estimates can only shrink as the sample count grows.
inline MonotonicityReport check_monotonicity(const CoefficientSet& coeffs, const GStructure& g,
                                             const ChainModel& model, Mode mode, Flavor flavor,
                                             int samples, std::uint64_t seed,
                                             const SamplingBox& box = {}) {
    if (samples < 1) throw ValidationError("check_monotonicity: samples must be positive");
    if (!(box.radius > 0.0) || !(box.t_max >= 0.0)) throw ValidationError("check_monotonicity: empty box");
    if (coeffs.d != model.d()) throw ValidationError("check_monotonicity: d mismatch");
    if (g.n() != coeffs.n || g.m() != coeffs.m) throw ValidationError("check_monotonicity: G must be m x n");
    MonotonicityReport rep;
    rep.mode = mode;
    rep.flavor = flavor;
    rep.samples = samples;
    const double violation_level = flavor == Flavor::literal ? kCheckTolerance : -kCheckTolerance;
    for (int i = 0; i < samples; ++i) {
        std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
        Witness w;
        w.kind = static_cast<SampleKind>(i % 4);
        w.t = uniform(rng, 0.0, box.t_max);
        w.state = static_cast<int>(rng() % static_cast<std::uint64_t>(model.d()));
        detail::draw_sample(rng, coeffs.n, coeffs.m, coeffs.d, w.kind, box, w.u1, w.u2);
        const Matrix q = qv_density(model, w.state, w.t);
        const detail::Quantities qs = detail::measure(coeffs, g, q, w.t, w.state, w.u1, w.u2);
        const double scale = detail::scale_of(w.u1, w.u2);
        for (const auto& c : detail::candidates(qs, w.kind, flavor, mode, scale)) {
            if (c.value < violation_level) ++rep.violations;
            Witness cw = w;
            cw.inequality = c.inequality;
            cw.bound = c.bound;
            cw.margin = c.value;
            const auto take = [&](double& slot, std::optional<Witness>& wit) {
                if (c.value < slot) {
                    slot = c.value;
                    wit = cw;
                }
            };
            switch (c.bound) {
                case Bound::c2: take(rep.c2, rep.witness_c2); break;
                case Bound::c2p: take(rep.c2p, rep.witness_c2p); break;
                case Bound::c3: take(rep.c3, rep.witness_c3); break;
                case Bound::common:
                    take(rep.c2, rep.witness_c2);
                    take(rep.c2p, rep.witness_c2p);
                    break;
            }
        }
    }
    double lowest = std::numeric_limits<double>::infinity();
    for (auto* wit : {&rep.witness_c2, &rep.witness_c2p, &rep.witness_c3}) {
        if (*wit && (*wit)->margin < lowest) {
            lowest = (*wit)->margin;
            rep.worst = *wit;
        }
    }
    if (flavor == Flavor::literal) {
        rep.status = lowest <= kCheckTolerance ? CheckStatus::fail : CheckStatus::pass;
    } else if (lowest < -kCheckTolerance) {
        rep.status = CheckStatus::fail;
    } else if (lowest <= kCheckTolerance) {
        rep.status = CheckStatus::degenerate;
    } else {
        rep.status = CheckStatus::pass;
    }
    return rep;
}

// ===========================================================================
// Lipschitz
// ===========================================================================

/// Sup of sampled difference quotients.  The *_weighted entries measure
/// σ and f against |û|²_Q = |x̂|² + |ŷ|² + tr(ẑ Q ẑ*), with σ̂ itself in the
/// Q-seminorm for sigma_weighted.
struct LipschitzReport {
    int samples = 0;
    double b = 0.0;
    double sigma = 0.0;
    double f = 0.0;
    double Phi = 0.0;
    double F = 0.0;
    double H = 0.0;
    double sigma_weighted = 0.0;
    double f_weighted = 0.0;
};

inline LipschitzReport check_lipschitz(const CoefficientSet& coeffs, const GStructure& g,
                                       const ChainModel& model, int samples, std::uint64_t seed,
                                       const SamplingBox& box = {}) {
    if (samples < 1) throw ValidationError("check_lipschitz: samples must be positive");
    if (!(box.radius > 0.0) || !(box.t_max >= 0.0)) throw ValidationError("check_lipschitz: empty box");
    if (coeffs.d != model.d()) throw ValidationError("check_lipschitz: d mismatch");
    LipschitzReport rep;
    rep.samples = samples;
    for (int i = 0; i < samples; ++i) {
        std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
        const auto kind = static_cast<SampleKind>(i % 4);
        const double t = uniform(rng, 0.0, box.t_max);
        const int s = static_cast<int>(rng() % static_cast<std::uint64_t>(model.d()));
        TripleVector u1, u2;
        detail::draw_sample(rng, coeffs.n, coeffs.m, coeffs.d, kind, box, u1, u2);
        const TripleVector du = u1 - u2;
        const double nu = std::sqrt(bracket(du, du));
        if (!(nu > 0.0)) continue;
        const Matrix q = qv_density(model, s, t);
        const double nuq = std::sqrt(du.x.squaredNorm() + du.y.squaredNorm() +
                                     std::max(0.0, (du.z * q * du.z.transpose()).trace()));
        const Vector db = coeffs.b_at(t, s, u1.x, u1.y, u1.z) - coeffs.b_at(t, s, u2.x, u2.y, u2.z);
        const Matrix ds = coeffs.sigma_at(t, s, u1.x, u1.y, u1.z) - coeffs.sigma_at(t, s, u2.x, u2.y, u2.z);
        const Vector df = coeffs.f_at(t, s, u1.x, u1.y, u1.z) - coeffs.f_at(t, s, u2.x, u2.y, u2.z);
        const TripleVector dF = eval_F(coeffs, g, t, s, u1) - eval_F(coeffs, g, t, s, u2);
        const TripleVector dH = eval_H(coeffs, g, t, s, u1) - eval_H(coeffs, g, t, s, u2);
        rep.b = std::max(rep.b, db.norm() / nu);
        rep.sigma = std::max(rep.sigma, ds.norm() / nu);
        rep.f = std::max(rep.f, df.norm() / nu);
        rep.F = std::max(rep.F, std::sqrt(bracket(dF, dF)) / nu);
        rep.H = std::max(rep.H, std::sqrt(bracket(dH, dH)) / nu);
        if (nuq > 1e-12 * nu) {
            const double sq = std::sqrt(std::max(0.0, (ds * q * ds.transpose()).trace()));
            rep.sigma_weighted = std::max(rep.sigma_weighted, sq / nuq);
            rep.f_weighted = std::max(rep.f_weighted, df.norm() / nuq);
        }
        const double nx = du.x.norm();
        if (nx > 0.0) {
            const Vector dp = coeffs.Phi_at(s, u1.x) - coeffs.Phi_at(s, u2.x);
            rep.Phi = std::max(rep.Phi, dp.norm() / nx);
        }
    }
    return rep;
}

// ===========================================================================
// Duality identity
// ===========================================================================

/// Both sides of the discrete product rule
///   E(Ŷ_T, GX̂_T) − (Ŷ₀, GX̂₀)
///     = E Σ_k { [F̂, û]Δt − Δt²(Gb̂, f̂) + tr(Gσ̂ ΔMΔM* Ẑ*) }.
/// The optional form uses the realized ΔMΔM* per edge, the predictable form
/// the one-step compensator Σ p ΔMΔM*; both are exact.  The continuous form
/// replaces the compensator by QΔt and carries an O(Δt) gap.
struct DualityReport {
    double lhs = 0.0;
    double drift_term = 0.0;
    double correction_term = 0.0;
    double optional_term = 0.0;
    double predictable_term = 0.0;
    double continuous_term = 0.0;
    double gap_optional = 0.0;
    double gap_predictable = 0.0;
    double gap_continuous = 0.0;
};

inline DualityReport check_duality(const FBSDEProblem& p1, const SolutionField& u1,
                                   const FBSDEProblem& p2, const SolutionField& u2, double l = 1.0) {
    if (!p1.tree || !p2.tree) throw ValidationError("check_duality: missing tree");
    if (p1.tree != p2.tree &&
        (p1.tree->size() != p2.tree->size() || p1.tree->steps() != p2.tree->steps() ||
         p1.tree->d() != p2.tree->d() || p1.tree->dt() != p2.tree->dt()))
        throw ValidationError("check_duality: problems live on different trees");
    if (!u1.same_shape(u2) || u1.size() != p1.tree->size())
        throw ValidationError("check_duality: fields do not match the tree");
    if ((p1.g.G() - p2.g.G()).norm() != 0.0) throw ValidationError("check_duality: G differs");
    const DiscreteChainTree& tree = *p1.tree;
    const GStructure& g = p1.g;
    const Matrix& G = g.G();
    const CoefficientSet c1 = level_coefficients(p1, l);
    const CoefficientSet c2 = level_coefficients(p2, l);
    const double dt = tree.dt();
    DualityReport r;
    r.lhs -= (u1.y(0) - u2.y(0)).dot(G * (u1.x(0) - u2.x(0)));
    for (NodeId v = 0; v < tree.size(); ++v) {
        const double pv = tree.probability(v);
        const Vector dx = u1.x(v) - u2.x(v);
        const Vector dy = u1.y(v) - u2.y(v);
        if (tree.is_leaf(v)) {
            r.lhs += pv * dy.dot(G * dx);
            continue;
        }
        const int s = tree.state(v);
        const double t = tree.time(tree.level(v));
        const TripleVector a{u1.x(v), u1.y(v), u1.z(v)};
        const TripleVector b{u2.x(v), u2.y(v), u2.z(v)};
        const TripleVector du = a - b;
        const Vector db = c1.b_at(t, s, a.x, a.y, a.z) - c2.b_at(t, s, b.x, b.y, b.z);
        const Vector df = c1.f_at(t, s, a.x, a.y, a.z) - c2.f_at(t, s, b.x, b.y, b.z);
        const Matrix gs = G * (c1.sigma_at(t, s, a.x, a.y, a.z) - c2.sigma_at(t, s, b.x, b.y, b.z));
        const TripleVector dF{-G.transpose() * df, G * db, Matrix::Zero(g.m(), tree.d())};
        r.drift_term += pv * bracket(dF, du) * dt;
        r.correction_term -= pv * dt * dt * (G * db).dot(df);
        const StepLaw& law = tree.law(v);
        r.predictable_term += pv * (gs * law.compensator * du.z.transpose()).trace();
        r.continuous_term += pv * (gs * law.Q * du.z.transpose()).trace() * dt;
        const NodeId first = tree.first_child(v);
        const NodeId last = first + static_cast<NodeId>(tree.child_count(v));
        for (NodeId ch = first; ch < last; ++ch) {
            const auto dm = tree.increment(ch);
            r.optional_term += tree.probability(ch) * (du.z * dm).dot(gs * dm);
        }
    }
    const double base = r.drift_term + r.correction_term;
    r.gap_optional = std::abs(r.lhs - base - r.optional_term);
    r.gap_predictable = std::abs(r.lhs - base - r.predictable_term);
    r.gap_continuous = std::abs(r.lhs - base - r.continuous_term);
    return r;
}

// ===========================================================================
// Quadratic variation consistency
// ===========================================================================

struct QVReport {
    std::size_t paths = 0;
    Matrix mean_optional;           // Monte Carlo mean of [M,M]_T
    Matrix exact_discrete;          // E Σ_k Σ p ΔMΔM* (exact for the Euler law)
    Matrix exact_continuous;        // E Σ_k Q Δt
    double relative_error = 0.0;    // vs exact_discrete, Frobenius
    double relative_error_continuous = 0.0;
    double clt_tolerance = 0.0;     // 3 standard errors, relative
    double tolerance = 0.02;
    bool pass = false;
    double seconds = 0.0;
};

inline QVReport check_qv_consistency(const ChainModel& model, double T, int steps, std::size_t paths,
                                     std::uint64_t seed, int root_state = 0, double tolerance = 0.02) {
    if (paths == 0) throw ValidationError("check_qv_consistency: path count must be positive");
    if (root_state < 0 || root_state >= model.d()) throw ValidationError("root state out of range");
    const auto start = std::chrono::steady_clock::now();
    const LawTable laws(model, T, steps);
    const int d = model.d();
    QVReport rep;
    rep.paths = paths;
    rep.tolerance = tolerance;

    // Forward Kolmogorov on the state distribution.
    Vector pi = Vector::Zero(d);
    pi(root_state) = 1.0;
    rep.exact_discrete = Matrix::Zero(d, d);
    rep.exact_continuous = Matrix::Zero(d, d);
    for (int k = 0; k < steps; ++k) {
        Vector next = Vector::Zero(d);
        for (int s = 0; s < d; ++s) {
            if (pi(s) == 0.0) continue;
            const StepLaw& law = laws.law(k, s);
            rep.exact_discrete += pi(s) * law.compensator;
            rep.exact_continuous += pi(s) * law.Q * laws.dt();
            next += pi(s) * law.p;
        }
        pi = next;
    }

    // Monte Carlo in fixed-size blocks so the sum order never depends on threads.
    constexpr std::size_t block = 4096;
    const std::size_t blocks = (paths + block - 1) / block;
    std::vector<Matrix> sums(blocks, Matrix::Zero(d, d));
    std::vector<Matrix> squares(blocks, Matrix::Zero(d, d));
    detail::parallel_chunks(blocks, [&](std::size_t b0, std::size_t b1) {
        std::vector<int> states(static_cast<std::size_t>(steps) + 1);
        Matrix acc(d, d);
        for (std::size_t b = b0; b < b1; ++b) {
            const std::size_t lo = b * block;
            const std::size_t hi = std::min(paths, lo + block);
            for (std::size_t p = lo; p < hi; ++p) {
                detail::simulate_one(laws, root_state, stream_seed(seed, p), states.data());
                acc.setZero();
                for (int k = 0; k < steps; ++k) {
                    const auto inc = laws.law(k, states[k]).dM.col(states[k + 1]);
                    acc.noalias() += inc * inc.transpose();
                }
                sums[b] += acc;
                squares[b] += acc.cwiseProduct(acc);
            }
        }
    });
    Matrix sum = Matrix::Zero(d, d);
    Matrix sq = Matrix::Zero(d, d);
    for (std::size_t b = 0; b < blocks; ++b) {
        sum += sums[b];
        sq += squares[b];
    }
    const double np = static_cast<double>(paths);
    rep.mean_optional = sum / np;
    const Matrix var = (sq / np - rep.mean_optional.cwiseProduct(rep.mean_optional)).cwiseMax(0.0);
    const double ref = rep.exact_discrete.norm();
    const double refc = rep.exact_continuous.norm();
    const double se = std::sqrt(var.sum() / np);
    rep.relative_error = ref > 0.0 ? (rep.mean_optional - rep.exact_discrete).norm() / ref
                                   : rep.mean_optional.norm();
    rep.relative_error_continuous = refc > 0.0 ? (rep.mean_optional - rep.exact_continuous).norm() / refc
                                               : rep.mean_optional.norm();
    rep.clt_tolerance = ref > 0.0 ? 3.0 * se / ref : 0.0;
    rep.pass = rep.relative_error <= tolerance;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

// ===========================================================================
// Form equivalence
// ===========================================================================

struct FormEquivalenceReport {
    double max_discrepancy = 0.0;
    NodeId worst_node = kNoNode;
};

/// A field with entries uniform in [−1, 1]; Z is centered so it is a valid
/// representation on every node.
inline SolutionField random_field(const DiscreteChainTree& tree, int n, int m, std::uint64_t seed) {
    SolutionField f(tree.size(), n, m, tree.d());
    std::mt19937_64 rng(stream_seed(seed, 0xf1e1d));
    for (NodeId v = 0; v < tree.size(); ++v) {
        for (int i = 0; i < n; ++i) f.x(v)(i) = uniform(rng, -1.0, 1.0);
        for (int i = 0; i < m; ++i) f.y(v)(i) = uniform(rng, -1.0, 1.0);
        if (tree.is_leaf(v)) continue;
        Matrix z = Matrix::Zero(m, tree.d());
        for (int i = 0; i < m; ++i)
            for (int j : tree.law(v).reachable) z(i, j) = uniform(rng, -1.0, 1.0);
        const Vector mean = z * tree.law(v).p;
        for (int j : tree.law(v).reachable) z.col(j) -= mean;
        f.z(v) = z;
    }
    return f;
}

/// One sweep in the dM form against one sweep in the converted dm form from
/// the same input field; reports the node-wise largest difference.
inline FormEquivalenceReport check_form_equivalence(const FBSDEProblem& problem, double l = 1.0,
                                                    const std::optional<SolutionField>& input = std::nullopt,
                                                    std::uint64_t seed = 0) {
    problem.validate();
    const SolutionField in = input ? *input : random_field(*problem.tree, problem.n(), problem.m(), seed);
    const SolutionField a = picard_sweep(problem, l, in, Form::dM);
    const SolutionField b = picard_sweep(problem, l, in, Form::dm);
    FormEquivalenceReport rep;
    for (NodeId v = 0; v < problem.tree->size(); ++v) {
        const double diff = std::max({(a.x(v) - b.x(v)).cwiseAbs().maxCoeff(),
                                      (a.y(v) - b.y(v)).cwiseAbs().maxCoeff(),
                                      (a.z(v) - b.z(v)).cwiseAbs().maxCoeff()});
        if (diff > rep.max_discrepancy || rep.worst_node == kNoNode) {
            rep.max_discrepancy = std::max(rep.max_discrepancy, diff);
            rep.worst_node = v;
        }
    }
    return rep;
}

}  // namespace mcfbsde
