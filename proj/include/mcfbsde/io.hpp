#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"

#include "mcfbsde/chain.hpp"
#include "mcfbsde/discrete.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/field.hpp"
#include "mcfbsde/linear_fbsde.hpp"
#include "mcfbsde/solver.hpp"
#include "mcfbsde/verify.hpp"

// Machine-readable outputs.  Every JSON document carries schema_version;
// CSV numbers use %.17g so files round-trip exactly.

namespace mcfbsde::io {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
    return buf;
}

/// JSON has no infinities; unbounded estimates are written as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v(i)));
    return a;
}

inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(finite_or_null(m(i, j)));
        rows.push_back(row);
    }
    return rows;
}

/// FNV-1a over the 1-based state sequence from the root, as 16 hex digits.
inline std::string state_path_hash(const std::vector<int>& states) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int s : states) {
        const auto v = static_cast<std::uint32_t>(s + 1);
        for (int b = 0; b < 4; ++b) {
            h ^= (v >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Writes `content` to a temporary sibling and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw Error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
    write_atomic(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Columns: path_id, step, time, state, dM_1..dM_d (state 1-based).
inline std::string paths_csv(const PathBundle& bundle) {
    std::string out = "path_id,step,time,state";
    for (int i = 1; i <= bundle.d(); ++i) out += ",dM_" + std::to_string(i);
    out += '\n';
    for (std::size_t p = 0; p < bundle.count(); ++p) {
        for (int k = 0; k <= bundle.steps(); ++k) {
            out += std::to_string(p) + ',' + std::to_string(k) + ',' + num(bundle.time(k)) + ',' +
                   std::to_string(bundle.state(p, k) + 1);
            for (int i = 0; i < bundle.d(); ++i) {
                // Row k carries the increment that led into step k; row 0 carries zeros.
                const double v = k == 0 ? 0.0 : bundle.increment(p, k - 1)(i);
                out += ',' + num(v);
            }
            out += '\n';
        }
    }
    return out;
}

/// Columns: node_id, level, state_path_hash, time, X_1..X_n, Y_1..Y_m,
/// Z_1_1..Z_m_d (Z flattened row-major).
inline std::string solution_csv(const DiscreteChainTree& tree, const SolutionField& f) {
    std::string out = "node_id,level,state_path_hash,time";
    for (int i = 1; i <= f.n(); ++i) out += ",X_" + std::to_string(i);
    for (int i = 1; i <= f.m(); ++i) out += ",Y_" + std::to_string(i);
    for (int i = 1; i <= f.m(); ++i)
        for (int j = 1; j <= f.d(); ++j) out += ",Z_" + std::to_string(i) + "_" + std::to_string(j);
    out += '\n';
    for (NodeId v = 0; v < tree.size(); ++v) {
        out += std::to_string(v) + ',' + std::to_string(tree.level(v)) + ',' +
               state_path_hash(tree.state_path(v)) + ',' + num(tree.time(tree.level(v)));
        for (int i = 0; i < f.n(); ++i) out += ',' + num(f.x(v)(i));
        for (int i = 0; i < f.m(); ++i) out += ',' + num(f.y(v)(i));
        for (int i = 0; i < f.m(); ++i)
            for (int j = 0; j < f.d(); ++j) out += ',' + num(f.z(v)(i, j));
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON reports
// ---------------------------------------------------------------------------

inline json to_json(const ResidualReport& r) {
    return {{"initial", r.initial},
            {"forward", r.forward},
            {"backward", r.backward},
            {"representation", r.representation},
            {"terminal", r.terminal},
            {"max", r.max()},
            {"worst_node", r.worst_node == kNoNode ? json(nullptr) : json(r.worst_node)},
            {"worst_kind", r.worst_kind}};
}

inline json to_json(const SweepStats& s) {
    return {{"level", s.level},          {"sweeps", s.sweeps}, {"converged", s.converged},
            {"norms", s.norms},          {"sup_diffs", s.sup_diffs},
            {"ratios", s.ratios},        {"relaxation", s.relaxation}};
}

inline json to_json(const ConvergenceReport& r) {
    json levels = json::array();
    for (const auto& l : r.levels) {
        levels.push_back({{"level", l.level}, {"delta", l.delta}, {"accepted", l.accepted}, {"stats", to_json(l.stats)}});
    }
    return {{"converged", r.converged},
            {"levels", levels},
            {"total_sweeps", r.total_sweeps},
            {"final_residual", to_json(r.final_residual)},
            {"notes", r.notes}};
}

inline json to_json(const TripleVector& u) {
    return {{"x", to_json(u.x)}, {"y", to_json(u.y)}, {"z", to_json(u.z)}};
}

inline json to_json(const Witness& w) {
    return {{"inequality", to_string(w.inequality)},
            {"sample_kind", to_string(w.kind)},
            {"bounds", to_string(w.bound)},
            {"t", w.t},
            {"state", w.state + 1},
            {"u1", to_json(w.u1)},
            {"u2", to_json(w.u2)},
            {"margin", finite_or_null(w.margin)}};
}

inline json to_json(const MonotonicityReport& r) {
    const auto wit = [](const std::optional<Witness>& w) { return w ? to_json(*w) : json(nullptr); };
    return {{"mode", to_string(r.mode)},
            {"flavor", to_string(r.flavor)},
            {"samples", r.samples},
            {"c2", finite_or_null(r.c2)},
            {"c2p", finite_or_null(r.c2p)},
            {"c3", finite_or_null(r.c3)},
            {"violations", r.violations},
            {"status", to_string(r.status)},
            {"worst_witness", wit(r.worst)},
            {"witness_c2", wit(r.witness_c2)},
            {"witness_c2p", wit(r.witness_c2p)},
            {"witness_c3", wit(r.witness_c3)}};
}

inline json to_json(const LipschitzReport& r) {
    return {{"samples", r.samples}, {"b", r.b},         {"sigma", r.sigma},
            {"f", r.f},             {"Phi", r.Phi},     {"F", r.F},
            {"H", r.H},             {"sigma_weighted", r.sigma_weighted},
            {"f_weighted", r.f_weighted}};
}

inline json to_json(const QVReport& r) {
    return {{"paths", r.paths},
            {"mean_optional", to_json(r.mean_optional)},
            {"exact_discrete", to_json(r.exact_discrete)},
            {"exact_continuous", to_json(r.exact_continuous)},
            {"relative_error", r.relative_error},
            {"relative_error_continuous", r.relative_error_continuous},
            {"clt_tolerance", r.clt_tolerance},
            {"tolerance", r.tolerance},
            {"pass", r.pass},
            {"seconds", r.seconds}};
}

inline json to_json(const DualityReport& r) {
    return {{"lhs", r.lhs},
            {"drift_term", r.drift_term},
            {"correction_term", r.correction_term},
            {"optional_term", r.optional_term},
            {"predictable_term", r.predictable_term},
            {"continuous_term", r.continuous_term},
            {"gap_optional", r.gap_optional},
            {"gap_predictable", r.gap_predictable},
            {"gap_continuous", r.gap_continuous}};
}

inline json to_json(const AffineSolution& s) {
    return {{"variant", s.variant == GCase::n_le_m ? "n_le_m" : "n_gt_m"},
            {"K0", to_json(s.K.K.front())},
            {"gain0", to_json(s.gain.front())},
            {"gain_gap", s.gain_gap},
            {"q_crosscheck", s.q_crosscheck},
            {"residual", s.residual}};
}

}  // namespace mcfbsde::io
