#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mcfbsde/algebra.hpp"
#include "mcfbsde/builtins.hpp"
#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/exprdsl.hpp"
#include "mcfbsde/mode.hpp"
#include "mcfbsde/problem.hpp"
#include "mcfbsde/solver.hpp"

// JSON run configuration.  Matrices are row-major arrays of rows.  The
// generator follows the column convention: entry [i][j] is the jump rate
// from state j+1 to state i+1, so every column sums to zero.  States are
// 1-based in the file and 0-based in the library.

namespace mcfbsde {

inline constexpr int kConfigSchemaVersion = 1;

struct ChainConfig {
    int d = 2;
    std::optional<Matrix> generator;                       // constant generator
    std::vector<std::vector<expr::Expression>> rate_exprs;  // time-dependent entries
    double T = 1.0;
    int steps = 8;
    int root_state = 0;  // 0-based

    ChainModel model() const {
        if (generator) return ChainModel(*generator);
        auto exprs = std::make_shared<const std::vector<std::vector<expr::Expression>>>(rate_exprs);
        const int dim = d;
        return ChainModel(dim, [exprs, dim](double t) {
            Matrix a(dim, dim);
            expr::EvalContext ctx;
            ctx.t = t;
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    a(i, j) = (*exprs)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].evaluate(ctx);
            return a;
        });
    }
};

struct ProblemConfig {
    std::string builtin;           // empty when coefficients are given explicitly
    std::uint64_t builtin_seed = 0;
    int n = 1;
    int m = 1;
    Matrix G = Matrix::Identity(1, 1);
    Vector x0 = Vector::Zero(1);
    Mode mode = Mode::thm2;
    double c2 = 0.5;
    double c2p = 0.5;
    double lambda = 1.0;
    CoefficientSet coeffs;
    Forcing forcing;
};

struct RunConfig {
    ChainConfig chain;
    ProblemConfig problem;
    ContinuationConfig solver;
    std::uint64_t seed = 0;

    FBSDEProblem make_problem(TreePtr tree) const {
        FBSDEProblem p;
        p.coeffs = problem.coeffs;
        p.g = GStructure(problem.G);
        p.x0 = problem.x0;
        p.mode = problem.mode;
        p.c2 = problem.c2;
        p.c2p = problem.c2p;
        p.forcing = problem.forcing;
        p.tree = std::move(tree);
        p.validate();
        return p;
    }

    LinearFBSDEProblem make_linear(TreePtr tree) const {
        LinearFBSDEProblem p;
        p.mode = problem.mode;
        p.c2 = problem.c2;
        p.c2p = problem.c2p;
        p.lambda = problem.lambda;
        p.g = GStructure(problem.G);
        p.x0 = problem.x0;
        p.forcing = problem.forcing;
        p.tree = std::move(tree);
        p.validate();
        return p;
    }
};

namespace config_detail {

using json = nlohmann::json;

/// A JSON value together with its path, for error messages.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& what) const { throw ValidationError(path_ + ": " + what); }

    bool has(const char* key) const { return j_.contains(key); }
    Node at(const char* key) const {
        if (!j_.contains(key)) fail(std::string("missing required field '") + key + "'");
        return Node(j_.at(key), path_ + "." + key);
    }
    Node at(std::size_t i) const { return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

    void object() const {
        if (!j_.is_object()) fail("expected an object");
    }
    std::size_t array(std::optional<std::size_t> size = std::nullopt) const {
        if (!j_.is_array()) fail("expected an array");
        if (size && j_.size() != *size)
            fail("expected " + std::to_string(*size) + " entries, found " + std::to_string(j_.size()));
        return j_.size();
    }
    void only(std::initializer_list<const char*> keys) const {
        object();
        const std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& item : j_.items())
            if (!allowed.count(item.key())) fail("unknown field '" + item.key() + "'");
    }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        const double v = j_.get<double>();
        if (!std::isfinite(v)) fail("number is not finite");
        return v;
    }
    double positive() const {
        const double v = number();
        if (!(v > 0.0)) fail("must be positive");
        return v;
    }
    long integer() const {
        if (!j_.is_number_integer()) fail("expected an integer");
        return j_.get<long>();
    }
    std::uint64_t unsigned_integer() const {
        if (j_.is_number_unsigned()) return j_.get<std::uint64_t>();
        const long v = integer();
        if (v < 0) fail("must be nonnegative");
        return static_cast<std::uint64_t>(v);
    }
    std::string string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }

    Vector vector(std::size_t size) const {
        array(size);
        Vector v(static_cast<Eigen::Index>(size));
        for (std::size_t i = 0; i < size; ++i) v(static_cast<Eigen::Index>(i)) = at(i).number();
        return v;
    }
    Matrix matrix(std::size_t rows, std::size_t cols) const {
        array(rows);
        Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < rows; ++i) {
            const Node row = at(i);
            row.array(cols);
            for (std::size_t j = 0; j < cols; ++j)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row.at(j).number();
        }
        return out;
    }

    expr::Expression expression(const expr::Dims& dims, const expr::ParseOptions& opt) const {
        try {
            if (j_.is_number()) {
                std::ostringstream text;
                text.precision(17);
                text << number();
                std::string s = text.str();
                if (s.front() == '-') s = "-(" + s.substr(1) + ")";
                return expr::parse(s, dims, opt);
            }
            return expr::parse(string(), dims, opt);
        } catch (const ExprError& e) {
            throw ValidationError(path_ + ": " + e.what());
        }
    }
    std::vector<expr::Expression> expressions(std::size_t size, const expr::Dims& dims,
                                              const expr::ParseOptions& opt) const {
        array(size);
        std::vector<expr::Expression> out;
        for (std::size_t i = 0; i < size; ++i) out.push_back(at(i).expression(dims, opt));
        return out;
    }
    std::vector<expr::Expression> expression_matrix(std::size_t rows, std::size_t cols, const expr::Dims& dims,
                                                    const expr::ParseOptions& opt) const {
        array(rows);
        std::vector<expr::Expression> out;
        for (std::size_t i = 0; i < rows; ++i) {
            const Node row = at(i);
            row.array(cols);
            for (std::size_t j = 0; j < cols; ++j) out.push_back(row.at(j).expression(dims, opt));
        }
        return out;
    }

private:
    const json& j_;
    std::string path_;
};

using ExprList = std::shared_ptr<const std::vector<expr::Expression>>;

inline Vector eval_list(const ExprList& e, const expr::EvalContext& ctx) {
    Vector out(static_cast<Eigen::Index>(e->size()));
    for (std::size_t i = 0; i < e->size(); ++i) out(static_cast<Eigen::Index>(i)) = (*e)[i].evaluate(ctx);
    return out;
}

inline Matrix eval_matrix(const ExprList& e, int rows, int cols, const expr::EvalContext& ctx) {
    Matrix out(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out(i, j) = (*e)[static_cast<std::size_t>(i * cols + j)].evaluate(ctx);
    return out;
}

inline ChainConfig read_chain(const Node& c) {
    c.only({"d", "generator", "T", "steps", "root_state"});
    ChainConfig out;
    const long d = c.at("d").integer();
    if (d < 2) c.at("d").fail("chain needs at least 2 states");
    out.d = static_cast<int>(d);
    const Node g = c.at("generator");
    g.array(static_cast<std::size_t>(d));
    bool constant = true;
    for (std::size_t i = 0; i < static_cast<std::size_t>(d); ++i) {
        const Node row = g.at(i);
        row.array(static_cast<std::size_t>(d));
        for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j)
            if (!row.at(j).raw().is_number()) constant = false;
    }
    if (constant) {
        const Matrix a = g.matrix(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        const GeneratorVerdict v = validate_generator({a});
        if (!v.valid) g.fail("invalid generator: " + v.message);
        out.generator = a;
    } else {
        expr::ParseOptions opt{true, false, false, false, false, 64};
        for (std::size_t i = 0; i < static_cast<std::size_t>(d); ++i) {
            std::vector<expr::Expression> row;
            for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j)
                row.push_back(g.at(i).at(j).expression({1, 1, static_cast<int>(d)}, opt));
            out.rate_exprs.push_back(std::move(row));
        }
    }
    out.T = c.at("T").positive();
    const long steps = c.at("steps").integer();
    if (steps < 1) c.at("steps").fail("must be at least 1");
    out.steps = static_cast<int>(steps);
    if (c.has("root_state")) {
        const long r = c.at("root_state").integer();
        if (r < 1 || r > d) c.at("root_state").fail("must lie in 1.." + std::to_string(d));
        out.root_state = static_cast<int>(r - 1);
    }
    return out;
}

inline CoefficientSet read_coefficients(const Node& c, int n, int m, int d) {
    c.only({"b", "sigma", "f", "Phi"});
    const expr::Dims dims{n, m, d};
    const auto nn = static_cast<std::size_t>(n);
    const auto mm = static_cast<std::size_t>(m);
    const auto dd = static_cast<std::size_t>(d);
    const ExprList b = std::make_shared<const std::vector<expr::Expression>>(c.at("b").expressions(nn, dims, {}));
    const ExprList sigma =
        std::make_shared<const std::vector<expr::Expression>>(c.at("sigma").expression_matrix(nn, dd, dims, {}));
    const ExprList f = std::make_shared<const std::vector<expr::Expression>>(c.at("f").expressions(mm, dims, {}));
    const ExprList phi = std::make_shared<const std::vector<expr::Expression>>(
        c.at("Phi").expressions(mm, dims, expr::ParseOptions::terminal()));
    CoefficientSet out;
    out.n = n;
    out.m = m;
    out.d = d;
    const auto context = [](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        expr::EvalContext ctx;
        ctx.t = t;
        ctx.state = s;
        ctx.x = &x;
        ctx.y = &y;
        ctx.z = &z;
        return ctx;
    };
    out.b = [b, context](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return eval_list(b, context(t, s, x, y, z));
    };
    out.sigma = [sigma, context, n, d](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return eval_matrix(sigma, n, d, context(t, s, x, y, z));
    };
    out.f = [f, context](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        return eval_list(f, context(t, s, x, y, z));
    };
    out.Phi = [phi](int s, const Vector& x) {
        expr::EvalContext ctx;
        ctx.state = s;
        ctx.x = &x;
        return eval_list(phi, ctx);
    };
    return out;
}

inline Forcing read_forcing(const Node& c, int n, int m, int d) {
    c.only({"phi", "psi", "gamma", "xi"});
    const expr::Dims dims{n, m, d};
    Forcing out;
    const auto list = [&](const char* key, std::size_t size, const expr::ParseOptions& opt) {
        return std::make_shared<const std::vector<expr::Expression>>(c.at(key).expressions(size, dims, opt));
    };
    if (c.has("phi")) {
        const ExprList e = list("phi", static_cast<std::size_t>(n), expr::ParseOptions::forcing());
        out.phi = [e](double t, int s) {
            expr::EvalContext ctx;
            ctx.t = t;
            ctx.state = s;
            return eval_list(e, ctx);
        };
    }
    if (c.has("psi")) {
        const ExprList e = std::make_shared<const std::vector<expr::Expression>>(c.at("psi").expression_matrix(
            static_cast<std::size_t>(n), static_cast<std::size_t>(d), dims, expr::ParseOptions::forcing()));
        out.psi = [e, n, d](double t, int s) {
            expr::EvalContext ctx;
            ctx.t = t;
            ctx.state = s;
            return eval_matrix(e, n, d, ctx);
        };
    }
    if (c.has("gamma")) {
        const ExprList e = list("gamma", static_cast<std::size_t>(m), expr::ParseOptions::forcing());
        out.gamma = [e](double t, int s) {
            expr::EvalContext ctx;
            ctx.t = t;
            ctx.state = s;
            return eval_list(e, ctx);
        };
    }
    if (c.has("xi")) {
        const ExprList e = list("xi", static_cast<std::size_t>(m), expr::ParseOptions::terminal_forcing());
        out.xi = [e](int s) {
            expr::EvalContext ctx;
            ctx.state = s;
            return eval_list(e, ctx);
        };
    }
    return out;
}

inline ProblemConfig read_problem(const Node& c, int d) {
    c.only({"builtin", "n", "m", "G", "x0", "mode", "c2", "c2p", "lambda", "coefficients", "forcing"});
    ProblemConfig out;
    if (c.has("builtin")) {
        for (const char* key : {"n", "m", "G", "mode", "coefficients"})
            if (c.has(key)) c.at(key).fail("cannot be combined with a builtin problem");
        const Node b = c.at("builtin");
        b.only({"name", "params"});
        out.builtin = b.at("name").string();
        if (b.has("params")) {
            const Node p = b.at("params");
            p.only({"seed"});
            if (p.has("seed")) out.builtin_seed = p.at("seed").unsigned_integer();
        }
        BuiltinProblem bp;
        try {
            bp = make_builtin(out.builtin, d, out.builtin_seed);
        } catch (const ValidationError& e) {
            b.at("name").fail(e.what());
        }
        out.n = bp.coeffs.n;
        out.m = bp.coeffs.m;
        out.G = bp.G;
        out.mode = bp.mode;
        out.x0 = bp.x0;
        out.coeffs = bp.coeffs;
    } else {
        const long n = c.at("n").integer();
        const long m = c.at("m").integer();
        if (n < 1) c.at("n").fail("must be at least 1");
        if (m < 1) c.at("m").fail("must be at least 1");
        out.n = static_cast<int>(n);
        out.m = static_cast<int>(m);
        out.G = c.at("G").matrix(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
        if (c.has("mode")) {
            try {
                out.mode = parse_mode(c.at("mode").string());
            } catch (const ValidationError& e) {
                c.at("mode").fail(e.what());
            }
        }
        out.x0 = Vector::Zero(out.n);
        if (c.has("coefficients")) {
            out.coeffs = read_coefficients(c.at("coefficients"), out.n, out.m, d);
        } else {
            out.coeffs = zero_coefficients(out.n, out.m, d);
        }
    }
    try {
        GStructure check(out.G);
    } catch (const ValidationError& e) {
        if (c.has("G")) c.at("G").fail(e.what());
        c.fail(e.what());
    }
    if (c.has("x0")) out.x0 = c.at("x0").vector(static_cast<std::size_t>(out.n));
    if (c.has("c2")) out.c2 = c.at("c2").positive();
    if (c.has("c2p")) out.c2p = c.at("c2p").positive();
    if (c.has("lambda")) {
        out.lambda = c.at("lambda").number();
        if (out.lambda < 0.0) c.at("lambda").fail("must be nonnegative");
    }
    if (c.has("forcing")) out.forcing = read_forcing(c.at("forcing"), out.n, out.m, d);
    return out;
}

inline ContinuationConfig read_solver(const Node& c) {
    c.only({"delta", "delta_min", "grow", "shrink", "fast_sweeps", "tol", "max_sweeps", "relaxation",
            "relaxation_min", "residual_tol", "norm_weight", "inner_tol", "inner_max"});
    ContinuationConfig s;
    const auto num = [&](const char* key, double& slot) {
        if (c.has(key)) slot = c.at(key).number();
    };
    const auto integer = [&](const char* key, int& slot) {
        if (c.has(key)) slot = static_cast<int>(c.at(key).integer());
    };
    num("delta", s.delta);
    num("delta_min", s.delta_min);
    num("grow", s.grow);
    num("shrink", s.shrink);
    integer("fast_sweeps", s.fast_sweeps);
    num("tol", s.tol);
    integer("max_sweeps", s.max_sweeps);
    num("relaxation", s.relaxation);
    num("relaxation_min", s.relaxation_min);
    num("residual_tol", s.residual_tol);
    num("inner_tol", s.inner_tol);
    integer("inner_max", s.inner_max);
    if (c.has("norm_weight")) {
        const std::string w = c.at("norm_weight").string();
        if (w == "trace") {
            s.norm_weight = NormWeight::trace;
        } else if (w == "max_eigenvalue") {
            s.norm_weight = NormWeight::max_eigenvalue;
        } else {
            c.at("norm_weight").fail("expected 'trace' or 'max_eigenvalue'");
        }
    }
    try {
        s.validate();
    } catch (const ValidationError& e) {
        c.fail(e.what());
    }
    return s;
}

}  // namespace config_detail

/// Parses a configuration document.  Errors name the offending field path.
inline RunConfig parse_config(const nlohmann::json& doc) {
    const config_detail::Node root(doc, "config");
    root.only({"schema_version", "seed", "chain", "problem", "solver"});
    if (root.has("schema_version")) {
        const long v = root.at("schema_version").integer();
        if (v != kConfigSchemaVersion)
            root.at("schema_version").fail("unsupported version " + std::to_string(v));
    }
    RunConfig out;
    if (root.has("seed")) out.seed = root.at("seed").unsigned_integer();
    out.chain = config_detail::read_chain(root.at("chain"));
    out.problem = config_detail::read_problem(root.at("problem"), out.chain.d);
    if (root.has("solver")) out.solver = config_detail::read_solver(root.at("solver"));
    return out;
}

inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    return parse_config(doc);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace mcfbsde
