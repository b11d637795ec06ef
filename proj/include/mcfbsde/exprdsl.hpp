#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"

// Scalar expression language for coefficients:
//
//   expr    := term (('+' | '-') term)*
//   term    := power (('*' | '/') power)*
//   power   := unary ('^' unary)*
//   unary   := '-' unary | primary
//   primary := number | 't' | 's' | 'x[' int ']' | 'y[' int ']' | 'z[' int '][' int ']'
//            | name '(' expr (',' expr)* ')' | '(' expr ')'
//
// Indices are 1-based, as is the state variable s.

namespace mcfbsde::expr {

struct Dims {
    int n = 1;
    int m = 1;
    int d = 2;
};

/// Which variables an expression may reference.
struct ParseOptions {
    bool allow_t = true;
    bool allow_s = true;
    bool allow_x = true;
    bool allow_y = true;
    bool allow_z = true;
    int max_depth = 64;

    static ParseOptions terminal() { return {false, true, true, false, false, 64}; }
    static ParseOptions forcing() { return {true, true, false, false, false, 64}; }
    static ParseOptions terminal_forcing() { return {false, true, false, false, false, 64}; }
};

/// Source location: 1-based line and column of the first character, and
/// the byte range [begin, end) in the source.
struct Span {
    int line = 1;
    int column = 1;
    std::size_t begin = 0;
    std::size_t end = 0;
};

enum class Op { number, t, s, x, y, z, neg, add, sub, mul, div, pow, sin, cos, tanh, exp, abs, min, max };

struct Node {
    Op op = Op::number;
    double value = 0.0;  // literal value
    int i = 0;           // 0-based index for x, y, z (row)
    int j = 0;           // 0-based column for z
    int lhs = -1;        // child indices into the node pool
    int rhs = -1;
    Span span;
};

/// Values an expression is evaluated at.  `state` is 0-based; the
/// expression sees s = state + 1.
struct EvalContext {
    double t = 0.0;
    int state = 0;
    const Vector* x = nullptr;
    const Vector* y = nullptr;
    const Matrix* z = nullptr;
};

class Expression;
Expression parse(std::string_view source, const Dims& dims, const ParseOptions& options = {});

/// Immutable parsed expression; cheap to copy and safe to evaluate from
/// several threads.
class Expression {
public:
    Expression() = default;

    const std::string& source() const noexcept { return source_; }
    const Dims& dims() const noexcept { return dims_; }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    int root() const noexcept { return root_; }
    bool empty() const noexcept { return root_ < 0; }

    double evaluate(const EvalContext& ctx) const {
        if (root_ < 0) throw ExprError("empty expression", 1, 1);
        return eval(root_, ctx);
    }

    /// Depth of the syntax tree (a single leaf has depth 1).
    int depth() const { return root_ < 0 ? 0 : depth_of(root_); }

    /// Structural equality of the syntax trees (spans are ignored).
    bool same_tree(const Expression& other) const {
        if (root_ < 0 || other.root_ < 0) return root_ == other.root_;
        return equal(root_, other, other.root_);
    }

private:
    friend class Parser;

    std::string source_;
    Dims dims_;
    std::vector<Node> nodes_;
    int root_ = -1;

    [[noreturn]] void fail(const Node& nd, const std::string& what) const {
        const std::string text = source_.substr(nd.span.begin, nd.span.end - nd.span.begin);
        throw ExprError(what + " in '" + text + "'", nd.span.line, nd.span.column);
    }

    double checked(const Node& nd, double v) const {
        if (!std::isfinite(v)) fail(nd, "domain error");
        return v;
    }

    double eval(int k, const EvalContext& c) const {
        const Node& nd = nodes_[static_cast<std::size_t>(k)];
        switch (nd.op) {
            case Op::number: return nd.value;
            case Op::t: return c.t;
            case Op::s: return static_cast<double>(c.state + 1);
            case Op::x:
                if (!c.x || nd.i >= c.x->size()) fail(nd, "x is not available");
                return (*c.x)(nd.i);
            case Op::y:
                if (!c.y || nd.i >= c.y->size()) fail(nd, "y is not available");
                return (*c.y)(nd.i);
            case Op::z:
                if (!c.z || nd.i >= c.z->rows() || nd.j >= c.z->cols()) fail(nd, "z is not available");
                return (*c.z)(nd.i, nd.j);
            case Op::neg: return -eval(nd.lhs, c);
            case Op::add: return checked(nd, eval(nd.lhs, c) + eval(nd.rhs, c));
            case Op::sub: return checked(nd, eval(nd.lhs, c) - eval(nd.rhs, c));
            case Op::mul: return checked(nd, eval(nd.lhs, c) * eval(nd.rhs, c));
            case Op::div: {
                const double num = eval(nd.lhs, c);
                const double den = eval(nd.rhs, c);
                if (den == 0.0) fail(nd, "division by zero");
                return checked(nd, num / den);
            }
            case Op::pow: return checked(nd, std::pow(eval(nd.lhs, c), eval(nd.rhs, c)));
            case Op::sin: return checked(nd, std::sin(eval(nd.lhs, c)));
            case Op::cos: return checked(nd, std::cos(eval(nd.lhs, c)));
            case Op::tanh: return checked(nd, std::tanh(eval(nd.lhs, c)));
            case Op::exp: return checked(nd, std::exp(eval(nd.lhs, c)));
            case Op::abs: return std::abs(eval(nd.lhs, c));
            case Op::min: return std::min(eval(nd.lhs, c), eval(nd.rhs, c));
            case Op::max: return std::max(eval(nd.lhs, c), eval(nd.rhs, c));
        }
        fail(nd, "unknown operation");
    }

    int depth_of(int k) const {
        const Node& nd = nodes_[static_cast<std::size_t>(k)];
        int sub = 0;
        if (nd.lhs >= 0) sub = depth_of(nd.lhs);
        if (nd.rhs >= 0) sub = std::max(sub, depth_of(nd.rhs));
        return sub + 1;
    }

    bool equal(int a, const Expression& o, int b) const {
        const Node& p = nodes_[static_cast<std::size_t>(a)];
        const Node& q = o.nodes_[static_cast<std::size_t>(b)];
        if (p.op != q.op || p.i != q.i || p.j != q.j) return false;
        if (p.op == Op::number && p.value != q.value) return false;
        if ((p.lhs < 0) != (q.lhs < 0) || (p.rhs < 0) != (q.rhs < 0)) return false;
        if (p.lhs >= 0 && !equal(p.lhs, o, q.lhs)) return false;
        if (p.rhs >= 0 && !equal(p.rhs, o, q.rhs)) return false;
        return true;
    }
};

class Parser {
public:
    Parser(std::string_view src, const Dims& dims, const ParseOptions& opt) : src_(src), opt_(opt) {
        expr_.source_ = std::string(src);
        expr_.dims_ = dims;
    }

    Expression run() {
        skip_space();
        if (at_end()) error_here("empty expression");
        expr_.root_ = parse_expr(1);
        skip_space();
        if (!at_end()) error_here(std::string("unexpected '") + src_[pos_] + "'");
        return std::move(expr_);
    }

private:
    std::string_view src_;
    ParseOptions opt_;
    Expression expr_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;

    struct Mark {
        std::size_t pos;
        int line;
        int col;
    };

    bool at_end() const { return pos_ >= src_.size(); }
    char peek() const { return at_end() ? '\0' : src_[pos_]; }
    Mark mark() const { return {pos_, line_, col_}; }

    void advance() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    void skip_space() {
        while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r')) advance();
    }
    [[noreturn]] void error_at(const Mark& m, const std::string& what) const {
        throw ExprError(what, m.line, m.col);
    }
    [[noreturn]] void error_here(const std::string& what) const { error_at(mark(), what); }

    void expect(char c) {
        skip_space();
        if (peek() != c) {
            if (at_end()) error_here(std::string("expected '") + c + "' before end of input");
            error_here(std::string("expected '") + c + "', found '" + peek() + "'");
        }
        advance();
    }

    void check_depth(int depth) const {
        if (depth > opt_.max_depth)
            error_here("expression nesting exceeds depth " + std::to_string(opt_.max_depth));
    }

    int add(Node nd, const Mark& from) {
        nd.span.line = from.line;
        nd.span.column = from.col;
        nd.span.begin = from.pos;
        nd.span.end = pos_;
        expr_.nodes_.push_back(nd);
        return static_cast<int>(expr_.nodes_.size()) - 1;
    }

    int depth_of(int k) const { return expr_.depth_of(k); }

    int binary(Op op, int lhs, int rhs, const Mark& from, int depth) {
        Node nd;
        nd.op = op;
        nd.lhs = lhs;
        nd.rhs = rhs;
        const int k = add(nd, from);
        if (std::max(depth_of(lhs), depth_of(rhs)) + depth > opt_.max_depth)
            error_at(from, "expression nesting exceeds depth " + std::to_string(opt_.max_depth));
        return k;
    }

    int parse_expr(int depth) {
        check_depth(depth);
        skip_space();
        const Mark from = mark();
        int lhs = parse_term(depth);
        for (;;) {
            skip_space();
            const char c = peek();
            if (c != '+' && c != '-') return lhs;
            advance();
            const int rhs = parse_term(depth + 1);
            lhs = binary(c == '+' ? Op::add : Op::sub, lhs, rhs, from, depth);
        }
    }

    int parse_term(int depth) {
        check_depth(depth);
        skip_space();
        const Mark from = mark();
        int lhs = parse_power(depth);
        for (;;) {
            skip_space();
            const char c = peek();
            if (c != '*' && c != '/') return lhs;
            advance();
            const int rhs = parse_power(depth + 1);
            lhs = binary(c == '*' ? Op::mul : Op::div, lhs, rhs, from, depth);
        }
    }

    int parse_power(int depth) {
        check_depth(depth);
        skip_space();
        const Mark from = mark();
        int lhs = parse_unary(depth);
        for (;;) {
            skip_space();
            if (peek() != '^') return lhs;
            advance();
            const int rhs = parse_unary(depth + 1);
            lhs = binary(Op::pow, lhs, rhs, from, depth);
        }
    }

    int parse_unary(int depth) {
        check_depth(depth);
        skip_space();
        const Mark from = mark();
        if (peek() == '-') {
            advance();
            Node nd;
            nd.op = Op::neg;
            nd.lhs = parse_unary(depth + 1);
            return add(nd, from);
        }
        return parse_primary(depth);
    }

    /// Reads "[k]" and returns k as written (1-based, unchecked).
    long parse_index(const char* what) {
        expect('[');
        skip_space();
        const Mark at = mark();
        const std::size_t start = pos_;
        while (!at_end() && peek() >= '0' && peek() <= '9') advance();
        if (start == pos_) error_at(at, std::string("expected an index for ") + what);
        long v = 0;
        const auto res = std::from_chars(src_.data() + start, src_.data() + pos_, v);
        if (res.ec != std::errc()) error_at(at, "index is too large");
        expect(']');
        return v;
    }

    int parse_number(const Mark& from) {
        const std::size_t start = pos_;
        while (!at_end() && ((peek() >= '0' && peek() <= '9') || peek() == '.')) advance();
        if (peek() == 'e' || peek() == 'E') {
            advance();
            if (peek() == '+' || peek() == '-') advance();
            const std::size_t digits = pos_;
            while (!at_end() && peek() >= '0' && peek() <= '9') advance();
            if (digits == pos_) error_here("malformed exponent");
        }
        double v = 0.0;
        const auto res = std::from_chars(src_.data() + start, src_.data() + pos_, v);
        if (res.ec != std::errc() || res.ptr != src_.data() + pos_) error_at(from, "malformed number");
        if (!std::isfinite(v)) error_at(from, "number out of range");
        Node nd;
        nd.op = Op::number;
        nd.value = v;
        return add(nd, from);
    }

    int parse_primary(int depth) {
        skip_space();
        const Mark from = mark();
        if (at_end()) error_here("unexpected end of input");
        const char c = peek();
        if ((c >= '0' && c <= '9') || c == '.') return parse_number(from);
        if (c == '(') {
            advance();
            const int inner = parse_expr(depth + 1);
            expect(')');
            return inner;
        }
        if (!std::isalpha(static_cast<unsigned char>(c))) error_here(std::string("unexpected '") + c + "'");
        std::size_t start = pos_;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) advance();
        const std::string name(src_.substr(start, pos_ - start));
        const Dims& dm = expr_.dims_;
        const auto deny = [&](bool allowed) {
            if (!allowed) error_at(from, "variable '" + name + "' is not available here");
        };
        Node nd;
        if (name == "t") {
            deny(opt_.allow_t);
            nd.op = Op::t;
            return add(nd, from);
        }
        if (name == "s") {
            deny(opt_.allow_s);
            nd.op = Op::s;
            return add(nd, from);
        }
        if (name == "x" || name == "y") {
            deny(name == "x" ? opt_.allow_x : opt_.allow_y);
            nd.op = name == "x" ? Op::x : Op::y;
            const int limit = name == "x" ? dm.n : dm.m;
            const long k = parse_index(name.c_str());
            if (k < 1 || k > limit)
                error_at(from, name + "[" + std::to_string(k) + "] is out of range (1.." +
                                   std::to_string(limit) + ")");
            nd.i = static_cast<int>(k - 1);
            return add(nd, from);
        }
        if (name == "z") {
            deny(opt_.allow_z);
            nd.op = Op::z;
            const long r = parse_index("z row");
            const long c = parse_index("z column");
            if (r < 1 || r > dm.m || c < 1 || c > dm.d)
                error_at(from, "z[" + std::to_string(r) + "][" + std::to_string(c) +
                                   "] is out of range (1.." + std::to_string(dm.m) + ", 1.." +
                                   std::to_string(dm.d) + ")");
            nd.i = static_cast<int>(r - 1);
            nd.j = static_cast<int>(c - 1);
            return add(nd, from);
        }
        static const std::pair<const char*, Op> unary_fns[] = {
            {"sin", Op::sin}, {"cos", Op::cos}, {"tanh", Op::tanh}, {"exp", Op::exp}, {"abs", Op::abs}};
        static const std::pair<const char*, Op> binary_fns[] = {{"min", Op::min}, {"max", Op::max}, {"pow", Op::pow}};
        for (const auto& [fname, op] : unary_fns) {
            if (name != fname) continue;
            expect('(');
            nd.op = op;
            nd.lhs = parse_expr(depth + 1);
            expect(')');
            return add(nd, from);
        }
        for (const auto& [fname, op] : binary_fns) {
            if (name != fname) continue;
            expect('(');
            nd.op = op;
            nd.lhs = parse_expr(depth + 1);
            expect(',');
            nd.rhs = parse_expr(depth + 1);
            expect(')');
            return add(nd, from);
        }
        error_at(from, "unknown identifier '" + name + "'");
    }
};

inline Expression parse(std::string_view source, const Dims& dims, const ParseOptions& options) {
    if (dims.n < 1 || dims.m < 1 || dims.d < 1) throw ValidationError("expression dimensions must be positive");
    return Parser(source, dims, options).run();
}

namespace detail {

inline std::string number_text(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void print_node(const Expression& e, int k, std::string& out) {
    const Node& nd = e.nodes()[static_cast<std::size_t>(k)];
    const auto call = [&](const char* name) {
        out += name;
        out += '(';
        print_node(e, nd.lhs, out);
        if (nd.rhs >= 0) {
            out += ", ";
            print_node(e, nd.rhs, out);
        }
        out += ')';
    };
    const auto infix = [&](const char* sym) {
        out += '(';
        print_node(e, nd.lhs, out);
        out += sym;
        print_node(e, nd.rhs, out);
        out += ')';
    };
    switch (nd.op) {
        case Op::number: out += number_text(nd.value); break;
        case Op::t: out += 't'; break;
        case Op::s: out += 's'; break;
        case Op::x: out += "x[" + std::to_string(nd.i + 1) + "]"; break;
        case Op::y: out += "y[" + std::to_string(nd.i + 1) + "]"; break;
        case Op::z: out += "z[" + std::to_string(nd.i + 1) + "][" + std::to_string(nd.j + 1) + "]"; break;
        case Op::neg:
            out += "(-";
            print_node(e, nd.lhs, out);
            out += ')';
            break;
        case Op::add: infix(" + "); break;
        case Op::sub: infix(" - "); break;
        case Op::mul: infix(" * "); break;
        case Op::div: infix(" / "); break;
        case Op::pow: call("pow"); break;
        case Op::sin: call("sin"); break;
        case Op::cos: call("cos"); break;
        case Op::tanh: call("tanh"); break;
        case Op::exp: call("exp"); break;
        case Op::abs: call("abs"); break;
        case Op::min: call("min"); break;
        case Op::max: call("max"); break;
    }
}

}  // namespace detail

/// Fully parenthesized text that reparses to the same tree.
inline std::string print(const Expression& e) {
    std::string out;
    if (!e.empty()) detail::print_node(e, e.root(), out);
    return out;
}

}  // namespace mcfbsde::expr
