#pragma once

// Scalar expressions in (x1..xn, z, p1..pn) for config-defined coefficients.
//
// Grammar (precedence from loosest to tightest):
//
//   expr    := term   (('+' | '-') term)*
//   term    := unary  (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?           right associative
//   primary := number | identifier | identifier '(' args ')' | '(' expr ')'
//
// Identifiers: x1..xn, z, p1..pn, the constant pi. Functions: sin, cos, exp,
// log, sqrt, abs (one argument), min, max (two arguments).
//
// Variables are bound through an environment of length 2n+1 laid out as
// [x1..xn, z, p1..pn].

#include "pma/error.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pma::expr {

enum class NodeKind { constant, variable, add, sub, mul, div, pow, neg, call };

enum class Func { sin, cos, exp, log, sqrt, abs, min, max };

struct Node {
    NodeKind kind = NodeKind::constant;
    double value = 0.0;     // constant
    int var = -1;           // variable slot in the environment
    Func func = Func::sin;  // call
    std::vector<std::shared_ptr<const Node>> args;
    std::size_t offset = 0; // byte offset in the source
};

using NodePtr = std::shared_ptr<const Node>;

/// Index of a variable in the evaluation environment.
inline int x_var(int i) { return i; }           // 0-based axis
inline int z_var(int n) { return n; }
inline int p_var(int n, int l) { return n + 1 + l; }

inline std::string variable_name(int var, int n) {
    if (var < n) return "x" + std::to_string(var + 1);
    if (var == n) return "z";
    return "p" + std::to_string(var - n);
}

/// Immutable parsed expression.
class Expr {
public:
    Expr() = default;
    Expr(NodePtr root, int n, std::string source) : root_(std::move(root)), n_(n), source_(std::move(source)) {}

    const Node& root() const { return *root_; }
    int dimension() const { return n_; }
    std::size_t env_size() const { return static_cast<std::size_t>(2 * n_ + 1); }
    const std::string& source() const { return source_; }
    bool valid() const { return root_ != nullptr; }

    bool uses(int var) const { return uses(*root_, var); }
    bool uses_z() const { return uses(z_var(n_)); }
    bool uses_p() const {
        for (int l = 0; l < n_; ++l)
            if (uses(p_var(n_, l))) return true;
        return false;
    }

private:
    static bool uses(const Node& node, int var) {
        if (node.kind == NodeKind::variable) return node.var == var;
        for (const auto& a : node.args)
            if (uses(*a, var)) return true;
        return false;
    }

    NodePtr root_;
    int n_ = 0;
    std::string source_;
};

namespace detail {

class Parser {
public:
    Parser(std::string_view text, int n) : text_(text), n_(n) {}

    NodePtr parse() {
        skip_ws();
        if (pos_ >= text_.size()) throw Error::at_offset(ErrorCode::syntax_error, pos_, "empty expression");
        auto node = parse_expr();
        skip_ws();
        if (pos_ < text_.size())
            throw Error::at_offset(ErrorCode::syntax_error, pos_, std::string("unexpected '") + text_[pos_] + "'");
        return node;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    static NodePtr make(NodeKind kind, std::size_t offset, std::vector<NodePtr> args) {
        auto node = std::make_shared<Node>();
        node->kind = kind;
        node->offset = offset;
        node->args = std::move(args);
        return node;
    }

    NodePtr parse_expr() {
        auto lhs = parse_term();
        while (true) {
            skip_ws();
            const std::size_t at = pos_;
            if (accept('+')) lhs = make(NodeKind::add, at, {lhs, parse_term()});
            else if (accept('-')) lhs = make(NodeKind::sub, at, {lhs, parse_term()});
            else return lhs;
        }
    }

    NodePtr parse_term() {
        auto lhs = parse_unary();
        while (true) {
            skip_ws();
            const std::size_t at = pos_;
            if (accept('*')) lhs = make(NodeKind::mul, at, {lhs, parse_unary()});
            else if (accept('/')) lhs = make(NodeKind::div, at, {lhs, parse_unary()});
            else return lhs;
        }
    }

    NodePtr parse_unary() {
        skip_ws();
        const std::size_t at = pos_;
        if (accept('-')) return make(NodeKind::neg, at, {parse_unary()});
        return parse_power();
    }

    NodePtr parse_power() {
        auto base = parse_primary();
        skip_ws();
        const std::size_t at = pos_;
        if (accept('^')) return make(NodeKind::pow, at, {base, parse_unary()});
        return base;
    }

    NodePtr parse_primary() {
        skip_ws();
        const std::size_t at = pos_;
        if (pos_ >= text_.size()) throw Error::at_offset(ErrorCode::syntax_error, pos_, "unexpected end of input");
        const char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
        if (accept('(')) {
            auto inner = parse_expr();
            if (!accept(')')) throw Error::at_offset(ErrorCode::syntax_error, pos_, "expected ')'");
            return inner;
        }
        throw Error::at_offset(ErrorCode::syntax_error, at, std::string("unexpected '") + c + "'");
    }

    NodePtr parse_number() {
        const std::size_t at = pos_;
        std::size_t end = pos_;
        while (end < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.')) ++end;
        if (end < text_.size() && (text_[end] == 'e' || text_[end] == 'E')) {
            std::size_t e = end + 1;
            if (e < text_.size() && (text_[e] == '+' || text_[e] == '-')) ++e;
            if (e < text_.size() && std::isdigit(static_cast<unsigned char>(text_[e]))) {
                while (e < text_.size() && std::isdigit(static_cast<unsigned char>(text_[e]))) ++e;
                end = e;
            }
        }
        const std::string lit(text_.substr(at, end - at));
        char* stop = nullptr;
        const double v = std::strtod(lit.c_str(), &stop);
        if (stop != lit.c_str() + lit.size())
            throw Error::at_offset(ErrorCode::syntax_error, at, "malformed number '" + lit + "'");
        pos_ = end;
        auto node = std::make_shared<Node>();
        node->kind = NodeKind::constant;
        node->value = v;
        node->offset = at;
        return node;
    }

    NodePtr parse_identifier() {
        const std::size_t at = pos_;
        std::size_t end = pos_;
        while (end < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) ++end;
        const std::string name(text_.substr(at, end - at));
        pos_ = end;
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '(') return parse_call(name, at);

        auto node = std::make_shared<Node>();
        node->offset = at;
        if (name == "pi") {
            node->kind = NodeKind::constant;
            node->value = std::numbers::pi;
            return node;
        }
        node->kind = NodeKind::variable;
        node->var = variable_index(name, at);
        return node;
    }

    int variable_index(const std::string& name, std::size_t at) const {
        if (name == "z") return z_var(n_);
        if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'p')) {
            bool digits = true;
            for (std::size_t i = 1; i < name.size(); ++i) digits = digits && std::isdigit(static_cast<unsigned char>(name[i]));
            if (digits && name[1] != '0') {
                const int k = std::stoi(name.substr(1));
                if (k >= 1 && k <= n_) return name[0] == 'x' ? x_var(k - 1) : p_var(n_, k - 1);
            }
        }
        throw Error::at_offset(ErrorCode::unknown_identifier, at, "unknown identifier '" + name + "'");
    }

    NodePtr parse_call(const std::string& name, std::size_t at) {
        struct Entry { const char* name; Func f; int arity; };
        static constexpr Entry table[] = {
            {"sin", Func::sin, 1},   {"cos", Func::cos, 1}, {"exp", Func::exp, 1}, {"log", Func::log, 1},
            {"sqrt", Func::sqrt, 1}, {"abs", Func::abs, 1}, {"min", Func::min, 2}, {"max", Func::max, 2},
        };
        const Entry* entry = nullptr;
        for (const auto& e : table)
            if (name == e.name) entry = &e;
        if (!entry) throw Error::at_offset(ErrorCode::unknown_identifier, at, "unknown function '" + name + "'");

        accept('(');
        std::vector<NodePtr> args;
        if (!accept(')')) {
            do {
                args.push_back(parse_expr());
            } while (accept(','));
            if (!accept(')')) throw Error::at_offset(ErrorCode::syntax_error, pos_, "expected ')' or ','");
        }
        if (static_cast<int>(args.size()) != entry->arity)
            throw Error::at_offset(ErrorCode::arity_mismatch, at,
                                   name + " takes " + std::to_string(entry->arity) + " argument(s), got " +
                                       std::to_string(args.size()));
        auto node = std::make_shared<Node>();
        node->kind = NodeKind::call;
        node->func = entry->f;
        node->offset = at;
        node->args = std::move(args);
        return node;
    }

    std::string_view text_;
    int n_;
    std::size_t pos_ = 0;
};

inline double eval_node(const Node& node, std::span<const double> env) {
    auto arg = [&](std::size_t i) { return eval_node(*node.args[i], env); };
    auto domain = [&](const char* what) -> double {
        throw Error::at_offset(ErrorCode::domain_error, node.offset, what);
    };
    switch (node.kind) {
    case NodeKind::constant: return node.value;
    case NodeKind::variable: return env[static_cast<std::size_t>(node.var)];
    case NodeKind::add: return arg(0) + arg(1);
    case NodeKind::sub: return arg(0) - arg(1);
    case NodeKind::mul: return arg(0) * arg(1);
    case NodeKind::div: {
        const double num = arg(0);
        const double den = arg(1);
        if (den == 0.0) return domain("division by zero");
        return num / den;
    }
    case NodeKind::pow: {
        const double r = std::pow(arg(0), arg(1));
        if (std::isnan(r)) return domain("power undefined");
        return r;
    }
    case NodeKind::neg: return -arg(0);
    case NodeKind::call: {
        const double a = arg(0);
        switch (node.func) {
        case Func::sin: return std::sin(a);
        case Func::cos: return std::cos(a);
        case Func::exp: return std::exp(a);
        case Func::log:
            if (!(a > 0.0)) return domain("log of non-positive value");
            return std::log(a);
        case Func::sqrt:
            if (a < 0.0) return domain("sqrt of negative value");
            return std::sqrt(a);
        case Func::abs: return std::abs(a);
        case Func::min: return std::min(a, arg(1));
        case Func::max: return std::max(a, arg(1));
        }
    }
    }
    return 0.0;
}

inline const char* func_name(Func f) {
    switch (f) {
    case Func::sin: return "sin";
    case Func::cos: return "cos";
    case Func::exp: return "exp";
    case Func::log: return "log";
    case Func::sqrt: return "sqrt";
    case Func::abs: return "abs";
    case Func::min: return "min";
    case Func::max: return "max";
    }
    return "?";
}

inline void render_node(const Node& node, int n, std::string& out) {
    auto binary = [&](const char* op) {
        out += '(';
        render_node(*node.args[0], n, out);
        out += op;
        render_node(*node.args[1], n, out);
        out += ')';
    };
    switch (node.kind) {
    case NodeKind::constant: {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", node.value);
        out += buf;
        return;
    }
    case NodeKind::variable: out += variable_name(node.var, n); return;
    case NodeKind::add: binary(" + "); return;
    case NodeKind::sub: binary(" - "); return;
    case NodeKind::mul: binary(" * "); return;
    case NodeKind::div: binary(" / "); return;
    case NodeKind::pow: binary("^"); return;
    case NodeKind::neg:
        out += "(-";
        render_node(*node.args[0], n, out);
        out += ')';
        return;
    case NodeKind::call:
        out += func_name(node.func);
        out += '(';
        for (std::size_t i = 0; i < node.args.size(); ++i) {
            if (i) out += ", ";
            render_node(*node.args[i], n, out);
        }
        out += ')';
        return;
    }
}

inline bool equivalent_nodes(const Node& a, const Node& b) {
    if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
    switch (a.kind) {
    case NodeKind::constant:
        if (a.value != b.value) return false;
        break;
    case NodeKind::variable:
        if (a.var != b.var) return false;
        break;
    case NodeKind::call:
        if (a.func != b.func) return false;
        break;
    default: break;
    }
    for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!equivalent_nodes(*a.args[i], *b.args[i])) return false;
    return true;
}

} // namespace detail

/// Parses text for dimension n. Errors carry the byte offset.
inline Expr parse(std::string_view text, int n) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "expression dimension must be >= 1");
    detail::Parser parser(text, n);
    return Expr(parser.parse(), n, std::string(text));
}

inline double eval(const Expr& e, std::span<const double> env) {
    if (env.size() < e.env_size())
        throw Error(ErrorCode::dimension_mismatch, "environment too short for expression '" + e.source() + "'");
    return detail::eval_node(e.root(), env);
}

/// Fully parenthesized text that parses back to an equivalent tree.
inline std::string render(const Expr& e) {
    std::string out;
    detail::render_node(e.root(), e.dimension(), out);
    return out;
}

/// Structural equality (constants compared exactly).
inline bool equivalent(const Expr& a, const Expr& b) {
    return a.dimension() == b.dimension() && detail::equivalent_nodes(a.root(), b.root());
}

/// Central difference in one environment slot; h <= 0 selects the default
/// step 1e-6 (1 + |env[var]|). Returns exactly 0 for unused variables.
inline double partial(const Expr& e, int var, std::span<const double> env, double h = -1.0) {
    if (!e.uses(var)) return 0.0;
    std::vector<double> probe(env.begin(), env.end());
    const double x0 = probe[static_cast<std::size_t>(var)];
    if (h <= 0.0) h = 1e-6 * (1.0 + std::abs(x0));
    probe[static_cast<std::size_t>(var)] = x0 + h;
    const double fp = eval(e, probe);
    probe[static_cast<std::size_t>(var)] = x0 - h;
    const double fm = eval(e, probe);
    return (fp - fm) / (2.0 * h);
}

} // namespace pma::expr
