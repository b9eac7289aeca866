#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/io.hpp"

namespace scaleqsd {

class ExprDomainError : public Error {
public:
    using Error::Error;
};

/**
 * Coefficient expression in one variable x.
 *
 *   expr    := term (('+' | '-') term)*
 *   term    := unary (('*' | '/') unary)*
 *   unary   := ('-' | '+') unary | power
 *   power   := primary ('^' unary)?          right associative
 *   primary := number | 'x' | func '(' expr ')' | '(' expr ')'
 *   func    := exp | log | sin | cos | sinh | cosh | sqrt | abs
 *
 * Unary minus binds looser than '^', so "-x^3" is -(x^3).
 */
class CoefficientExpr {
public:
    enum class Op { Number, Var, Neg, Add, Sub, Mul, Div, Pow, Exp, Log, Sin, Cos, Sinh, Cosh, Sqrt, Abs };

    struct Node {
        Op op;
        double value = 0.0;
        int lhs = -1;
        int rhs = -1;
    };

    static CoefficientExpr parse(std::string_view text) {
        CoefficientExpr e;
        e.source_ = std::string(text);
        Parser p{text, 0, e.nodes_};
        e.root_ = p.parse_expr();
        p.skip_ws();
        if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
        return e;
    }

    const std::string& source() const noexcept { return source_; }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    int root() const noexcept { return root_; }

    // Throws ExprDomainError on log/sqrt of invalid arguments, division by
    // zero or a non-finite result.
    double operator()(double x) const {
        double v = eval(root_, x);
        if (!std::isfinite(v)) domain("non-finite value", x);
        return v;
    }

    // Samples on every node; domain errors name the offending node.
    std::vector<double> sample(const Grid& grid) const {
        std::vector<double> out(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            try {
                out[i] = (*this)(grid[i]);
            } catch (const ExprDomainError& err) {
                throw ExprDomainError("cli", std::string(err.what()) + " at node " + std::to_string(i));
            }
        }
        return out;
    }

private:
    struct Parser {
        std::string_view s;
        std::size_t pos;
        std::vector<Node>& nodes;

        [[noreturn]] void fail(const std::string& msg) const {
            throw InvalidArgument("cli", "expression error at column " + std::to_string(pos + 1) + ": " + msg);
        }
        void skip_ws() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool eat(char c) {
            skip_ws();
            if (pos < s.size() && s[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        }
        int add(Node n) {
            nodes.push_back(n);
            return static_cast<int>(nodes.size() - 1);
        }
        int parse_expr() {
            int lhs = parse_term();
            for (;;) {
                if (eat('+')) lhs = add({Op::Add, 0.0, lhs, parse_term()});
                else if (eat('-')) lhs = add({Op::Sub, 0.0, lhs, parse_term()});
                else return lhs;
            }
        }
        int parse_term() {
            int lhs = parse_unary();
            for (;;) {
                if (eat('*')) lhs = add({Op::Mul, 0.0, lhs, parse_unary()});
                else if (eat('/')) lhs = add({Op::Div, 0.0, lhs, parse_unary()});
                else return lhs;
            }
        }
        int parse_unary() {
            if (eat('-')) return add({Op::Neg, 0.0, parse_unary(), -1});
            if (eat('+')) return parse_unary();
            return parse_power();
        }
        int parse_power() {
            int base = parse_primary();
            if (eat('^')) return add({Op::Pow, 0.0, base, parse_unary()});
            return base;
        }
        int parse_primary() {
            skip_ws();
            if (pos >= s.size()) fail("unexpected end of expression");
            char c = s[pos];
            if (c == '(') {
                ++pos;
                int inner = parse_expr();
                if (!eat(')')) fail("expected ')'");
                return inner;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                std::size_t start = pos;
                while (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.')) ++pos;
                if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
                    std::size_t save = pos;
                    ++pos;
                    if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) ++pos;
                    if (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
                    } else {
                        pos = save;
                    }
                }
                double v = 0.0;
                try {
                    v = io::parse_double(s.substr(start, pos - start));
                } catch (const Error&) {
                    fail("malformed number");
                }
                return add({Op::Number, v, -1, -1});
            }
            if (std::isalpha(static_cast<unsigned char>(c))) {
                std::size_t start = pos;
                while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos]))) ++pos;
                std::string_view name = s.substr(start, pos - start);
                if (name == "x") return add({Op::Var, 0.0, -1, -1});
                Op op;
                if (name == "exp") op = Op::Exp;
                else if (name == "log") op = Op::Log;
                else if (name == "sin") op = Op::Sin;
                else if (name == "cos") op = Op::Cos;
                else if (name == "sinh") op = Op::Sinh;
                else if (name == "cosh") op = Op::Cosh;
                else if (name == "sqrt") op = Op::Sqrt;
                else if (name == "abs") op = Op::Abs;
                else {
                    pos = start;
                    fail("unknown identifier '" + std::string(name) + "'");
                }
                if (!eat('(')) fail("expected '(' after function name");
                int arg = parse_expr();
                if (!eat(')')) fail("expected ')'");
                return add({op, 0.0, arg, -1});
            }
            fail("unexpected '" + std::string(1, c) + "'");
        }
    };

    [[noreturn]] static void domain(const std::string& what, double x) {
        throw ExprDomainError("cli", what + " at x=" + io::format_double(x));
    }

    double eval(int idx, double x) const {
        const Node& n = nodes_[static_cast<std::size_t>(idx)];
        switch (n.op) {
            case Op::Number: return n.value;
            case Op::Var: return x;
            case Op::Neg: return -eval(n.lhs, x);
            case Op::Add: return eval(n.lhs, x) + eval(n.rhs, x);
            case Op::Sub: return eval(n.lhs, x) - eval(n.rhs, x);
            case Op::Mul: return eval(n.lhs, x) * eval(n.rhs, x);
            case Op::Div: {
                double d = eval(n.rhs, x);
                if (d == 0.0) domain("division by zero", x);
                return eval(n.lhs, x) / d;
            }
            case Op::Pow: {
                double b = eval(n.lhs, x), e = eval(n.rhs, x);
                if (b < 0.0 && e != std::floor(e)) domain("fractional power of a negative number", x);
                if (b == 0.0 && e < 0.0) domain("negative power of zero", x);
                return std::pow(b, e);
            }
            case Op::Exp: return std::exp(eval(n.lhs, x));
            case Op::Log: {
                double a = eval(n.lhs, x);
                if (a <= 0.0) domain("log of a non-positive number", x);
                return std::log(a);
            }
            case Op::Sin: return std::sin(eval(n.lhs, x));
            case Op::Cos: return std::cos(eval(n.lhs, x));
            case Op::Sinh: return std::sinh(eval(n.lhs, x));
            case Op::Cosh: return std::cosh(eval(n.lhs, x));
            case Op::Sqrt: {
                double a = eval(n.lhs, x);
                if (a < 0.0) domain("sqrt of a negative number", x);
                return std::sqrt(a);
            }
            case Op::Abs: return std::abs(eval(n.lhs, x));
        }
        return 0.0;
    }

    std::string source_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace scaleqsd
