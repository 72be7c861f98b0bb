#include "emtgis/expression.hpp"
#include "emtgis/error.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <string>

namespace emtgis {

namespace {

using Node = std::shared_ptr<const Expression>;
using Op = Expression::Op;

Node make(Op op, std::vector<Node> args = {}, double value = 0.0) {
    return std::make_shared<const Expression>(op, value, std::move(args));
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Node parse_all() {
        Node n = expr();
        skip_ws();
        if (pos_ != text_.size()) {
            fail("unexpected trailing input");
        }
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorCode::ParseError,
                    "expression '" + std::string(text_) + "': " + what + " at offset " +
                        std::to_string(pos_));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            ++pos_;
        }
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) {
            fail(std::string("expected '") + c + "'");
        }
    }

    Node expr() {
        Node lhs = term();
        for (;;) {
            if (accept('+')) {
                lhs = make(Op::Add, {lhs, term()});
            } else if (accept('-')) {
                lhs = make(Op::Sub, {lhs, term()});
            } else {
                return lhs;
            }
        }
    }

    Node term() {
        Node lhs = unary();
        for (;;) {
            if (accept('*')) {
                lhs = make(Op::Mul, {lhs, unary()});
            } else if (accept('/')) {
                lhs = make(Op::Div, {lhs, unary()});
            } else {
                return lhs;
            }
        }
    }

    Node unary() {
        if (accept('-')) {
            return make(Op::Neg, {unary()});
        }
        if (accept('+')) {
            return unary();
        }
        return power();
    }

    Node power() {
        Node base = atom();
        if (accept('^')) {
            return make(Op::Pow, {base, unary()});
        }
        return base;
    }

    std::string_view identifier() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
            ++pos_;
        }
        return text_.substr(start, pos_ - start);
    }

    Node atom() {
        skip_ws();
        if (pos_ >= text_.size()) {
            fail("unexpected end of input");
        }
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            Node inner = expr();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            return number();
        }
        const std::string_view name = identifier();
        if (name == "V") {
            return make(Op::VarV);
        }
        if (name == "theta") {
            return make(Op::VarTheta);
        }
        if (name == "sin" || name == "cos") {
            expect('(');
            Node arg = expr();
            expect(')');
            return make(name == "sin" ? Op::Sin : Op::Cos, {arg});
        }
        if (name == "pow") {
            expect('(');
            Node a = expr();
            expect(',');
            Node b = expr();
            expect(')');
            return make(Op::Pow, {a, b});
        }
        fail(name.empty() ? std::string("unexpected character") : "unknown identifier '" + std::string(name) + "'");
    }

    Node number() {
        const char* first = text_.data() + pos_;
        const char* last = text_.data() + text_.size();
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc()) {
            fail("malformed number");
        }
        pos_ += static_cast<std::size_t>(ptr - first);
        return make(Op::Literal, {}, value);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

std::shared_ptr<const Expression> Expression::parse(std::string_view text) {
    return Parser(text).parse_all();
}

double Expression::evaluate(double v, double theta) const {
    auto arg = [&](std::size_t i) { return args_[i]->evaluate(v, theta); };
    switch (op_) {
    case Op::Literal: return value_;
    case Op::VarV: return v;
    case Op::VarTheta: return theta;
    case Op::Add: return arg(0) + arg(1);
    case Op::Sub: return arg(0) - arg(1);
    case Op::Mul: return arg(0) * arg(1);
    case Op::Div: return arg(0) / arg(1);
    case Op::Pow: return std::pow(arg(0), arg(1));
    case Op::Neg: return -arg(0);
    case Op::Sin: return std::sin(arg(0));
    case Op::Cos: return std::cos(arg(0));
    }
    return 0.0;
}

}  // namespace emtgis
