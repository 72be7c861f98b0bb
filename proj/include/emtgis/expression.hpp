#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace emtgis {

/// Expression tree for scripted GRBC responses. Grammar:
///
///   expr   := term (('+' | '-') term)*
///   term   := unary (('*' | '/') unary)*
///   unary  := '-' unary | power
///   power  := atom ('^' unary)?
///   atom   := number | 'V' | 'theta' | fn '(' expr (',' expr)? ')' | '(' expr ')'
///   fn     := 'sin' | 'cos' | 'pow'
class Expression {
public:
    enum class Op { Literal, VarV, VarTheta, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos };

    static std::shared_ptr<const Expression> parse(std::string_view text);

    [[nodiscard]] double evaluate(double v, double theta) const;
    [[nodiscard]] Op op() const noexcept { return op_; }

    Expression(Op op, double value, std::vector<std::shared_ptr<const Expression>> args)
        : op_(op), value_(value), args_(std::move(args)) {}

private:
    Op op_;
    double value_;
    std::vector<std::shared_ptr<const Expression>> args_;
};

}  // namespace emtgis
