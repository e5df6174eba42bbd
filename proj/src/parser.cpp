#include <fmt/core.h>

#include "gradc/frontend.hpp"
#include "gradc/value.hpp"

namespace gradc {

const char* binop_name(BinOp op) {
    switch (op) {
        case BinOp::Add: return "Add";
        case BinOp::Sub: return "Sub";
        case BinOp::Mul: return "Mul";
        case BinOp::Div: return "Div";
        case BinOp::Pow: return "Pow";
        case BinOp::Lt: return "Lt";
        case BinOp::Gt: return "Gt";
        case BinOp::Le: return "Le";
        case BinOp::Ge: return "Ge";
        case BinOp::Eq: return "Eq";
        case BinOp::Ne: return "Ne";
    }
    return "?";
}

namespace {

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    Module module() {
        Module m;
        skip_newlines();
        while (!at(TokenKind::End)) {
            if (!at_keyword("def")) error(peek(), "expected a function definition at top level");
            m.functions.push_back(function_def());
            skip_newlines();
        }
        return m;
    }

private:
    const Token& peek(std::size_t ahead = 0) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    bool at(TokenKind k) const { return peek().kind == k; }
    bool at_op(std::string_view o) const { return peek().kind == TokenKind::Op && peek().text == o; }
    bool at_keyword(std::string_view kw) const { return peek().kind == TokenKind::Keyword && peek().text == kw; }
    const Token& next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }

    [[noreturn]] static void error(const Token& at, const std::string& msg) { fail(Stage::Parse, msg, at.loc); }

    static std::string describe(const Token& t) {
        switch (t.kind) {
            case TokenKind::Newline: return "end of line";
            case TokenKind::Indent: return "indent";
            case TokenKind::Dedent: return "dedent";
            case TokenKind::End: return "end of input";
            default: return "'" + t.text + "'";
        }
    }

    void expect_op(std::string_view o) {
        if (!at_op(o)) error(peek(), fmt::format("expected '{}', found {}", o, describe(peek())));
        next();
    }

    std::string expect_name() {
        if (!at(TokenKind::Name)) error(peek(), fmt::format("expected a name, found {}", describe(peek())));
        return next().text;
    }

    void skip_newlines() {
        while (at(TokenKind::Newline)) next();
    }

    std::vector<std::string> params(std::string_view closer) {
        std::vector<std::string> out;
        while (!at_op(closer)) {
            const Token& t = peek();
            auto name = expect_name();
            for (const auto& p : out)
                if (p == name) error(t, fmt::format("duplicate parameter '{}'", name));
            out.push_back(name);
            if (!at_op(",")) break;
            next();
        }
        return out;
    }

    std::shared_ptr<const FunctionDef> function_def() {
        auto def = std::make_shared<FunctionDef>();
        def->loc = next().loc; // def
        def->name = expect_name();
        expect_op("(");
        def->params = params(")");
        expect_op(")");
        expect_op(":");
        def->body = block();
        return def;
    }

    std::vector<Stmt> block() {
        std::vector<Stmt> out;
        if (!at(TokenKind::Newline)) {
            out.push_back(simple_statement());
            if (!at(TokenKind::End)) {
                if (!at(TokenKind::Newline)) error(peek(), fmt::format("expected end of line, found {}", describe(peek())));
                next();
            }
            return out;
        }
        skip_newlines();
        if (!at(TokenKind::Indent)) error(peek(), "expected an indented block");
        next();
        while (!at(TokenKind::Dedent) && !at(TokenKind::End)) {
            out.push_back(statement());
            skip_newlines();
        }
        if (at(TokenKind::Dedent)) next();
        return out;
    }

    Stmt statement() {
        if (at_keyword("def")) {
            Stmt s{Stmt::Def, peek().loc};
            s.def = function_def();
            return s;
        }
        if (at_keyword("if")) return if_statement();
        if (at_keyword("while")) {
            Stmt s{Stmt::While, next().loc};
            s.expr = expression();
            expect_op(":");
            s.body = block();
            return s;
        }
        Stmt s = simple_statement();
        if (!at(TokenKind::Newline) && !at(TokenKind::End))
            error(peek(), fmt::format("expected end of line, found {}", describe(peek())));
        return s;
    }

    Stmt if_statement() {
        Stmt s{Stmt::If, next().loc}; // if / elif
        s.expr = expression();
        expect_op(":");
        s.body = block();
        skip_newlines();
        if (at_keyword("elif")) {
            s.has_else = true;
            s.orelse.push_back(if_statement());
        } else if (at_keyword("else")) {
            next();
            expect_op(":");
            s.has_else = true;
            s.orelse = block();
        }
        return s;
    }

    Stmt simple_statement() {
        if (at_keyword("return")) {
            Stmt s{Stmt::Return, next().loc};
            s.expr = expression_list();
            return s;
        }
        if (at_keyword("def") || at_keyword("if") || at_keyword("while"))
            error(peek(), fmt::format("'{}' must start its own line", peek().text));

        const Token& start = peek();
        ExprPtr target = expression_list();
        if (at_op("=")) {
            if (target->kind == Expr::Index)
                error(start, "forbidden statement: index assignment (x[i] = v) mutates a value");
            if (target->kind != Expr::Name) error(start, "only a single name can be assigned");
            next();
            Stmt s{Stmt::Assign, start.loc};
            s.name = target->name;
            s.expr = expression_list();
            if (at_op("=")) error(peek(), "chained assignment is not supported");
            return s;
        }
        for (std::string_view aug : {"+=", "-=", "*=", "/=", "**="})
            if (at_op(aug))
                error(start, fmt::format("forbidden statement: augmented assignment (x {} y) mutates a binding", aug));
        error(start, "expression statement has no effect in a pure program");
    }

    // `a, b` without parentheses builds a tuple, as after `return`.
    ExprPtr expression_list() {
        const Token& start = peek();
        ExprPtr first = expression();
        if (!at_op(",")) return first;
        auto tuple = std::make_shared<Expr>(Expr{Expr::Tuple, start.loc});
        tuple->items.push_back(first);
        while (at_op(",")) {
            next();
            if (at(TokenKind::Newline) || at_op("=") || at(TokenKind::End)) break;
            tuple->items.push_back(expression());
        }
        return tuple;
    }

    ExprPtr expression() {
        if (at_keyword("lambda")) {
            auto e = std::make_shared<Expr>(Expr{Expr::Lambda, next().loc});
            e->params = params(":");
            expect_op(":");
            e->items.push_back(expression());
            return e;
        }
        return comparison();
    }

    ExprPtr comparison() {
        ExprPtr lhs = arith();
        static const std::pair<std::string_view, BinOp> kCmp[] = {
            {"<", BinOp::Lt}, {">", BinOp::Gt}, {"<=", BinOp::Le}, {">=", BinOp::Ge}, {"==", BinOp::Eq}, {"!=", BinOp::Ne}};
        for (auto [text, op] : kCmp) {
            if (at_op(text)) {
                const Token& t = next();
                ExprPtr rhs = arith();
                for (auto [text2, op2] : kCmp)
                    if (at_op(text2)) error(peek(), "chained comparisons are not supported");
                return binary(op, lhs, rhs, t.loc);
            }
        }
        return lhs;
    }

    static ExprPtr binary(BinOp op, ExprPtr lhs, ExprPtr rhs, SourceLoc loc) {
        auto e = std::make_shared<Expr>(Expr{Expr::Binary, loc});
        e->op = op;
        e->items = {std::move(lhs), std::move(rhs)};
        return e;
    }

    ExprPtr arith() {
        ExprPtr lhs = term();
        while (at_op("+") || at_op("-")) {
            const Token& t = next();
            lhs = binary(t.text == "+" ? BinOp::Add : BinOp::Sub, lhs, term(), t.loc);
        }
        return lhs;
    }

    ExprPtr term() {
        ExprPtr lhs = unary();
        while (at_op("*") || at_op("/")) {
            const Token& t = next();
            lhs = binary(t.text == "*" ? BinOp::Mul : BinOp::Div, lhs, unary(), t.loc);
        }
        return lhs;
    }

    ExprPtr unary() {
        if (at_op("-")) {
            const Token& t = next();
            ExprPtr operand = unary();
            if (operand->kind == Expr::Float || operand->kind == Expr::Int) {
                auto folded = std::make_shared<Expr>(*operand);
                folded->loc = t.loc;
                folded->float_value = -folded->float_value;
                folded->int_value = -folded->int_value;
                return folded;
            }
            auto e = std::make_shared<Expr>(Expr{Expr::Neg, t.loc});
            e->items.push_back(operand);
            return e;
        }
        if (at_op("+")) {
            next();
            return unary();
        }
        return power();
    }

    // `**` binds tighter than a unary minus on its left and is right-associative.
    ExprPtr power() {
        ExprPtr base = postfix();
        if (at_op("**")) {
            const Token& t = next();
            return binary(BinOp::Pow, base, unary(), t.loc);
        }
        return base;
    }

    ExprPtr postfix() {
        ExprPtr e = atom();
        while (true) {
            if (at_op("(")) {
                auto call = std::make_shared<Expr>(Expr{Expr::Call, next().loc});
                call->items.push_back(e);
                while (!at_op(")")) {
                    call->items.push_back(expression());
                    if (!at_op(",")) break;
                    next();
                }
                expect_op(")");
                e = call;
            } else if (at_op("[")) {
                auto idx = std::make_shared<Expr>(Expr{Expr::Index, next().loc});
                if (!at(TokenKind::Int)) error(peek(), "tuple index must be a non-negative integer literal");
                idx->int_value = next().int_value;
                idx->items.push_back(e);
                expect_op("]");
                e = idx;
            } else {
                return e;
            }
        }
    }

    ExprPtr atom() {
        const Token& t = peek();
        switch (t.kind) {
            case TokenKind::Float: {
                auto e = std::make_shared<Expr>(Expr{Expr::Float, t.loc});
                e->float_value = next().float_value;
                return e;
            }
            case TokenKind::Int: {
                auto e = std::make_shared<Expr>(Expr{Expr::Int, t.loc});
                e->int_value = next().int_value;
                return e;
            }
            case TokenKind::Name: {
                auto e = std::make_shared<Expr>(Expr{Expr::Name, t.loc});
                e->name = next().text;
                return e;
            }
            case TokenKind::Keyword:
                if (t.text == "True" || t.text == "true" || t.text == "False" || t.text == "false") {
                    auto e = std::make_shared<Expr>(Expr{Expr::Bool, t.loc});
                    e->bool_value = t.text == "True" || t.text == "true";
                    next();
                    return e;
                }
                if (t.text == "lambda") return expression();
                break;
            case TokenKind::Op:
                if (t.text == "(") {
                    next();
                    if (at_op(")")) {
                        next();
                        return std::make_shared<Expr>(Expr{Expr::Tuple, t.loc});
                    }
                    ExprPtr first = expression();
                    if (at_op(")")) {
                        next();
                        return first;
                    }
                    auto tuple = std::make_shared<Expr>(Expr{Expr::Tuple, t.loc});
                    tuple->items.push_back(first);
                    while (at_op(",")) {
                        next();
                        if (at_op(")")) break;
                        tuple->items.push_back(expression());
                    }
                    expect_op(")");
                    return tuple;
                }
                break;
            default: break;
        }
        error(t, fmt::format("unexpected {}", describe(t)));
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// printing

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

std::string format_names(const std::vector<std::string>& names) {
    std::string out = "[";
    for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ", " : "") + quoted(names[i]);
    return out + "]";
}

std::string format_expr(const Expr& e);

std::string format_exprs(const std::vector<ExprPtr>& items, std::size_t from = 0) {
    std::string out;
    for (std::size_t i = from; i < items.size(); ++i) out += (i > from ? ", " : "") + format_expr(*items[i]);
    return out;
}

std::string format_expr(const Expr& e) {
    switch (e.kind) {
        case Expr::Float: return "Lit " + format_float(e.float_value);
        case Expr::Int: return fmt::format("Lit {}", e.int_value);
        case Expr::Bool: return e.bool_value ? "Lit True" : "Lit False";
        case Expr::Name: return "Name " + e.name;
        case Expr::Binary:
            return fmt::format("{}({}, {})", binop_name(e.op), format_expr(*e.items[0]), format_expr(*e.items[1]));
        case Expr::Neg: return "Neg(" + format_expr(*e.items[0]) + ")";
        case Expr::Call: return "Call(" + format_expr(*e.items[0]) + ", [" + format_exprs(e.items, 1) + "])";
        case Expr::Tuple: return "Tuple([" + format_exprs(e.items) + "])";
        case Expr::Index: return fmt::format("Index({}, {})", format_expr(*e.items[0]), e.int_value);
        case Expr::Lambda: return "Lambda(" + format_names(e.params) + ", " + format_expr(*e.items[0]) + ")";
    }
    return "?";
}

std::string format_def(const FunctionDef& def);

std::string format_stmts(const std::vector<Stmt>& body) {
    std::string out = "[";
    for (std::size_t i = 0; i < body.size(); ++i) {
        const Stmt& s = body[i];
        if (i) out += ", ";
        switch (s.kind) {
            case Stmt::Assign: out += "Assign(" + quoted(s.name) + ", " + format_expr(*s.expr) + ")"; break;
            case Stmt::Return: out += "Return(" + format_expr(*s.expr) + ")"; break;
            case Stmt::If:
                out += "If(" + format_expr(*s.expr) + ", " + format_stmts(s.body);
                if (s.has_else) out += ", " + format_stmts(s.orelse);
                out += ")";
                break;
            case Stmt::While: out += "While(" + format_expr(*s.expr) + ", " + format_stmts(s.body) + ")"; break;
            case Stmt::Def: out += format_def(*s.def); break;
        }
    }
    return out + "]";
}

std::string format_def(const FunctionDef& def) {
    return "FunctionDef(" + quoted(def.name) + ", " + format_names(def.params) + ", " + format_stmts(def.body) + ")";
}

} // namespace

Module parse(std::string_view source) { return Parser(tokenize(source)).module(); }

std::string format_ast(const Module& module) {
    std::string out;
    for (const auto& f : module.functions) out += format_def(*f) + "\n";
    return out;
}

} // namespace gradc
