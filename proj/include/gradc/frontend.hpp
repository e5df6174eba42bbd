#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/error.hpp"
#include "gradc/ir.hpp"

namespace gradc {

// ---------------------------------------------------------------------------
// tokens

enum class TokenKind {
    Name,
    Float,
    Int,
    Keyword,
    Op,
    Newline,
    Indent,
    Dedent,
    End,
};

struct Token {
    TokenKind kind;
    std::string text;
    SourceLoc loc;
    double float_value = 0.0;
    std::int64_t int_value = 0;
};

std::vector<Token> tokenize(std::string_view source);

// ---------------------------------------------------------------------------
// syntax tree

enum class BinOp { Add, Sub, Mul, Div, Pow, Lt, Gt, Le, Ge, Eq, Ne };

const char* binop_name(BinOp op);

struct Expr;
struct Stmt;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum Kind { Float, Int, Bool, Name, Binary, Neg, Call, Tuple, Index, Lambda };

    Kind kind;
    SourceLoc loc;
    double float_value = 0.0;
    std::int64_t int_value = 0; // also the index of Index
    bool bool_value = false;
    std::string name;
    BinOp op = BinOp::Add;
    // Binary: lhs, rhs. Neg/Index: operand. Call: callee then arguments.
    // Tuple: items. Lambda: body.
    std::vector<ExprPtr> items;
    std::vector<std::string> params; // Lambda
};

struct FunctionDef {
    std::string name;
    std::vector<std::string> params;
    std::vector<Stmt> body;
    SourceLoc loc;
};

struct Stmt {
    enum Kind { Assign, Return, If, While, Def };

    Kind kind;
    SourceLoc loc;
    std::string name; // Assign target
    ExprPtr expr;     // Assign value, Return value, If/While condition
    std::vector<Stmt> body;
    std::vector<Stmt> orelse;
    bool has_else = false;
    std::shared_ptr<const FunctionDef> def;
};

struct Module {
    std::vector<std::shared_ptr<const FunctionDef>> functions;
};

Module parse(std::string_view source);

/// Prints the tree in constructor notation, e.g.
/// `FunctionDef("f", ["x"], [Assign("a", Pow(Name x, Lit 3)), Return(Name a)])`.
std::string format_ast(const Module& module);

// ---------------------------------------------------------------------------
// lowering

struct LoweredModule {
    std::map<std::string, GraphId> functions;
    std::vector<std::string> order; // definition order

    GraphId entry(const std::string& name) const;
};

LoweredModule lower(GraphStore& store, const Module& module);

/// Builtin functions visible in every scope unless shadowed.
const std::map<std::string, Primitive, std::less<>>& builtins();

} // namespace gradc
