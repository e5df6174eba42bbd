#pragma once

#include <optional>
#include <span>
#include <string_view>

namespace gradc {

enum class Primitive {
    // arithmetic, elementwise on equal shapes
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Exp,
    Log,
    // comparisons
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    // tensors
    Matmul,
    Transpose,
    ReduceSum,
    Distribute,
    Shape,
    // structure
    MakeTuple,
    TupleGetItem,
    TupleSetItem,
    Switch,
    // sensitivity algebra
    GAdd,
    ZerosLike,
    EnvGetItem,
    EnvSetItem,
    // higher order
    Grad,
    // placeholder for function values that are never called
    Dead,
};

struct PrimitiveInfo {
    Primitive prim;
    std::string_view name;
    int arity; // -1 for variadic
    bool differentiable;
};

const PrimitiveInfo& primitive_info(Primitive p);
std::string_view primitive_name(Primitive p);
std::optional<Primitive> primitive_by_name(std::string_view name);
std::span<const PrimitiveInfo> all_primitives();

/// Primitives whose result depends only on their inputs and can be
/// evaluated at compile time when all inputs are known.
bool is_foldable(Primitive p);

} // namespace gradc
