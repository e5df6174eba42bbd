#include "gradc/primitives.hpp"

#include <array>

namespace gradc {

namespace {

constexpr std::array kPrimitives = {
    PrimitiveInfo{Primitive::Add, "add", 2, true},
    PrimitiveInfo{Primitive::Sub, "sub", 2, true},
    PrimitiveInfo{Primitive::Mul, "mul", 2, true},
    PrimitiveInfo{Primitive::Div, "div", 2, true},
    PrimitiveInfo{Primitive::Pow, "pow", 2, true},
    PrimitiveInfo{Primitive::Neg, "neg", 1, true},
    PrimitiveInfo{Primitive::Exp, "exp", 1, true},
    PrimitiveInfo{Primitive::Log, "log", 1, true},
    PrimitiveInfo{Primitive::Lt, "lt", 2, true},
    PrimitiveInfo{Primitive::Gt, "gt", 2, true},
    PrimitiveInfo{Primitive::Le, "le", 2, true},
    PrimitiveInfo{Primitive::Ge, "ge", 2, true},
    PrimitiveInfo{Primitive::Eq, "eq", 2, true},
    PrimitiveInfo{Primitive::Ne, "ne", 2, true},
    PrimitiveInfo{Primitive::Matmul, "matmul", 2, true},
    PrimitiveInfo{Primitive::Transpose, "transpose", 1, true},
    PrimitiveInfo{Primitive::ReduceSum, "reduce_sum", 1, true},
    PrimitiveInfo{Primitive::Distribute, "distribute", 2, true},
    PrimitiveInfo{Primitive::Shape, "shape", 1, true},
    PrimitiveInfo{Primitive::MakeTuple, "make_tuple", -1, true},
    PrimitiveInfo{Primitive::TupleGetItem, "tuple_getitem", 2, true},
    PrimitiveInfo{Primitive::TupleSetItem, "tuple_setitem", 3, true},
    PrimitiveInfo{Primitive::Switch, "switch", 3, true},
    PrimitiveInfo{Primitive::GAdd, "gadd", 2, true},
    PrimitiveInfo{Primitive::ZerosLike, "zeros_like", 1, true},
    PrimitiveInfo{Primitive::EnvGetItem, "env_getitem", 3, true},
    PrimitiveInfo{Primitive::EnvSetItem, "env_setitem", 3, true},
    PrimitiveInfo{Primitive::Grad, "grad", 1, false},
    PrimitiveInfo{Primitive::Dead, "dead", -1, false},
};

static_assert(kPrimitives.size() == static_cast<std::size_t>(Primitive::Dead) + 1);

} // namespace

const PrimitiveInfo& primitive_info(Primitive p) { return kPrimitives[static_cast<std::size_t>(p)]; }

std::string_view primitive_name(Primitive p) { return primitive_info(p).name; }

std::optional<Primitive> primitive_by_name(std::string_view name) {
    for (const auto& info : kPrimitives)
        if (info.name == name) return info.prim;
    return std::nullopt;
}

std::span<const PrimitiveInfo> all_primitives() { return kPrimitives; }

bool is_foldable(Primitive p) {
    switch (p) {
        case Primitive::Grad:
        case Primitive::Dead:
            return false;
        default:
            return true;
    }
}

} // namespace gradc
