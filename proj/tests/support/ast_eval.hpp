#pragma once

#include <span>
#include <string_view>

#include "gradc/frontend.hpp"
#include "gradc/value.hpp"

namespace gradc::testing {

/// Reference evaluator that walks the syntax tree directly, sharing no code
/// with lowering or the interpreter. Supports plain data, closures and the
/// tensor builtins; `grad` is not available.
Value eval_ast(const Module& module, std::string_view fn, std::span<const Value> args);

} // namespace gradc::testing
